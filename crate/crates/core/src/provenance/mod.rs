//! Metadata capture and the record archive.
//!
//! Every successful benchmark job leaves one [`BenchmarkRecord`]: the
//! resolved configuration that drove it, its parameter combination, its raw
//! output files and a [`MetadataSnapshot`] of the machine and environment.
//! Records get sortable ids (`20261016T120000Z-7K3M0Q`), are checksummed on
//! the way in and verified on the way out, and can be selected with
//! conjunctive filters such as `metadata.machine=mock-A config.run.nodes>=2`.

mod archive;
mod id;
pub(crate) mod metadata;
mod query;

pub use archive::{Archive, ArchiveError, BenchmarkRecord, NewRecord, MANIFEST_FILE};
pub use id::{is_record_id, new_record_id};
pub use metadata::{collect_metadata, ExecutionContext, MetadataSnapshot, COLLECTOR_VERSION, UNKNOWN};
pub use query::{Op, Predicate, RecordFilter, NAMESPACES};
