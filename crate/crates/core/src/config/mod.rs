//! Hierarchical benchmark configuration.
//!
//! A benchmark is described by a chain of TOML documents. Each document names
//! its parent with `extends`; resolution walks up to the base document and
//! folds the chain back down, so every document only states what it changes.
//! Nested tables merge key by key, lists are replaced wholesale, and the string
//! `"__delete__"` removes an inherited key. The resolved form is a flat map of
//! dotted key paths that records which document supplied each value.
//!
//! List-valued keys under `experiment.axes` span the parameter space; see
//! [`expand_parameter_space`].

mod document;
mod error;
mod resolve;
mod schema;
mod space;
mod value;

pub use document::{
    load_document, load_document_file, ConfigDocument, Leaf, Role, DELETE_SENTINEL, EXTENDS_KEY, NAME_KEY,
    ROLES_KEY,
};
pub use error::ConfigError;
pub use resolve::{
    diff, resolve, resolve_chain, resolve_with_depth, ConfigDelta, ConfigRepository, ResolvedConfig,
    DEFAULT_MAX_DEPTH,
};
pub use schema::{FieldRule, Schema};
pub use space::{
    axes, cartesian, expand_parameter_space, expand_with_limit, ParameterAxis, ParameterCombination,
    AXES_PREFIX, DEFAULT_MAX_AXES,
};
pub use value::{Entry, EntryKind, Scalar, ScalarKind, Value};
