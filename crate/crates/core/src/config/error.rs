use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("failed to read {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{source_name}: parse error: {message}")]
    Parse { source_name: String, message: String },
    #[error("{document}: duplicate key {path}")]
    DuplicateKey { document: String, path: String },
    #[error("{source_name}: document is empty")]
    EmptyDocument { source_name: String },
    #[error("{document}: invalid key `{key}`")]
    InvalidKey { document: String, key: String },
    #[error("{source_name}: invalid value for `{key}`: {message}")]
    InvalidValue { source_name: String, key: String, message: String },
    #[error("document `{child}` extends `{parent}`, which is not in the repository")]
    MissingAncestor { child: String, parent: String },
    #[error("inheritance cycle: {}", chain.join(" -> "))]
    InheritanceCycle { chain: Vec<String> },
    #[error("inheritance chain of `{leaf}` exceeds the depth limit of {limit}")]
    DepthLimitExceeded { leaf: String, limit: usize },
    #[error("two documents are named `{name}`")]
    DuplicateDocument { name: String },
    #[error("schema `{schema}`: required key `{key}` is missing")]
    MissingRequired { schema: String, key: String },
    #[error("`{key}`: expected {expected}, found {found} (set by `{document}`)")]
    KindMismatch { key: String, expected: String, found: String, document: String },
    #[error("parameter axis `{key}` has no values")]
    EmptyAxis { key: String },
    #[error("parameter axis `{key}` mixes value kinds")]
    HeterogeneousAxis { key: String },
    #[error("{count} parameter axes exceed the limit of {limit}")]
    TooManyAxes { count: usize, limit: usize },
    #[error("cannot compare configs with different schemas (`{left}` vs `{right}`)")]
    SchemaMismatch { left: String, right: String },
}
