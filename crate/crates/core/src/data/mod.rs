//! Dataset ingestion, encoding, splitting and generation.

mod dataset;
mod encode;
pub mod fetch;
mod schema;
mod split;
mod synthetic;

use std::path::Path;

use thiserror::Error;

pub use dataset::{is_missing, load_csv, read_csv, TabularDataset};
pub use encode::{encode, fit_encoder, EncodedMatrix, Encoder, EncoderBlock};
pub use fetch::{fetch_dataset, Benchmark, FetchOptions, FetchOutcome, FetchSource};
pub use schema::{ColumnKind, ColumnRole, ColumnSpec, Schema};
pub use split::{stratified_split, SplitFractions, SplitIndices};
pub use synthetic::{make_synthetic, synthetic_schema, SyntheticSpec, PROXY_COLUMN, SIGNAL_COLUMN};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("column `{0}` not found")]
    MissingColumn(String),
    #[error("column `{column}` row {row}: value `{value}` is not in the declared mapping")]
    UnmappableValue {
        column: String,
        row: usize,
        value: String,
    },
    #[error("column `{column}` row {row}: `{value}` is not a finite number")]
    InvalidNumber {
        column: String,
        row: usize,
        value: String,
    },
    #[error("row {row} has {found} fields, schema has {expected}")]
    RowLength {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("dataset has no usable rows")]
    EmptyDataset,
    #[error("encoder fit set is empty")]
    EmptyFitSet,
    #[error("row index {index} out of range for {n} rows")]
    IndexOutOfRange { index: usize, n: usize },
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("split fractions {0:?} must be positive and sum to 1")]
    InvalidFractions([f64; 3]),
    #[error("invalid synthetic spec: {0}")]
    InvalidSynthetic(String),
    #[error("unknown dataset `{0}` (known: adult, german, compas, crime)")]
    UnknownDataset(String),
    #[error("network error: {0}")]
    Network(String),
    #[error("checksum mismatch for {file}: expected {expected}, got {actual}")]
    ChecksumMismatch {
        file: String,
        expected: String,
        actual: String,
    },
    #[error("cannot normalize raw data: {0}")]
    Normalize(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(String),
}

impl DataError {
    pub(crate) fn io(path: &Path, err: std::io::Error) -> Self {
        DataError::Io(format!("{}: {err}", path.display()))
    }
}
