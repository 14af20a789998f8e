use std::path::PathBuf;

use chrono::NaiveDate;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("unsupported downsample: {src_rows}x{src_cols} -> {dst_rows}x{dst_cols}")]
    UnsupportedDownsample {
        src_rows: usize,
        src_cols: usize,
        dst_rows: usize,
        dst_cols: usize,
    },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("degenerate channel {channel}: standard deviation is zero")]
    DegenerateChannel { channel: usize },

    #[error("incompatible initialization: {0}")]
    InitIncompatibility(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no counted cells: {0}")]
    Empty(String),

    #[error("divergence in layer {layer}: {detail}")]
    Divergence { layer: usize, detail: String },

    #[error("dates out of order: {0}")]
    Ordering(String),

    #[error("date alignment failed, missing days: {}", format_dates(.missing))]
    Alignment { missing: Vec<NaiveDate> },

    #[error("collinear regressors: column {column} is linearly dependent")]
    Collinearity { column: usize },

    #[error("sign test undefined: every pair is a tie")]
    UndefinedTest,

    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic {
        path: PathBuf,
        found: [u8; 4],
        expected: [u8; 4],
    },

    #[error("{path}: unsupported format version {version}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("{path}: truncated file ({detail})")]
    Truncated { path: PathBuf, detail: String },

    #[error("{path}: corrupt file ({detail})")]
    Corrupt { path: PathBuf, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Wraps a divergence error with the training position where it happened.
    pub fn with_step(self, epoch: usize, step: usize) -> Self {
        match self {
            Error::Divergence { layer, detail } => Error::Divergence {
                layer,
                detail: format!("{detail} (epoch {epoch}, step {step})"),
            },
            other => other,
        }
    }
}

fn format_dates(dates: &[NaiveDate]) -> String {
    dates
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join(", ")
}
