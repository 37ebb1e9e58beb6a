use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("truncated voxel data: expected {expected} bytes, found {found}")]
    TruncatedData { expected: usize, found: usize },

    #[error("unsupported dimensionality: dim[0] = {0}, only 3D volumes are accepted")]
    UnsupportedDimensionality(i16),

    #[error("non-canonical orientation: {0}")]
    NonCanonicalOrientation(String),

    #[error("invalid volume: {0}")]
    InvalidVolume(String),

    #[error("label value {value} at voxel {index} is not a known category")]
    InvalidLabel { index: usize, value: f64 },

    #[error("schema violation at `{field}`: {message}")]
    SchemaViolation { field: String, message: String },

    #[error("relation {index} references missing object id {id}")]
    DanglingRelation { index: usize, id: u32 },

    #[error("segmentation grounding requested but object {0} has no mask and no label map was given")]
    MissingMask(u32),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("dataset has no usable cases: {0}")]
    EmptyDataset(String),

    #[error("infeasible phantom configuration: {0}")]
    InfeasibleConfig(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("case {case}: {source}")]
    Case {
        case: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::SchemaViolation {
            field: field.into(),
            message: message.into(),
        }
    }

    /// Attach a case id to an error.
    pub fn in_case(self, case: impl Into<String>) -> Self {
        Error::Case {
            case: case.into(),
            source: Box::new(self),
        }
    }
}
