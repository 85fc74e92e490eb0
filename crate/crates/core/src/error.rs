use thiserror::Error;

/// Errors raised anywhere in the reconstruction pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("channel pairing error: {0} channels cannot be split into real/imaginary pairs")]
    ChannelPairing(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("index out of range: {0}")]
    Index(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("coverage error: no network for slice {slice}, coil {coil}")]
    Coverage { slice: usize, coil: usize },
    #[error("group error: {0}")]
    Group(String),
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}
