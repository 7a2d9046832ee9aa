use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid scan settings: {0}")]
    InvalidSettings(String),

    #[error("frame geometry: {0}")]
    Geometry(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    Length { expected: usize, actual: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("frequency grids differ")]
    GridMismatch,

    #[error("frames were acquired with different settings ({0} vs {1})")]
    MixedSettings(String, String),

    #[error("depth index {index} out of range (0..{count})")]
    DepthIndex { index: usize, count: usize },

    #[error("invalid filter design: {0}")]
    FilterDesign(String),

    #[error("frequency {0} MHz outside [0, Nyquist]")]
    FrequencyRange(f64),

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dataset needs at least one example of each class, found classes {0:?}")]
    SingleClass(alloc::vec::Vec<usize>),
}

pub type Result<T> = core::result::Result<T, Error>;
