use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("pixel exceeds bit depth: value {value} does not fit in {bit_depth} bits")]
    PixelExceedsBitDepth { value: u32, bit_depth: u8 },
    #[error("unsupported bit depth {0} (expected 8..=16)")]
    BitDepth(u8),
    #[error("buffer holds {len} values but {width}x{height} were declared")]
    Dimensions { width: usize, height: usize, len: usize },
    #[error("window width must be positive, got {0}")]
    WindowWidth(f64),
    #[error("missing window metadata")]
    MissingWindow,
    #[error("zero-variance image cannot be z-score normalized")]
    ZeroVariance,
    #[error("value {0} lies outside [0, 1]")]
    OutOfUnitRange(f64),
    #[error("curve coefficient {value} at iteration {index} lies outside [-1, 1]")]
    CoefficientRange { index: usize, value: f64 },
    #[error("a curve needs at least one iteration")]
    EmptyCurve,
    #[error("target curve must map 0 to 0 and 1 to 1")]
    TargetFixedPoints,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("backward called before forward")]
    NoForwardCache,
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid shift profile: {0}")]
    InvalidProfile(String),
    #[error("discriminator is not frozen; freeze it before training the enhancer")]
    NotFrozen,
    #[error("parameters of a frozen model cannot be updated")]
    Frozen,
    #[error("perceptual tap {tap} is beyond the stack depth {depth}")]
    TapIndex { tap: usize, depth: usize },
    #[error("reference pool is empty")]
    EmptyReferencePool,
    #[error("training diverged at epoch {epoch}, step {step}: non-finite loss")]
    Diverged { epoch: usize, step: usize },
    #[error("training data must contain at least two classes")]
    SingleClass,
    #[error("no samples")]
    Empty,
    #[error("fold {0} has no samples")]
    EmptyFold(usize),
}
