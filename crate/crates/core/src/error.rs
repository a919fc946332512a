use thiserror::Error;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("mode {mode:?} outside the retained band of an N={size} grid")]
    ModeOutsideGrid { mode: [i64; 3], size: usize },
    #[error("mode {0:?} specified twice (directly or through its reflection)")]
    DuplicateMode([i64; 3]),
    #[error("zero mode must have a real amplitude, got imaginary part {0:e}")]
    ComplexMean(f64),
    #[error("grids or ranks do not match: {0}")]
    Mismatch(String),
    #[error("field must be mean-zero, zero-mode magnitude {0:e}")]
    NonzeroMean(f64),
    #[error("velocity field is not divergence-free: relative residual {0:e}")]
    NotDivergenceFree(f64),
}

#[derive(Debug, Error)]
pub enum NoiseError {
    #[error("noise support is empty")]
    EmptySupport,
    #[error("noise support contains the zero wavevector")]
    SupportContainsZero,
    #[error("noise support is not closed under negation: {0:?} has no mirror")]
    SupportNotSymmetric([i64; 3]),
    #[error("coefficient support is not contained in the basis support at {0:?}")]
    SupportMismatch([i64; 3]),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Field(#[from] FieldError),
    #[error(transparent)]
    Noise(#[from] NoiseError),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("blow-up detected at step {step} (t = {time}): {what} = {value:e}")]
    BlowUp {
        step: usize,
        time: f64,
        what: &'static str,
        value: f64,
    },
    #[error("divergence residual {residual:e} above tolerance after projection at step {step}")]
    DivergenceResidual { step: usize, residual: f64 },
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Io(#[from] std::io::Error),
    #[error("config parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("config invariant violated at `{field}`: {message}")]
    Invariant { field: String, message: String },
}
