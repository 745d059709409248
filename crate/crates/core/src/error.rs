use thiserror::Error;

pub type Result<T> = std::result::Result<T, FracmagError>;

#[derive(Debug, Error)]
pub enum FracmagError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("kernel is singular at coincident points {0:?}")]
    Singularity([f64; 3]),

    #[error("point {point:?} lies outside the tabulation box")]
    OutOfBox { point: [f64; 3] },

    #[error("operation not supported for {0} potentials")]
    UnsupportedKind(&'static str),

    #[error("invalid quadrature policy: {0}")]
    Policy(String),

    #[error("fields live on different grids")]
    GridMismatch,

    #[error("node {0} is not interior; the symmetric-difference form needs a full stencil")]
    NotInterior(usize),

    #[error("dichotomy split supports overlap: R_n = {r_n} < 4 * R_bar = {}", 4.0 * r_bar)]
    SupportOverlap { r_bar: f64, r_n: f64 },

    #[error("translation {0:?} is not a whole number of cells")]
    NonLatticeShift([f64; 3]),

    #[error("field collapsed to zero")]
    ZeroField,

    #[error("calibration residual {residual:.3e} exceeds {limit:.3e}; enlarge the box")]
    CalibrationResidual { residual: f64, limit: f64 },

    #[error("format error at byte {offset}: {message}")]
    Format { offset: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl FracmagError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        FracmagError::Domain(msg.into())
    }
}
