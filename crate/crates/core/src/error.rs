use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got} ({what})")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{what} is not symmetric positive definite (smallest eigenvalue {eigenvalue:e}, floor {floor:e})")]
    NotPositiveDefinite {
        what: &'static str,
        eigenvalue: f64,
        floor: f64,
    },

    #[error("{what} is not symmetric (max |M - Mᵀ| = {asymmetry:e})")]
    NotSymmetric { what: &'static str, asymmetry: f64 },

    #[error("mixing measure has no atoms")]
    EmptyMeasure,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("{family}({m}) is not known exactly (known: {bound}); supply an explicit value")]
    UnsupportedOrder {
        family: &'static str,
        m: usize,
        bound: &'static str,
    },

    #[error("component {component} received total responsibility {mass:e}{}", iteration.map(|i| format!(" at EM iteration {i}")).unwrap_or_default())]
    DegenerateComponent {
        component: usize,
        mass: f64,
        iteration: Option<usize>,
    },

    #[error("unknown model preset '{0}' (expected model1..model4)")]
    UnknownPreset(String),

    #[error("{0}")]
    Unsupported(String),

    #[error("malformed input: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// Errors caused by the numbers themselves, as opposed to I/O or malformed files.
    pub fn is_domain(&self) -> bool {
        !matches!(self, Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Parse(_))
    }
}
