use thiserror::Error;

/// Errors raised by the approximation pipeline and its building blocks.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("unknown weight index (j={j}, l={l})")]
    UnknownIndex { j: usize, l: usize },

    #[error("point {point:?} lies outside the declared domain")]
    OutsideDomain { point: Vec<f64> },

    #[error("derivative order {requested} exceeds available order {available}")]
    OrderExceeded { requested: usize, available: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("geometry error: {0}")]
    Geometry(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("quadrature did not converge: last change {last_change:e} above tolerance {tol:e}")]
    QuadratureConvergence { last_change: f64, tol: f64 },

    #[error("required cover radius {required:e} is below grid resolution {resolution:e}")]
    Resolution { required: f64, resolution: f64 },

    #[error("partition defect: bump sum vanishes at {point:?}")]
    CoverDefect { point: Vec<f64> },

    #[error("cut-off criterion failed in search region; best tail value {best:e} >= {target:e}")]
    CriterionFailure { best: f64, target: f64 },

    #[error("regularization did not reach {target:e} up to n={n_max}; achieved {achieved:e}")]
    ConvergenceFailure {
        achieved: f64,
        target: f64,
        n_max: usize,
    },

    #[error("empty region: {0}")]
    EmptyRegion(String),

    #[error("expression error: {0}")]
    Expression(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(String),

    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }

    /// Innermost error once stage tags are peeled off.
    pub fn root(&self) -> &Error {
        match self {
            Error::Stage { source, .. } => source.root(),
            e => e,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
