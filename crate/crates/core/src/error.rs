use thiserror::Error;

/// Errors raised by the numerical core.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid model specification: {0}")]
    InvalidSpec(String),

    #[error("kernel is singular at t = 0 for the rough model")]
    KernelSingularity,

    #[error("quadrature did not converge: achieved error estimate {achieved:e} > tolerance {tolerance:e}")]
    QuadratureNonConvergence { achieved: f64, tolerance: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("price {price} violates the {bound} no-arbitrage bound {value}")]
    NoImpliedVol {
        price: f64,
        bound: BoundKind,
        value: f64,
    },

    #[error("t = {t} is beyond the forward variance curve support (last knot {last})")]
    OutOfSupport { t: f64, last: f64 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("calendar arbitrage: nonpositive forward variance {value} on bucket [{t_start}, {t_end})")]
    CalendarArbitrage { t_start: f64, t_end: f64, value: f64 },

    #[error("missing quote at maturity {maturity}, log-moneyness {log_moneyness}")]
    MissingQuote { maturity: f64, log_moneyness: f64 },

    #[error("empty index set")]
    EmptyIndexSet,

    #[error("nonpositive skew {value} at maturity {maturity}")]
    NonPositiveSkew { maturity: f64, value: f64 },

    #[error("degenerate regression: {0}")]
    DegenerateRegression(String),

    #[error("chain error: {0}")]
    Chain(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    /// Stable machine-readable name of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidSpec(_) => "invalid_spec",
            Error::KernelSingularity => "kernel_singularity",
            Error::QuadratureNonConvergence { .. } => "quadrature_non_convergence",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::NoImpliedVol { .. } => "no_implied_vol",
            Error::OutOfSupport { .. } => "out_of_support",
            Error::InsufficientData(_) => "insufficient_data",
            Error::CalendarArbitrage { .. } => "calendar_arbitrage",
            Error::MissingQuote { .. } => "missing_quote",
            Error::EmptyIndexSet => "empty_index_set",
            Error::NonPositiveSkew { .. } => "nonpositive_skew",
            Error::DegenerateRegression(_) => "degenerate_regression",
            Error::Chain(_) => "chain",
            Error::Io(_) => "io",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    Lower,
    Upper,
}

impl std::fmt::Display for BoundKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BoundKind::Lower => write!(f, "lower"),
            BoundKind::Upper => write!(f, "upper"),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
