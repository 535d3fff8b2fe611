use thiserror::Error;

/// Errors produced while building certificates, kernels and bound curves.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument fell outside the domain of a function.
    #[error("domain error in {function}: {detail}")]
    Domain {
        function: &'static str,
        detail: String,
    },

    /// A certificate failed one of its defining inequalities.
    #[error("certificate rejected: {invariant} ({detail})")]
    Certificate { invariant: String, detail: String },

    /// A configuration value is outside its admissible range.
    #[error("invalid configuration: {invariant} ({detail})")]
    Config { invariant: String, detail: String },

    /// The M_U scan did not terminate before the hard cap.
    #[error("M_U scan did not terminate within {cap} terms; the rate is not subgeometric for these constants")]
    NonTermination { cap: usize },

    #[error("no one-step minorisation on C = {{0..={x0}}}: column minima sum to zero")]
    NoMinorisation { x0: usize },

    #[error("minorisation violated at x = {x}, y = {y}: P(x,y) - eps*nu(y) = {excess:e}")]
    MinorisationViolation { x: usize, y: usize, excess: f64 },

    #[error("kernel is not irreducible: state {state} is not mutually reachable with state 0")]
    Reducible { state: usize },

    #[error("invalid kernel: {0}")]
    Kernel(String),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("bound curve fails to dominate the exact distance at n = {n}: bound {bound:e} < exact {exact:e}")]
    Dominance { n: usize, bound: f64, exact: f64 },
}

impl Error {
    pub(crate) fn certificate(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Certificate {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn config(invariant: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Config {
            invariant: invariant.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn domain(function: &'static str, detail: impl Into<String>) -> Self {
        Error::Domain {
            function,
            detail: detail.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
