use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A scalar argument fell outside the range the formula is defined on.
    #[error("{name} = {value} is outside its domain ({expected})")]
    Domain {
        name: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The harvesting constraint does not change sign across the multiplier bracket.
    #[error(
        "multiplier bracket [{lo:e}, {hi:e}] does not straddle xi = {target}: \
         constraint spans [{value_lo}, {value_hi}]"
    )]
    Bracket {
        lo: f64,
        hi: f64,
        target: f64,
        value_lo: f64,
        value_hi: f64,
    },

    #[error("bisection stalled after {iterations} iterations with residual {residual:e} (tolerance {tol:e})")]
    NoConvergence {
        iterations: usize,
        residual: f64,
        tol: f64,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn domain(name: &'static str, value: f64, expected: &'static str) -> Self {
        Error::Domain {
            name,
            value,
            expected,
        }
    }

    /// Process exit status used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Domain { .. } | Error::InvalidConfig(_) => 1,
            Error::Bracket { .. } | Error::NoConvergence { .. } => 2,
            Error::Io { .. } => 3,
        }
    }
}
