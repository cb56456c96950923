use core::fmt;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A parameter violated its domain; `name` is the offending parameter.
    InvalidParameter {
        name: &'static str,
        reason: &'static str,
    },
    /// An evaluation point fell outside `[0, l]`.
    OutOfDomain { x: f64 },
    /// A field does not have the mode count of the basis it is used with.
    BasisMismatch { expected: usize, found: usize },
    /// A solver produced NaN or infinity; the realization is abandoned.
    NonFinite { time: f64 },
    /// Two trajectories were compared on different time grids.
    GridMismatch,
    EmptySample,
    TooFewSamples { needed: usize, found: usize },
    /// A rate fit was asked for a non-positive error statistic.
    DegenerateFit,
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter { name, reason } => {
                write!(f, "invalid parameter `{name}`: {reason}")
            }
            Error::OutOfDomain { x } => write!(f, "evaluation point {x} lies outside [0, l]"),
            Error::BasisMismatch { expected, found } => {
                write!(f, "field has {found} modes, basis has {expected}")
            }
            Error::NonFinite { time } => write!(f, "non-finite state at t = {time}"),
            Error::GridMismatch => f.write_str("trajectories have different time grids"),
            Error::EmptySample => f.write_str("empty sample"),
            Error::TooFewSamples { needed, found } => {
                write!(f, "need at least {needed} samples, got {found}")
            }
            Error::DegenerateFit => {
                f.write_str("rate fit needs strictly positive error statistics")
            }
        }
    }
}

impl core::error::Error for Error {}

pub(crate) fn require(cond: bool, name: &'static str, reason: &'static str) -> Result<()> {
    if cond {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason })
    }
}
