//! Error type shared by every module in the crate.

use num_complex::Complex64;
use thiserror::Error;

use crate::power_alloc::KktState;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    /// A block, tap vector, or weight matrix has a length that does not fit
    /// the operation (mismatched sizes, empty input, odd bit count, ...).
    #[error("invalid length: {0}")]
    InvalidLength(String),

    /// A tap or tone index points outside the valid range.
    #[error("index {index} out of range: {what} has {len} entries")]
    IndexError {
        what: &'static str,
        index: usize,
        len: usize,
    },

    /// The cyclic prefix is shorter than the channel memory, so the
    /// transmission would not be circular over the block.
    #[error(
        "cyclic prefix of {l_cp} samples cannot absorb a channel with {required} samples of memory"
    )]
    CpTooShort { l_cp: usize, required: usize },

    /// A sample handed to the demodulator is not a constellation point.
    #[error("not a constellation point at the declared power: {0}")]
    InvalidSymbol(Complex64),

    /// The feedback design system is too ill-conditioned to solve reliably.
    #[error("feedback design system is numerically singular (condition estimate {cond:.3e})")]
    SingularSystem { cond: f64 },

    /// The power-allocation fixed point was not reached within the iteration
    /// budget. The last iterate is carried along so callers can inspect it or
    /// fall back to it.
    #[error("power allocation did not converge within {} iterations", .0.iterations)]
    NonConvergence(Box<KktState>),

    /// A simulation configuration failed validation.
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
