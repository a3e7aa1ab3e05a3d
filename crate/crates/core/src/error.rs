//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A field of a spec or an option is out of its documented range.
    #[error("invalid `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("degenerate coupling on qubit {index}: {reason}")]
    DegenerateCoupling { index: usize, reason: String },

    #[error("ill-conditioned chain: zero pivot at mode {index}")]
    SingularPivot { index: usize },

    #[error("cooperativity recursion divides by zero at stage {stage}")]
    ZeroDownstreamRate { stage: usize },

    /// The response has several maxima above half height; no scalar FWHM.
    #[error("response has {} maxima above half height (at {peaks:?} rad/s)", peaks.len())]
    MultiPeak { peaks: Vec<f64> },

    #[error("no bandwidth: {0}")]
    NoBandwidth(String),

    #[error("detuning grid too coarse: spacing {spacing:.3e} rad/s, need <= {required:.3e} rad/s")]
    InsufficientResolution { spacing: f64, required: f64 },

    #[error("time step {dt:.3e} s too coarse, need <= {required:.3e} s")]
    StepTooCoarse { dt: f64, required: f64 },

    #[error("integrator failed at t = {t:.6e} s: {reason}")]
    Integration { t: f64, reason: String },

    #[error("majority decoding needs an odd qubit count, got {n}")]
    EvenMajority { n: usize },

    #[error("degenerate readout: {0}")]
    DegenerateReadout(String),

    #[error("benchmark fit refused: {0}")]
    Benchmark(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("undefined sensitivity: efficiency is zero")]
    ZeroEfficiency,
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig { field: field.into(), reason: reason.into() }
    }
}
