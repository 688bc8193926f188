use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("non-finite {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("lattice {dims:?} has {sites} sites, too small for {populations} populations")]
    LatticeTooSmall {
        dims: [usize; 3],
        sites: usize,
        populations: usize,
    },

    #[error("current injected into unknown population {index} (reservoir has {count})")]
    UnknownPopulation { index: usize, count: usize },

    #[error("readout {readout} diverged to {value:.1} deg at t = {time_s:.3} s")]
    Diverged {
        readout: usize,
        value: f64,
        time_s: f64,
    },
}

pub type Result<T> = std::result::Result<T, SimError>;

pub(crate) fn invalid(name: &'static str, reason: impl Into<String>) -> SimError {
    SimError::InvalidParameter {
        name,
        reason: reason.into(),
    }
}

pub(crate) fn finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(SimError::NonFinite { what, value })
    }
}
