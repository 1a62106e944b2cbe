use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("argument outside domain: {0}")]
    Domain(String),
    #[error("point {x} lies inside the avoided interval [{a}, {b}]")]
    InsideInterval { x: f64, a: f64, b: f64 },
    #[error("closed forms require a driftless model (drift = {0})")]
    DriftUnsupported(f64),
    #[error("particle ensemble went extinct at t = {time} (replicate {replicate})")]
    Extinction { time: f64, replicate: usize },
    #[error("only {got} samples available, at least {need} required")]
    InsufficientSamples { got: usize, need: usize },
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn check_positive(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

pub(crate) fn check_finite(name: &'static str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}
