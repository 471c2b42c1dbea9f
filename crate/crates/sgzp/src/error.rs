use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("invalid control: {0}")]
    InvalidControl(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("invalid policy: {0}")]
    InvalidPolicy(String),
    #[error("invalid perturbation setup: {0}")]
    InvalidPerturbation(String),
    #[error("grid mismatch between forward and backward passes: {0}")]
    GridMismatch(String),
    #[error("non-finite state at t = {t}")]
    NonFinite { t: f64 },
    #[error("simplex violation of {magnitude:e} at t = {t}")]
    SimplexViolation { t: f64, magnitude: f64 },
    #[error("search space of {combinations} combinations exceeds the {limit} guard")]
    SearchSpaceTooLarge { combinations: u128, limit: u128 },
}

pub type Result<T> = std::result::Result<T, Error>;
