use thiserror::Error;

/// Errors raised by the simulation, control and governance layers.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A parameter violates a precondition (non-finite step, `S1 >= S2`, bad sign, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// A time or value was queried outside the domain of a trajectory, schedule or grid.
    #[error("domain error: {0}")]
    Domain(String),

    /// The system state cannot support the requested operation (e.g. no active banks).
    #[error("state error: {0}")]
    State(String),

    /// Inconsistent internal dimensions; indicates a programming error upstream.
    #[error("internal error: {0}")]
    Internal(String),

    /// `|xbar - xi_minus|` fell below the floor while extracting the authority rate.
    #[error("singular denominator at step {step} (t = {time}): |xbar - xi_minus| = {value:e}")]
    SingularDenominator { step: usize, time: f64, value: f64 },

    /// The governance loop could not produce a decision.
    #[error("governance error: {0}")]
    Governance(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn config<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

pub(crate) fn ensure_finite(name: &str, value: f64) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        config(format!("{name} must be finite, got {value}"))
    }
}
