use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid instance: {0}")]
    InvalidInstance(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("{what} = {value} is outside {range}")]
    OutOfDomain {
        what: &'static str,
        value: f64,
        range: String,
    },

    #[error("root bracketing failed: {0}")]
    Bracketing(String),

    #[error("first-order condition undefined at phi = {phi}: below (m-k)/n = {lower}")]
    FocBelowRange { phi: f64, lower: f64 },

    #[error("calibration of {stage} weights did not converge after {rounds} rounds (max |z| = {max_z:.2})")]
    CalibrationDiverged {
        stage: &'static str,
        rounds: usize,
        max_z: f64,
    },

    #[error("no ex-post witness: {0}")]
    NoWitness(String),

    #[error(transparent)]
    Flow(#[from] capver_flow::FlowError),
}

pub type Result<T> = std::result::Result<T, CoreError>;

pub(crate) fn check_unit(what: &'static str, value: f64) -> Result<()> {
    check_range(what, value, 0.0, 1.0)
}

pub(crate) fn check_range(what: &'static str, value: f64, lo: f64, hi: f64) -> Result<()> {
    if value.is_finite() && value >= lo && value <= hi {
        Ok(())
    } else {
        Err(CoreError::OutOfDomain {
            what,
            value,
            range: format!("[{lo}, {hi}]"),
        })
    }
}
