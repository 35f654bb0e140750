//! Ex-post simulation of the merit-with-guarantee mechanism.
//!
//! Profiles are drawn iid from the type distribution. Each worker owns a
//! `ChaCha8Rng` seeded with the run seed and a stream index equal to its chunk
//! number, and chunk results are merged in chunk order, so a report depends only on
//! the seed and configuration.

mod calibrate;
mod epic;
mod mechanism;
mod simulate;

pub use calibrate::{
    calibrate, calibrate_audit, calibrate_lottery, Calibration, CalibrationBin, CalibrationOptions,
    CalibrationStage, CONVERGED_Z,
};
pub use epic::{deviation_outcome, epic_counterexample, DeviationOutcome, EpicWitness};
pub use mechanism::{
    audit_select, lottery_allocate, merit_allocate, BinWeights, Mechanism, ProfileOutcome, Stage,
};
pub use simulate::{build_mechanism, simulate, simulate_mechanism, BinStat, SimConfig, SimReport};
