//! Allocation of identical objects without transfers when only a limited number of
//! agents can be verified.
//!
//! [`envelope`] evaluates the supply, audit-capacity and incentive constraints and
//! their lower envelope, [`interim`] turns a guarantee `phi` into interim
//! allocation and audit rules, [`optimizer`] picks the best guarantee, [`sim`]
//! runs the mechanism on sampled profiles and [`discrete`] realizes it exactly on
//! finite grids.

pub mod binom;
pub mod discrete;
pub mod dist;
pub mod envelope;
mod error;
pub mod interim;
pub mod numeric;
pub mod optimizer;
pub mod sim;

pub use dist::TypeDistribution;
pub use envelope::{
    c_allo, c_aud, c_ic, d_c_allo, d_c_aud, d_c_ic, envelope_table, envelope_value, partition,
    phi_bar, CaseTag, Crossings, EnvelopeRow, LabeledInterval, ProblemInstance, Region,
    RegionPartition,
};
pub use error::{CoreError, Result};
pub use interim::{
    bic_slack, interim_integral, merit_with_guarantee, FnRules, InterimPair, InterimRow,
    InterimRules,
};
pub use optimizer::{
    baseline_payoffs, foc_residual, payoff, solve, Baselines, Candidate, CandidateSource,
    CrossCheck, SolveReport,
};
