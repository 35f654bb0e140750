//! Exact feasibility checks for interim allocation rules on finite type spaces.
//!
//! Supply may depend on the realized profile (`h(t)`), and so may the set of agents
//! allowed to receive (`J(t)`). Feasibility is decided by a max-flow over the
//! enumerated profiles; a feasible flow is itself an ex-post rule and a minimum cut
//! yields a violated inequality.

mod border;
mod error;
mod family;
pub mod file;
mod instance;
pub mod maxflow;

pub use border::{
    border_lhs, border_rhs, check_feasible, construct_expost, Certificate, ExPostRule,
    FeasibilityVerdict, FlowOptions, Violation, SCALE_BITS,
};
pub use error::{FlowError, Result};
pub use family::{
    audit_instance, check_family, check_interim_allocation, check_interim_audit,
    expected_capped_binomial, symmetric_family, upper_sets, FamilyReport,
};
pub use instance::{
    AgentGrid, AgentSet, CheckSet, DiscreteInstance, InterimRule, ProfileMap, MAX_AGENTS,
};
