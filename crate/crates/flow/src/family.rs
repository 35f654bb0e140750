//! Border checks restricted to structured families of sets.

use serde::{Deserialize, Serialize};

use crate::border::{
    border_lhs, check_feasible, rhs_with_masks, Certificate, FeasibilityVerdict, FlowOptions,
    Violation,
};
use crate::error::Result;
use crate::instance::{AgentGrid, AgentSet, CheckSet, DiscreteInstance, InterimRule, ProfileMap};

/// Outcome of checking every set in a family. The empty set is always included.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub sets_checked: usize,
    pub worst: Violation,
    pub passed: bool,
}

/// Evaluates the Border inequality for each set and keeps the largest excess.
pub fn check_family(
    inst: &DiscreteInstance,
    rule: &InterimRule,
    family: impl IntoIterator<Item = CheckSet>,
    opts: &FlowOptions,
) -> Result<FamilyReport> {
    inst.ensure_enumerable(opts.max_profiles)?;
    let mut worst = Violation {
        set: CheckSet::empty(inst.agents()),
        lhs: 0.0,
        rhs: 0.0,
    };
    let mut sets_checked = 0;
    for set in family {
        sets_checked += 1;
        let lhs = border_lhs(inst, rule, &set);
        let rhs = rhs_with_masks(inst, &set.masks(inst));
        if lhs - rhs > worst.excess() {
            worst = Violation { set, lhs, rhs };
        }
    }
    let passed = worst.excess() <= opts.tolerance;
    Ok(FamilyReport {
        sets_checked,
        worst,
        passed,
    })
}

/// Every product of per-agent upper sets `{tau >= e_i}` (including empty ones).
pub fn upper_sets(inst: &DiscreteInstance) -> impl Iterator<Item = CheckSet> + '_ {
    let lens: Vec<usize> = inst.grids().iter().map(AgentGrid::len).collect();
    let total: usize = lens.iter().map(|l| l + 1).product();
    (0..total).map(move |mut code| {
        let members = lens
            .iter()
            .rev()
            .map(|&len| {
                let start = code % (len + 1);
                code /= len + 1;
                (start..len).collect::<Vec<_>>()
            })
            .collect::<Vec<_>>()
            .into_iter()
            .rev()
            .collect();
        CheckSet::from_members(members)
    })
}

/// The same index set for the first `agents` agents of an instance with `total_agents`.
pub fn symmetric_family(
    sets: impl IntoIterator<Item = Vec<usize>>,
    agents: usize,
    total_agents: usize,
) -> impl Iterator<Item = CheckSet> {
    sets.into_iter()
        .map(move |s| CheckSet::symmetric(&s, agents, total_agents))
}

fn is_plain_symmetric(inst: &DiscreteInstance, rule: &InterimRule) -> Option<u32> {
    let n = inst.agents();
    let first = inst.grid(0);
    if inst.grids().iter().any(|g| g != first) || rule.0.iter().any(|r| r != &rule.0[0]) {
        return None;
    }
    match (inst.capacity_map(), inst.eligibility_map()) {
        (ProfileMap::Constant(h), ProfileMap::Constant(j)) if *j == AgentSet::all(n) => Some(*h),
        _ => None,
    }
}

/// Expected `min(X, cap)` for `X ~ Bin(n, s)`.
pub fn expected_capped_binomial(n: usize, s: f64, cap: usize) -> f64 {
    let s = s.clamp(0.0, 1.0);
    if s == 0.0 {
        return 0.0;
    }
    if s == 1.0 {
        return n.min(cap) as f64;
    }
    let mut log_c = 0.0f64;
    let (ls, lf) = (s.ln(), (1.0 - s).ln());
    let mut total = 0.0;
    for j in 0..=n {
        if j > 0 {
            log_c += ((n - j + 1) as f64).ln() - (j as f64).ln();
        }
        let pmf = (log_c + j as f64 * ls + (n - j) as f64 * lf).exp();
        total += pmf * j.min(cap) as f64;
    }
    total
}

/// Symmetric allocation check with constant supply and universal eligibility.
///
/// A common non-decreasing rule only needs the upper sets `{tau >= e}`, which have a
/// closed-form right-hand side; anything else goes through the flow network.
pub fn check_interim_allocation(
    inst: &DiscreteInstance,
    rule: &InterimRule,
    opts: &FlowOptions,
) -> Result<FeasibilityVerdict> {
    rule.validate(inst)?;
    let Some(h) = is_plain_symmetric(inst, rule) else {
        return check_feasible(inst, rule, opts);
    };
    let p = &rule.0[0];
    if p.windows(2).any(|w| w[1] < w[0]) {
        return check_feasible(inst, rule, opts);
    }
    let n = inst.agents();
    let masses = &inst.grid(0).masses;
    let len = p.len();
    let mut worst: Option<(usize, f64, f64)> = None;
    let mut min_slack = f64::INFINITY;
    let (mut tail_mass, mut tail_demand) = (0.0, 0.0);
    for start in (0..len).rev() {
        tail_mass += masses[start];
        tail_demand += masses[start] * p[start];
        let lhs = n as f64 * tail_demand;
        let rhs = expected_capped_binomial(n, tail_mass, h as usize);
        min_slack = min_slack.min(rhs - lhs);
        if worst.is_none_or(|(_, l, r)| lhs - rhs > l - r) {
            worst = Some((start, lhs, rhs));
        }
    }
    let Some((start, lhs, rhs)) = worst else {
        return Ok(FeasibilityVerdict::Feasible(Certificate::UpperSets {
            sets_checked: 0,
            min_slack: 0.0,
        }));
    };
    if lhs - rhs > opts.tolerance {
        let set = CheckSet::symmetric(&(start..len).collect::<Vec<_>>(), n, n);
        return Ok(FeasibilityVerdict::Infeasible(Violation { set, lhs, rhs }));
    }
    Ok(FeasibilityVerdict::Feasible(Certificate::UpperSets {
        sets_checked: len,
        min_slack,
    }))
}

/// Audit capacity check: at most `k` audits per profile, only among the allocated agents.
pub fn check_interim_audit(
    inst: &DiscreteInstance,
    allocated: Vec<AgentSet>,
    k: u32,
    audit: &InterimRule,
    opts: &FlowOptions,
) -> Result<FeasibilityVerdict> {
    let audit_inst = audit_instance(inst, allocated, k)?;
    check_feasible(&audit_inst, audit, opts)
}

/// The instance whose supply is `k` and whose eligible set is the allocated agents.
pub fn audit_instance(
    inst: &DiscreteInstance,
    allocated: Vec<AgentSet>,
    k: u32,
) -> Result<DiscreteInstance> {
    DiscreteInstance::new(
        inst.grids().to_vec(),
        ProfileMap::Constant(k),
        ProfileMap::Dense(allocated),
    )
}
