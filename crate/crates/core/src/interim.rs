//! Merit-with-guarantee interim rules and their incentive checks.

use serde::Serialize;

use crate::envelope::{partition, ProblemInstance, Region, RegionPartition};
use crate::error::{check_unit, Result};
use crate::numeric::{integrate, QUAD_TOL};

/// An interim allocation/audit pair as functions of the agent's own type.
pub trait InterimPair {
    fn p(&self, t: f64) -> f64;
    fn a(&self, t: f64) -> f64;
    /// Points where `p` may jump; added to the grid when searching for `inf p`.
    fn breakpoints(&self) -> Vec<f64> {
        Vec::new()
    }
}

/// Closure-backed rules, mostly for comparisons and tests.
pub struct FnRules<P, A> {
    pub p: P,
    pub a: A,
}

impl<P: Fn(f64) -> f64, A: Fn(f64) -> f64> InterimPair for FnRules<P, A> {
    fn p(&self, t: f64) -> f64 {
        (self.p)(t)
    }
    fn a(&self, t: f64) -> f64 {
        (self.a)(t)
    }
}

/// `P(t) = -(1/n) c_phi'(F(t))` using the binding branch to the right of `t`, and
/// `A = P - phi`.
#[derive(Debug, Clone, Serialize)]
pub struct InterimRules {
    pub inst: ProblemInstance,
    pub phi: f64,
    pub partition: RegionPartition,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InterimRow {
    pub t: f64,
    pub p: f64,
    pub a: f64,
}

pub fn merit_with_guarantee(phi: f64, inst: &ProblemInstance) -> Result<InterimRules> {
    let partition = partition(phi, inst)?;
    Ok(InterimRules {
        inst: *inst,
        phi,
        partition,
    })
}

impl InterimRules {
    /// `P` at quantile `u`.
    pub fn p_at_quantile(&self, u: f64) -> f64 {
        let region = self.partition.region_of_quantile(u);
        self.inst.branch_p(region, u, self.phi)
    }

    pub fn region_of(&self, t: f64) -> Region {
        self.partition.region_of(t)
    }

    /// `n ∫_t^1 P dF`, integrating each branch over its own quantile interval.
    pub fn tail_integral(&self, t: f64) -> f64 {
        let u0 = self.inst.dist.cdf(t);
        let n = self.inst.n as f64;
        self.partition
            .intervals
            .iter()
            .filter(|iv| iv.q_hi > u0)
            .map(|iv| {
                let lo = iv.q_lo.max(u0);
                integrate(
                    |u| self.inst.branch_p(iv.label, u, self.phi),
                    lo,
                    iv.q_hi,
                    QUAD_TOL,
                )
            })
            .sum::<f64>()
            * n
    }

    /// Samples `(t, P, A)` on `points` evenly spaced types.
    pub fn table(&self, points: usize) -> Vec<InterimRow> {
        let points = points.max(2);
        (0..points)
            .map(|i| {
                let t = i as f64 / (points - 1) as f64;
                InterimRow {
                    t,
                    p: self.p(t),
                    a: self.a(t),
                }
            })
            .collect()
    }
}

impl InterimPair for InterimRules {
    fn p(&self, t: f64) -> f64 {
        self.p_at_quantile(self.inst.dist.cdf(t))
    }

    fn a(&self, t: f64) -> f64 {
        self.p(t) - self.phi
    }

    fn breakpoints(&self) -> Vec<f64> {
        self.partition.breakpoints()
    }
}

/// `n ∫_t^1 P dF`.
pub fn interim_integral(rules: &InterimRules, t: f64) -> Result<f64> {
    check_unit("t", t)?;
    Ok(rules.tail_integral(t))
}

const SLACK_GRID: usize = 10_000;

/// Minimum of `P` over a 1e4-point grid plus the rule's breakpoints.
pub fn inf_p(rules: &impl InterimPair) -> f64 {
    (0..=SLACK_GRID)
        .map(|i| i as f64 / SLACK_GRID as f64)
        .chain(rules.breakpoints())
        .map(|t| rules.p(t))
        .fold(f64::INFINITY, f64::min)
}

/// `t -> A(t) - (P(t) - inf P)`; non-negative everywhere iff the rule is BIC.
pub fn bic_slack<R: InterimPair>(rules: &R) -> impl Fn(f64) -> f64 + '_ {
    let floor = inf_p(rules);
    move |t| rules.a(t) - (rules.p(t) - floor)
}
