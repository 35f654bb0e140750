//! Principal's payoff as a function of the guarantee and its maximization.

use rayon::prelude::*;
use serde::Serialize;

use crate::envelope::{partition, ProblemInstance, Region, RegionPartition};
use crate::error::{CoreError, Result};
use crate::numeric::{brent, golden_max, integrate, QUAD_TOL};

/// Grid size used to bracket roots of the first-order condition.
pub const FOC_GRID: usize = 200;

/// Tolerance on refined roots of the first-order condition.
pub const FOC_TOL: f64 = 1e-12;

/// Largest allowed gap between the enumerated argmax and golden-section search.
pub const CROSS_CHECK_TOL: f64 = 1e-7;

fn payoff_on(inst: &ProblemInstance, part: &RegionPartition) -> f64 {
    let dist = inst.dist;
    let total: f64 = part
        .intervals
        .iter()
        .map(|iv| {
            integrate(
                |u| inst.branch_p(iv.label, u, part.phi) * dist.quantile(u),
                iv.q_lo,
                iv.q_hi,
                QUAD_TOL,
            )
        })
        .sum();
    inst.n as f64 * total
}

/// Total expected value `n E[P(t) t]` of the merit-with-guarantee rule.
pub fn payoff(phi: f64, inst: &ProblemInstance) -> Result<f64> {
    let part = partition(phi, inst)?;
    Ok(payoff_on(inst, &part))
}

fn residual_on(inst: &ProblemInstance, part: &RegionPartition) -> f64 {
    let d = inst.dist;
    let (g1, g2, g3) = (part.gamma1, part.gamma2, part.gamma3);
    let mean = |a: f64, b: f64| d.integrate_df(|t| t, a, b);
    g1 * d.cdf(g1) + g2 * (1.0 - d.cdf(g2)) - g3 * (1.0 - d.cdf(g3)) - mean(0.0, g1) - mean(g2, g3)
}

/// First-order condition for the guarantee; `dU/dphi = -n * residual`.
///
/// Defined for `phi` in `[(m-k)/n, m/n]`.
pub fn foc_residual(phi: f64, inst: &ProblemInstance) -> Result<f64> {
    inst.check_phi(phi)?;
    let lower = inst.phi_lower();
    if phi < lower {
        return Err(CoreError::FocBelowRange { phi, lower });
    }
    let part = partition(phi, inst)?;
    Ok(residual_on(inst, &part))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum CandidateSource {
    FocRoot,
    Endpoint,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Candidate {
    pub phi: f64,
    pub payoff: f64,
    pub source: CandidateSource,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Baselines {
    /// The `m` highest types always receive.
    pub first_best: f64,
    /// Uniform lottery over all agents.
    pub random_lottery: f64,
    /// The `k` highest reports are verified and receive; the rest is raffled.
    pub k_top: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CrossCheck {
    pub phi: f64,
    pub payoff: f64,
    /// `|payoff - golden payoff|`.
    pub gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveReport {
    pub instance: ProblemInstance,
    pub phi_star: f64,
    pub payoff: f64,
    pub foc_residual: f64,
    /// Strictly inside `((m-k)/n, m/n)`.
    pub interior: bool,
    pub partition: RegionPartition,
    pub baselines: Baselines,
    /// Sorted by `phi`, then source.
    pub candidates: Vec<Candidate>,
    pub golden: CrossCheck,
}

/// Enumerates every bracketed root of the first-order condition plus both ends
/// of `[(m-k)/n, m/n]` and the best grid point, and returns the payoff argmax.
pub fn solve(inst: &ProblemInstance) -> Result<SolveReport> {
    inst.validate()?;
    let (lo, hi) = (inst.phi_lower(), inst.phi_upper());
    let grid: Vec<f64> = (0..FOC_GRID)
        .map(|i| (lo + (hi - lo) * i as f64 / (FOC_GRID - 1) as f64).min(hi))
        .collect();
    let evals: Vec<(f64, f64)> = grid
        .par_iter()
        .map(|&phi| {
            let part = partition(phi, inst)?;
            Ok((residual_on(inst, &part), payoff_on(inst, &part)))
        })
        .collect::<Result<_>>()?;

    let mut candidates = vec![
        Candidate { phi: lo, payoff: evals[0].1, source: CandidateSource::Endpoint },
        Candidate { phi: hi, payoff: evals[FOC_GRID - 1].1, source: CandidateSource::Endpoint },
    ];
    let best_grid = (0..FOC_GRID)
        .max_by(|&a, &b| evals[a].1.total_cmp(&evals[b].1).then(b.cmp(&a)))
        .expect("grid is non-empty");
    candidates.push(Candidate {
        phi: grid[best_grid],
        payoff: evals[best_grid].1,
        source: CandidateSource::Grid,
    });

    let brackets: Vec<(f64, f64)> = (1..FOC_GRID)
        .filter(|&i| evals[i - 1].0.signum() != evals[i].0.signum() || evals[i].0 == 0.0)
        .map(|i| (grid[i - 1], grid[i]))
        .collect();
    let roots: Vec<Candidate> = brackets
        .par_iter()
        .map(|&(a, b)| {
            let f = |phi: f64| partition(phi, inst).map_or(f64::NAN, |p| residual_on(inst, &p));
            let phi = brent(f, a, b, FOC_TOL).ok_or_else(|| {
                CoreError::Bracketing(format!("first-order condition on [{a}, {b}]"))
            })?;
            Ok(Candidate { phi, payoff: payoff(phi, inst)?, source: CandidateSource::FocRoot })
        })
        .collect::<Result<_>>()?;
    candidates.extend(roots);
    candidates.sort_by(|a, b| a.phi.total_cmp(&b.phi).then(a.source.cmp(&b.source)));
    candidates.dedup_by(|a, b| a.phi == b.phi && a.source == b.source);

    let best = *candidates
        .iter()
        .reduce(|best, c| if c.payoff > best.payoff { c } else { best })
        .expect("endpoints are always candidates");

    let (g_phi, g_payoff) = golden_max(|phi| payoff(phi, inst).unwrap_or(f64::NEG_INFINITY), lo, hi, 1e-10);
    let golden = CrossCheck { phi: g_phi, payoff: g_payoff, gap: (g_payoff - best.payoff).abs() };
    if golden.gap > CROSS_CHECK_TOL {
        log::warn!(
            "golden-section payoff {g_payoff} at phi={g_phi} differs from argmax {} at phi={} by {}",
            best.payoff,
            best.phi,
            golden.gap
        );
    }

    let part = partition(best.phi, inst)?;
    Ok(SolveReport {
        instance: *inst,
        phi_star: best.phi,
        payoff: best.payoff,
        foc_residual: residual_on(inst, &part),
        interior: best.phi > lo && best.phi < hi,
        partition: part,
        baselines: baseline_payoffs(inst)?,
        candidates,
        golden,
    })
}

pub fn baseline_payoffs(inst: &ProblemInstance) -> Result<Baselines> {
    inst.validate()?;
    let n = inst.n as f64;
    let dist = inst.dist;
    let first_best = n * integrate(
        |u| inst.branch_p(Region::Allo, u, 0.0) * dist.quantile(u),
        0.0,
        1.0,
        QUAD_TOL,
    );
    let rest = (inst.m - inst.k) as f64 / (inst.n - inst.k) as f64;
    let k_top = n * integrate(
        |u| {
            let top = inst.fewer_above(u, inst.k);
            (top + (1.0 - top) * rest) * dist.quantile(u)
        },
        0.0,
        1.0,
        QUAD_TOL,
    );
    Ok(Baselines {
        first_best,
        random_lottery: inst.m as f64 * dist.mean(),
        k_top,
    })
}
