//! Finite-grid versions of the merit-with-guarantee rule, realized exactly with
//! the flow engine.
//!
//! Grid cells never straddle a region boundary: every region receives cells in
//! proportion to its probability mass (at least one), cells split the region evenly
//! in quantile space, a cell's type is its quantile midpoint and its value of `P`
//! is the `dF`-average over the cell.
//!
//! For the two-stage check, ties between agents in the same cell are broken by an
//! auxiliary agent whose types are the `n!` priority orders, each with mass `1/n!`.
//! It is never eligible and demands nothing, so the merit stage becomes a
//! deterministic function of the extended profile with the same reduced form as
//! ranking continuous types.

use capver_flow::{
    check_family, check_feasible, check_interim_allocation, construct_expost, AgentGrid, AgentSet,
    CheckSet, DiscreteInstance, ExPostRule, FamilyReport, FeasibilityVerdict, FlowOptions,
    InterimRule, ProfileMap,
};
use serde::Serialize;

use crate::envelope::{ProblemInstance, Region};
use crate::error::{CoreError, Result};
use crate::interim::InterimRules;
use crate::numeric::{integrate, QUAD_TOL};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discretization {
    pub phi: f64,
    pub grid: AgentGrid,
    pub regions: Vec<Region>,
    /// Interim allocation per cell.
    pub p: Vec<f64>,
    /// Merit-stage share of `p`.
    pub merit: Vec<f64>,
    /// Interim audit per cell, `p - phi`.
    pub a: Vec<f64>,
}

impl Discretization {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Cell indices in `region`.
    pub fn cells(&self, region: Region) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.regions[i] == region).collect()
    }
}

/// Splits the type space into `points` cells aligned with the region cutoffs.
pub fn discretize(rules: &InterimRules, points: usize) -> Result<Discretization> {
    let ivs = &rules.partition.intervals;
    if points < ivs.len() {
        return Err(CoreError::InvalidInstance(format!(
            "need at least {} grid points, one per region interval",
            ivs.len()
        )));
    }
    let masses: Vec<f64> = ivs.iter().map(|iv| iv.q_hi - iv.q_lo).collect();
    let mut counts: Vec<usize> = masses
        .iter()
        .map(|m| ((m * points as f64).round() as usize).max(1))
        .collect();
    while counts.iter().sum::<usize>() != points {
        let total: usize = counts.iter().sum();
        // Adjust the interval whose share is furthest off.
        let pick = (0..counts.len())
            .filter(|&i| total < points || counts[i] > 1)
            .max_by(|&a, &b| {
                let off = |i: usize| (masses[i] * points as f64 - counts[i] as f64) * if total < points { 1.0 } else { -1.0 };
                off(a).total_cmp(&off(b))
            })
            .expect("some interval can be adjusted");
        if total < points {
            counts[pick] += 1;
        } else {
            counts[pick] -= 1;
        }
    }

    let inst = &rules.inst;
    let phi = rules.phi;
    let (mut types, mut cell_mass, mut regions, mut p, mut merit) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    for (iv, &count) in ivs.iter().zip(&counts) {
        let width = (iv.q_hi - iv.q_lo) / count as f64;
        for j in 0..count {
            let a = iv.q_lo + width * j as f64;
            let b = if j + 1 == count { iv.q_hi } else { a + width };
            let avg = integrate(|u| inst.branch_p(iv.label, u, phi), a, b, QUAD_TOL) / (b - a);
            types.push(inst.dist.quantile(0.5 * (a + b)));
            cell_mass.push(b - a);
            regions.push(iv.label);
            p.push(avg);
            merit.push(match iv.label {
                Region::Allo => avg,
                Region::Aud => avg - phi,
                Region::Ic => 0.0,
            });
        }
    }
    let total: f64 = cell_mass.iter().sum();
    cell_mass.iter_mut().for_each(|m| *m /= total);
    let a = p.iter().map(|x| (x - phi).max(0.0)).collect();
    Ok(Discretization {
        phi,
        grid: AgentGrid::new(types, cell_mass),
        regions,
        p,
        merit,
        a,
    })
}

#[derive(Debug, Clone)]
pub struct Realization {
    pub instance: DiscreteInstance,
    pub target: InterimRule,
    pub rule: ExPostRule,
    /// Largest gap between the rule's marginals and the target.
    pub marginal_error: f64,
    /// Largest excess of any per-profile supply or eligibility constraint.
    pub constraint_violation: f64,
}

fn max_gap(a: &InterimRule, b: &InterimRule) -> f64 {
    a.0.iter()
        .flatten()
        .zip(b.0.iter().flatten())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn realize(instance: DiscreteInstance, target: InterimRule, opts: &FlowOptions) -> Result<Realization> {
    let rule = construct_expost(&instance, &target, opts)?;
    let marginal_error = max_gap(&rule.marginals(&instance), &target);
    let constraint_violation = rule.max_constraint_violation(&instance);
    Ok(Realization {
        instance,
        target,
        rule,
        marginal_error,
        constraint_violation,
    })
}

/// Ex-post allocation over the symmetric grid instance (`m` objects, everyone
/// eligible) whose marginals are the discretized `P`.
pub fn realize_allocation(
    disc: &Discretization,
    inst: &ProblemInstance,
    opts: &FlowOptions,
) -> Result<(FeasibilityVerdict, Realization)> {
    let instance = DiscreteInstance::symmetric(disc.grid.clone(), inst.n, inst.m as u32)?;
    let target = InterimRule(vec![disc.p.clone(); inst.n]);
    let verdict = check_interim_allocation(&instance, &target, opts)?;
    Ok((verdict, realize(instance, target, opts)?))
}

/// Permutation with index `r` in the factorial number system.
fn permutation(n: usize, mut r: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    let mut fact: usize = (1..n).product();
    let mut out = Vec::with_capacity(n);
    for left in (1..=n).rev() {
        let i = r / fact.max(1);
        r %= fact.max(1);
        out.push(pool.remove(i));
        if left > 1 {
            fact /= left - 1;
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct TwoStageReport {
    /// Largest gap between the deterministic merit stage's marginals and the target.
    pub merit_error: f64,
    pub lottery_verdict: FeasibilityVerdict,
    pub lottery: Option<Realization>,
    pub audit_verdict: FeasibilityVerdict,
    pub audit: Option<Realization>,
    /// Sets `[g, g3)` and `C^ic ∪ [g, g3)` in the lottery instance.
    pub lottery_family: FamilyReport,
    /// Sets `[g, g3) ∪ [g', 1]` in the audit instance.
    pub audit_family: FamilyReport,
    /// Largest gap between merit plus lottery marginals and the discretized `P`.
    pub allocation_error: f64,
}

/// Realizes merit stage, lottery and audit on the grid: the merit stage is the
/// deterministic ranking rule, and the lottery (supply `m - |merit|`, eligible
/// non-winners in ic or aud cells, target `phi`) and the audit (supply `k`, eligible
/// merit winners, target `P - phi`) are built by flow.
pub fn two_stage(
    disc: &Discretization,
    inst: &ProblemInstance,
    opts: &FlowOptions,
) -> Result<TwoStageReport> {
    let n = inst.n;
    let perms: usize = (1..=n).product();
    let mut grids = vec![disc.grid.clone(); n];
    grids.push(AgentGrid::uniform(perms));
    let base = DiscreteInstance::new(
        grids.clone(),
        ProfileMap::Constant(0),
        ProfileMap::Constant(AgentSet(0)),
    )?;
    let count = base.profile_count();
    if count > opts.max_profiles as u128 {
        return Err(capver_flow::FlowError::TooManyProfiles {
            count,
            cap: opts.max_profiles,
        }
        .into());
    }
    let priorities: Vec<Vec<usize>> = (0..perms)
        .map(|r| {
            let order = permutation(n, r);
            let mut pos = vec![0; n];
            for (rank, &i) in order.iter().enumerate() {
                pos[i] = rank;
            }
            pos
        })
        .collect();

    let mut winners: Vec<AgentSet> = Vec::with_capacity(count as usize);
    let mut lottery_cap = Vec::with_capacity(count as usize);
    let mut lottery_elig = Vec::with_capacity(count as usize);
    let mut merit_marg = vec![vec![0.0; disc.len()]; n];
    let mut order: Vec<usize> = Vec::with_capacity(n);
    base.for_each_profile(|_, profile, prob| {
        let pos = &priorities[profile[n]];
        order.clear();
        order.extend(0..n);
        order.sort_by(|&a, &b| profile[b].cmp(&profile[a]).then(pos[a].cmp(&pos[b])));
        let mut set = AgentSet(0);
        for (rank, &i) in order.iter().enumerate() {
            let win = match disc.regions[profile[i]] {
                Region::Allo => rank < inst.m,
                Region::Aud => rank < inst.k,
                Region::Ic => false,
            };
            if win {
                set.insert(i);
                merit_marg[i][profile[i]] += prob;
            }
        }
        let mut elig = AgentSet(0);
        for i in 0..n {
            if !set.contains(i) && disc.regions[profile[i]] != Region::Allo {
                elig.insert(i);
            }
        }
        winners.push(set);
        lottery_cap.push((inst.m - set.len()) as u32);
        lottery_elig.push(elig);
    });
    let mass = &disc.grid.masses;
    let mut merit_error: f64 = 0.0;
    for row in merit_marg.iter_mut() {
        for (j, v) in row.iter_mut().enumerate() {
            *v /= mass[j];
            merit_error = merit_error.max((*v - disc.merit[j]).abs());
        }
    }

    let zero_row = vec![0.0; perms];
    let lottery_row: Vec<f64> = disc
        .regions
        .iter()
        .map(|r| if *r == Region::Allo { 0.0 } else { disc.phi })
        .collect();
    let mut lottery_target = vec![lottery_row; n];
    lottery_target.push(zero_row.clone());
    let lottery_target = InterimRule(lottery_target);
    let lottery_inst = DiscreteInstance::new(
        grids.clone(),
        ProfileMap::Dense(lottery_cap),
        ProfileMap::Dense(lottery_elig),
    )?;

    let mut audit_target = vec![disc.a.clone(); n];
    audit_target.push(zero_row);
    let audit_target = InterimRule(audit_target);
    let audit_inst = DiscreteInstance::new(
        grids,
        ProfileMap::Constant(inst.k as u32),
        ProfileMap::Dense(winners),
    )?;

    let ic = disc.cells(Region::Ic);
    let aud = disc.cells(Region::Aud);
    let len = disc.len();
    // End of the aud block: gamma3 as a cell index.
    let g3 = aud.last().map_or(ic.last().map_or(0, |&i| i + 1), |&i| i + 1);
    let sym = |cells: Vec<usize>| CheckSet::symmetric(&cells, n, n + 1);

    let lottery_sets: Vec<CheckSet> = (0..=g3)
        .flat_map(|g| {
            let tail: Vec<usize> = (g..g3).filter(|&i| disc.regions[i] != Region::Allo).collect();
            let mut with_ic: Vec<usize> = ic.clone();
            with_ic.extend(tail.iter().filter(|i| !ic.contains(i)));
            with_ic.sort_unstable();
            [sym(tail), sym(with_ic)]
        })
        .collect();
    let audit_sets: Vec<CheckSet> = (0..=g3)
        .flat_map(|g| {
            (g3..=len).map(move |h| {
                let cells: Vec<usize> = (g..g3).chain(h..len).collect();
                cells
            })
        })
        .map(sym)
        .collect();

    let lottery_verdict = check_feasible(&lottery_inst, &lottery_target, opts)?;
    let audit_verdict = check_feasible(&audit_inst, &audit_target, opts)?;
    let lottery_family = check_family(&lottery_inst, &lottery_target, lottery_sets, opts)?;
    let audit_family = check_family(&audit_inst, &audit_target, audit_sets, opts)?;

    let lottery = if lottery_verdict.is_feasible() {
        Some(realize(lottery_inst, lottery_target, opts)?)
    } else {
        None
    };
    let allocation_error = match &lottery {
        Some(l) => {
            let marg = l.rule.marginals(&l.instance);
            (0..n)
                .flat_map(|i| (0..len).map(move |j| (i, j)))
                .map(|(i, j)| (merit_marg[i][j] + marg.0[i][j] - disc.p[j]).abs())
                .fold(0.0, f64::max)
        }
        None => f64::INFINITY,
    };
    let audit = if audit_verdict.is_feasible() {
        Some(realize(audit_inst, audit_target, opts)?)
    } else {
        None
    };
    Ok(TwoStageReport {
        merit_error,
        lottery_verdict,
        lottery,
        audit_verdict,
        audit,
        lottery_family,
        audit_family,
        allocation_error,
    })
}
