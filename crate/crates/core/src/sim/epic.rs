//! A profile at which a truthful agent gets nothing but gains by reporting a high
//! type, because with more merit winners than audits some winner goes unverified.

use serde::Serialize;

use super::mechanism::merit_allocate;
use crate::envelope::{partition, ProblemInstance, Region, RegionPartition};
use crate::error::{CoreError, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpicWitness {
    pub instance: ProblemInstance,
    pub phi: f64,
    pub profile: Vec<f64>,
    pub agent: usize,
    pub truthful_type: f64,
    /// Allocation probability under truthful reporting at this profile.
    pub truthful_allocation: f64,
    pub deviation: f64,
    /// Merit winners after the deviation, sorted.
    pub winners_after: Vec<usize>,
    /// Chance the deviator is not among `k` winners audited uniformly at random.
    pub escape_probability: f64,
    /// Lower bound on the gain in allocation probability from deviating.
    pub gain_lower_bound: f64,
}

/// Outcome for `agent` when it reports `report` and everyone else is truthful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DeviationOutcome {
    pub merit_win: bool,
    /// Objects left for the lottery after the merit stage.
    pub lottery_slots: usize,
    /// Escape probability under a uniformly random audit of the merit winners.
    pub escape_uniform: f64,
}

pub fn deviation_outcome(
    inst: &ProblemInstance,
    part: &RegionPartition,
    profile: &[f64],
    agent: usize,
    report: f64,
) -> DeviationOutcome {
    let mut reports = profile.to_vec();
    reports[agent] = report;
    let winners = merit_allocate(&reports, part, inst);
    let merit_win = winners.contains(&agent);
    let audited_winners = winners
        .iter()
        .filter(|&&i| part.region_of(reports[i]) == Region::Aud)
        .count();
    let escape_uniform = if !merit_win
        || winners.len() <= inst.k
        || part.region_of(report) == Region::Aud
    {
        0.0
    } else {
        let pool = winners.len() - audited_winners;
        let slots = inst.k.saturating_sub(audited_winners);
        1.0 - slots as f64 / pool as f64
    };
    DeviationOutcome {
        merit_win,
        lottery_slots: inst.m.saturating_sub(winners.len()),
        escape_uniform,
    }
}

/// Builds the witness for agent 0: `m` others hold distinct types in the top allo
/// region, so the lottery is empty and agent 0 receives nothing; reporting a type
/// above all of them makes agent 0 one of `m > k` merit winners.
pub fn epic_counterexample(inst: &ProblemInstance, phi: f64) -> Result<EpicWitness> {
    if inst.n < inst.m + 1 {
        return Err(CoreError::NoWitness(format!(
            "need n >= m + 1 agents, got n={} m={}",
            inst.n, inst.m
        )));
    }
    let part = partition(phi, inst)?;
    let top = part
        .intervals
        .last()
        .filter(|iv| iv.label == Region::Allo && iv.hi > iv.lo)
        .ok_or_else(|| CoreError::NoWitness("the allo region has empty interior".into()))?;
    let (lo, hi) = (top.lo, top.hi);
    let m = inst.m;
    let step = (hi - lo) / (m + 2) as f64;
    let truthful = if 0.1 < lo { 0.1 } else { 0.5 * lo };

    let mut profile = vec![0.0; inst.n];
    profile[0] = truthful;
    for j in 0..m {
        profile[1 + j] = lo + step * (j + 1) as f64;
    }
    let rest = inst.n - 1 - m;
    for j in 0..rest {
        profile[1 + m + j] = truthful * (j + 1) as f64 / (rest + 1) as f64;
    }
    let deviation = lo + step * (m + 1) as f64;

    let truthful_out = deviation_outcome(inst, &part, &profile, 0, truthful);
    let truthful_allocation = if truthful_out.merit_win || truthful_out.lottery_slots > 0 {
        return Err(CoreError::NoWitness(
            "truthful agent is not shut out at the constructed profile".into(),
        ));
    } else {
        0.0
    };
    let out = deviation_outcome(inst, &part, &profile, 0, deviation);
    let mut reports = profile.clone();
    reports[0] = deviation;
    let winners_after = merit_allocate(&reports, &part, inst);
    if !out.merit_win || winners_after.len() <= inst.k {
        return Err(CoreError::NoWitness("deviation does not create an unverified winner".into()));
    }
    Ok(EpicWitness {
        instance: *inst,
        phi,
        profile,
        agent: 0,
        truthful_type: truthful,
        truthful_allocation,
        deviation,
        winners_after,
        escape_probability: out.escape_uniform,
        gain_lower_bound: out.escape_uniform - truthful_allocation,
    })
}
