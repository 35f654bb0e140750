//! Border inequalities with profile-dependent supply, decided by max-flow.

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::instance::{AgentSet, CheckSet, DiscreteInstance, InterimRule};
use crate::maxflow::FlowNetwork;

/// Flow capacities are probabilities scaled by `2^SCALE_BITS` and rounded.
pub const SCALE_BITS: i32 = 80;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowOptions {
    /// Refuse to enumerate more profiles than this.
    pub max_profiles: usize,
    /// A rule is feasible when the unmet demand is at most this.
    pub tolerance: f64,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            max_profiles: 1 << 20,
            tolerance: 1e-12,
        }
    }
}

/// A check set whose demand exceeds the supply it can draw on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub set: CheckSet,
    pub lhs: f64,
    pub rhs: f64,
}

impl Violation {
    pub fn excess(&self) -> f64 {
        self.lhs - self.rhs
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Certificate {
    /// Explicit ex-post rule with the requested marginals.
    ExPost(ExPostRule),
    /// Monotone symmetric rule; every upper set was checked.
    UpperSets { sets_checked: usize, min_slack: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeasibilityVerdict {
    Feasible(Certificate),
    Infeasible(Violation),
}

impl FeasibilityVerdict {
    pub fn is_feasible(&self) -> bool {
        matches!(self, FeasibilityVerdict::Feasible(_))
    }

    pub fn violation(&self) -> Option<&Violation> {
        match self {
            FeasibilityVerdict::Infeasible(v) => Some(v),
            FeasibilityVerdict::Feasible(_) => None,
        }
    }

    pub fn expost(&self) -> Option<&ExPostRule> {
        match self {
            FeasibilityVerdict::Feasible(Certificate::ExPost(rule)) => Some(rule),
            _ => None,
        }
    }
}

/// Per-profile, per-agent allocation probabilities in profile enumeration order.
#[derive(Debug, Clone, PartialEq)]
pub struct ExPostRule {
    agents: usize,
    probs: Vec<f64>,
}

impl ExPostRule {
    pub fn agents(&self) -> usize {
        self.agents
    }

    pub fn profiles(&self) -> usize {
        self.probs.len().checked_div(self.agents).unwrap_or(0)
    }

    pub fn get(&self, profile_index: usize, agent: usize) -> f64 {
        self.probs[profile_index * self.agents + agent]
    }

    pub fn profile(&self, profile_index: usize) -> &[f64] {
        &self.probs[profile_index * self.agents..(profile_index + 1) * self.agents]
    }

    /// Interim probabilities induced by the rule.
    pub fn marginals(&self, inst: &DiscreteInstance) -> InterimRule {
        let mut acc = InterimRule::zeros(inst);
        inst.for_each_profile(|idx, profile, prob| {
            for (i, &t) in profile.iter().enumerate() {
                acc.0[i][t] += prob * self.get(idx, i);
            }
        });
        for (row, g) in acc.0.iter_mut().zip(inst.grids()) {
            for (v, m) in row.iter_mut().zip(&g.masses) {
                *v = if *m > 0.0 { *v / m } else { 0.0 };
            }
        }
        acc
    }

    /// Largest breach of `0 <= p_i <= 1`, `sum p_i <= h(t)` or `p_i > 0 => i in J(t)`.
    pub fn max_constraint_violation(&self, inst: &DiscreteInstance) -> f64 {
        let mut worst = 0.0f64;
        inst.for_each_profile(|idx, profile, _| {
            let h = inst.capacity(idx, profile) as f64;
            let eligible = inst.eligible(idx, profile);
            let p = self.profile(idx);
            worst = worst.max(p.iter().sum::<f64>() - h);
            for (i, &pi) in p.iter().enumerate() {
                worst = worst.max(-pi).max(pi - 1.0);
                if !eligible.contains(i) {
                    worst = worst.max(pi);
                }
            }
        });
        worst
    }
}

/// `sum_i sum_{tau in E_i} mass_i(tau) P_i(tau)`.
pub fn border_lhs(inst: &DiscreteInstance, rule: &InterimRule, set: &CheckSet) -> f64 {
    let masks = set.masks(inst);
    masks
        .iter()
        .zip(inst.grids())
        .zip(&rule.0)
        .map(|((mask, g), p)| {
            mask.iter()
                .zip(&g.masses)
                .zip(p)
                .filter(|((inside, _), _)| **inside)
                .map(|((_, m), p)| m * p)
                .sum::<f64>()
        })
        .sum()
}

/// Expected number of objects the set can receive: `E[min(|J(t) ∩ I(t,E)|, h(t))]`.
pub fn border_rhs(inst: &DiscreteInstance, set: &CheckSet, opts: &FlowOptions) -> Result<f64> {
    inst.ensure_enumerable(opts.max_profiles)?;
    Ok(rhs_with_masks(inst, &set.masks(inst)))
}

pub(crate) fn rhs_with_masks(inst: &DiscreteInstance, masks: &[Vec<bool>]) -> f64 {
    let mut total = 0.0;
    inst.for_each_profile(|idx, profile, prob| {
        if prob == 0.0 {
            return;
        }
        let h = inst.capacity(idx, profile) as usize;
        if h == 0 {
            return;
        }
        let eligible = inst.eligible(idx, profile);
        let hits = profile
            .iter()
            .enumerate()
            .filter(|(i, t)| eligible.contains(*i) && masks[*i][**t])
            .count();
        total += prob * hits.min(h) as f64;
    });
    total
}

fn scaled(x: f64) -> i128 {
    (x * 2f64.powi(SCALE_BITS)).round() as i128
}

fn unscaled(x: i128) -> f64 {
    x as f64 * 2f64.powi(-SCALE_BITS)
}

struct Solved {
    network: FlowNetwork,
    deficit: i128,
    /// (profile index, unit capacity, first arc id, eligible agents) for each profile node.
    profiles: Vec<(usize, i128, usize, AgentSet)>,
    type_offset: Vec<usize>,
}

fn solve_network(inst: &DiscreteInstance, rule: &InterimRule, opts: &FlowOptions) -> Result<Solved> {
    inst.ensure_enumerable(opts.max_profiles)?;
    rule.validate(inst)?;
    let (source, sink) = (0usize, 1usize);
    let mut type_offset = Vec::with_capacity(inst.agents());
    let mut nodes = 2usize;
    for g in inst.grids() {
        type_offset.push(nodes);
        nodes += g.len();
    }
    let mut network = FlowNetwork::new(nodes);
    let mut demand = 0i128;
    for (i, g) in inst.grids().iter().enumerate() {
        for (t, m) in g.masses.iter().enumerate() {
            let d = scaled(m * rule.0[i][t].clamp(0.0, 1.0));
            if d > 0 {
                network.add_edge(type_offset[i] + t, sink, d);
                demand += d;
            }
        }
    }
    let mut profiles = Vec::new();
    let all = AgentSet::all(inst.agents());
    inst.for_each_profile(|idx, profile, prob| {
        let h = inst.capacity(idx, profile) as i128;
        let eligible = AgentSet(inst.eligible(idx, profile).0 & all.0);
        let unit = scaled(prob);
        if unit == 0 || h == 0 || eligible.is_empty() {
            return;
        }
        let node = network.add_node();
        network.add_edge(source, node, unit * h);
        let mut first = usize::MAX;
        for (i, &t) in profile.iter().enumerate() {
            if eligible.contains(i) {
                let id = network.add_edge(node, type_offset[i] + t, unit);
                first = first.min(id);
            }
        }
        profiles.push((idx, unit, first, eligible));
    });
    let flow = network.max_flow(source, sink);
    Ok(Solved {
        network,
        deficit: demand - flow,
        profiles,
        type_offset,
    })
}

/// Decides whether `rule` is the reduced form of some ex-post rule on `inst`.
pub fn check_feasible(
    inst: &DiscreteInstance,
    rule: &InterimRule,
    opts: &FlowOptions,
) -> Result<FeasibilityVerdict> {
    let solved = solve_network(inst, rule, opts)?;
    if unscaled(solved.deficit) <= opts.tolerance {
        return Ok(FeasibilityVerdict::Feasible(Certificate::ExPost(
            extract_rule(inst, &solved),
        )));
    }
    // Agent-type nodes with demand that are cut off from the source form the violated set.
    let reach = solved.network.residual_reachable(0);
    let members = inst
        .grids()
        .iter()
        .enumerate()
        .map(|(i, g)| {
            (0..g.len())
                .filter(|&t| !reach[solved.type_offset[i] + t] && scaled(g.masses[t] * rule.0[i][t]) > 0)
                .collect()
        })
        .collect();
    let set = CheckSet::from_members(members);
    let lhs = border_lhs(inst, rule, &set);
    let rhs = rhs_with_masks(inst, &set.masks(inst));
    Ok(FeasibilityVerdict::Infeasible(Violation { set, lhs, rhs }))
}

/// Builds an ex-post rule whose marginals equal `rule`; fails if `rule` is infeasible.
pub fn construct_expost(
    inst: &DiscreteInstance,
    rule: &InterimRule,
    opts: &FlowOptions,
) -> Result<ExPostRule> {
    let solved = solve_network(inst, rule, opts)?;
    let excess = unscaled(solved.deficit);
    if excess > opts.tolerance {
        return Err(FlowError::Infeasible { excess });
    }
    Ok(extract_rule(inst, &solved))
}

fn extract_rule(inst: &DiscreteInstance, solved: &Solved) -> ExPostRule {
    let n = inst.agents();
    let count = inst.profile_count() as usize;
    let mut probs = vec![0.0; count * n];
    for &(idx, unit, first, eligible) in &solved.profiles {
        let mut arc = first;
        for i in eligible.iter() {
            let f = solved.network.flow(arc);
            probs[idx * n + i] = (f as f64 / unit as f64).clamp(0.0, 1.0);
            arc += 2;
        }
    }
    ExPostRule { agents: n, probs }
}
