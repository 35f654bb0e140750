//! Finite type spaces with profile-dependent supply `h(t)` and eligibility `J(t)`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};

/// Agents are tracked in a `u64` bitmask.
pub const MAX_AGENTS: usize = 64;

const MASS_TOLERANCE: f64 = 1e-12;

/// One agent's ordered type grid with probability masses.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentGrid {
    pub types: Vec<f64>,
    pub masses: Vec<f64>,
}

impl AgentGrid {
    pub fn new(types: Vec<f64>, masses: Vec<f64>) -> Self {
        Self { types, masses }
    }

    /// `len` equally likely types `0, 1, ..., len-1`.
    pub fn uniform(len: usize) -> Self {
        Self {
            types: (0..len).map(|i| i as f64).collect(),
            masses: vec![1.0 / len as f64; len],
        }
    }

    pub fn len(&self) -> usize {
        self.types.len()
    }

    pub fn is_empty(&self) -> bool {
        self.types.is_empty()
    }

    fn validate(&self, agent: usize) -> Result<()> {
        let bad = |reason: String| FlowError::InvalidGrid { agent, reason };
        if self.types.is_empty() {
            return Err(bad("empty type grid".into()));
        }
        if self.types.len() != self.masses.len() {
            return Err(bad(format!(
                "{} types but {} masses",
                self.types.len(),
                self.masses.len()
            )));
        }
        if self.types.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(bad("types must be strictly increasing".into()));
        }
        if let Some(m) = self.masses.iter().find(|m| !(**m >= 0.0) || !m.is_finite()) {
            return Err(bad(format!("negative or non-finite mass {m}")));
        }
        let total: f64 = self.masses.iter().sum();
        if (total - 1.0).abs() > MASS_TOLERANCE {
            return Err(bad(format!("masses sum to {total}, expected 1")));
        }
        Ok(())
    }
}

/// Set of agents as a bitmask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, PartialOrd, Ord)]
pub struct AgentSet(pub u64);

impl AgentSet {
    pub fn all(n: usize) -> Self {
        if n >= 64 {
            Self(u64::MAX)
        } else {
            Self((1u64 << n) - 1)
        }
    }

    pub fn from_agents(agents: impl IntoIterator<Item = usize>) -> Self {
        Self(agents.into_iter().fold(0, |acc, i| acc | (1u64 << i)))
    }

    pub fn contains(self, agent: usize) -> bool {
        self.0 >> agent & 1 == 1
    }

    pub fn insert(&mut self, agent: usize) {
        self.0 |= 1u64 << agent;
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn iter(self) -> impl Iterator<Item = usize> {
        (0..64).filter(move |i| self.contains(*i))
    }
}

/// A function of the type profile.
#[derive(Debug, Clone, PartialEq)]
pub enum ProfileMap<T> {
    Constant(T),
    /// Default value with per-profile overrides keyed by type indices.
    Sparse {
        default: T,
        entries: BTreeMap<Vec<usize>, T>,
    },
    /// One value per profile in enumeration order.
    Dense(Vec<T>),
}

impl<T: Copy> ProfileMap<T> {
    fn get(&self, index: usize, profile: &[usize]) -> T {
        match self {
            ProfileMap::Constant(v) => *v,
            ProfileMap::Sparse { default, entries } => {
                entries.get(profile).copied().unwrap_or(*default)
            }
            ProfileMap::Dense(values) => values[index],
        }
    }
}

/// Per-agent subsets `E_i` of each agent's grid (a disjoint union over agents).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckSet {
    /// Sorted type indices per agent.
    pub members: Vec<Vec<usize>>,
}

impl CheckSet {
    pub fn empty(agents: usize) -> Self {
        Self {
            members: vec![Vec::new(); agents],
        }
    }

    pub fn from_members(mut members: Vec<Vec<usize>>) -> Self {
        for m in &mut members {
            m.sort_unstable();
            m.dedup();
        }
        Self { members }
    }

    /// Same subset for the first `agents` agents; remaining agents get the empty set.
    pub fn symmetric(indices: &[usize], agents: usize, total_agents: usize) -> Self {
        let mut members = vec![indices.to_vec(); agents];
        members.resize(total_agents, Vec::new());
        Self::from_members(members)
    }

    pub fn is_empty(&self) -> bool {
        self.members.iter().all(Vec::is_empty)
    }

    pub(crate) fn masks(&self, inst: &DiscreteInstance) -> Vec<Vec<bool>> {
        inst.grids
            .iter()
            .enumerate()
            .map(|(i, g)| {
                let mut mask = vec![false; g.len()];
                if let Some(m) = self.members.get(i) {
                    for &t in m {
                        if t < mask.len() {
                            mask[t] = true;
                        }
                    }
                }
                mask
            })
            .collect()
    }
}

/// Interim rule `P_i(tau)` per agent and type index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct InterimRule(pub Vec<Vec<f64>>);

impl InterimRule {
    pub fn zeros(inst: &DiscreteInstance) -> Self {
        Self(inst.grids.iter().map(|g| vec![0.0; g.len()]).collect())
    }

    pub fn agent(&self, i: usize) -> &[f64] {
        &self.0[i]
    }

    pub(crate) fn validate(&self, inst: &DiscreteInstance) -> Result<()> {
        if self.0.len() != inst.agents() {
            return Err(FlowError::Shape(format!(
                "{} agents in rule, {} in instance",
                self.0.len(),
                inst.agents()
            )));
        }
        for (i, (row, g)) in self.0.iter().zip(&inst.grids).enumerate() {
            if row.len() != g.len() {
                return Err(FlowError::Shape(format!(
                    "agent {i}: {} values for {} types",
                    row.len(),
                    g.len()
                )));
            }
            for (index, &value) in row.iter().enumerate() {
                if !(-1e-12..=1.0 + 1e-12).contains(&value) {
                    return Err(FlowError::OutOfRange {
                        agent: i,
                        index,
                        value,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Finite-type allocation environment: per-agent grids, supply `h(t)` and eligible agents `J(t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteInstance {
    pub(crate) grids: Vec<AgentGrid>,
    pub(crate) capacity: ProfileMap<u32>,
    pub(crate) eligible: ProfileMap<AgentSet>,
}

impl DiscreteInstance {
    pub fn new(
        grids: Vec<AgentGrid>,
        capacity: ProfileMap<u32>,
        eligible: ProfileMap<AgentSet>,
    ) -> Result<Self> {
        if grids.len() > MAX_AGENTS {
            return Err(FlowError::TooManyAgents {
                got: grids.len(),
                max: MAX_AGENTS,
            });
        }
        for (i, g) in grids.iter().enumerate() {
            g.validate(i)?;
        }
        let inst = Self {
            grids,
            capacity,
            eligible,
        };
        let count = inst.profile_count_u128();
        for map_len in [dense_len(&inst.capacity), dense_len(&inst.eligible)]
            .into_iter()
            .flatten()
        {
            if map_len as u128 != count {
                return Err(FlowError::Shape(format!(
                    "dense profile map has {map_len} entries for {count} profiles"
                )));
            }
        }
        if let ProfileMap::Sparse { entries, .. } = &inst.capacity {
            for p in entries.keys() {
                inst.check_profile(p)?;
            }
        }
        if let ProfileMap::Sparse { entries, .. } = &inst.eligible {
            for p in entries.keys() {
                inst.check_profile(p)?;
            }
        }
        Ok(inst)
    }

    /// Identical grids for `agents` agents, constant supply, everyone eligible.
    pub fn symmetric(grid: AgentGrid, agents: usize, supply: u32) -> Result<Self> {
        Self::new(
            vec![grid; agents],
            ProfileMap::Constant(supply),
            ProfileMap::Constant(AgentSet::all(agents)),
        )
    }

    pub fn agents(&self) -> usize {
        self.grids.len()
    }

    pub fn grid(&self, agent: usize) -> &AgentGrid {
        &self.grids[agent]
    }

    pub fn grids(&self) -> &[AgentGrid] {
        &self.grids
    }

    pub fn capacity_map(&self) -> &ProfileMap<u32> {
        &self.capacity
    }

    pub fn eligibility_map(&self) -> &ProfileMap<AgentSet> {
        &self.eligible
    }

    fn profile_count_u128(&self) -> u128 {
        self.grids.iter().map(|g| g.len() as u128).product()
    }

    pub fn profile_count(&self) -> u128 {
        self.profile_count_u128()
    }

    pub(crate) fn ensure_enumerable(&self, cap: usize) -> Result<usize> {
        let count = self.profile_count_u128();
        if count > cap as u128 {
            return Err(FlowError::TooManyProfiles { count, cap });
        }
        Ok(count as usize)
    }

    fn check_profile(&self, profile: &[usize]) -> Result<()> {
        if profile.len() != self.agents() || profile.iter().zip(&self.grids).any(|(t, g)| *t >= g.len())
        {
            return Err(FlowError::BadProfile {
                profile: profile.to_vec(),
            });
        }
        Ok(())
    }

    /// Enumeration index of a profile (agent 0 varies slowest).
    pub fn profile_index(&self, profile: &[usize]) -> usize {
        profile
            .iter()
            .zip(&self.grids)
            .fold(0usize, |acc, (t, g)| acc * g.len() + t)
    }

    pub fn capacity(&self, index: usize, profile: &[usize]) -> u32 {
        self.capacity.get(index, profile)
    }

    pub fn eligible(&self, index: usize, profile: &[usize]) -> AgentSet {
        self.eligible.get(index, profile)
    }

    pub fn probability(&self, profile: &[usize]) -> f64 {
        profile
            .iter()
            .zip(&self.grids)
            .map(|(t, g)| g.masses[*t])
            .product()
    }

    /// Visits every profile in enumeration order as `(index, profile, probability)`.
    pub fn for_each_profile(&self, mut visit: impl FnMut(usize, &[usize], f64)) {
        let n = self.agents();
        if n == 0 {
            return;
        }
        let mut profile = vec![0usize; n];
        let mut index = 0usize;
        loop {
            visit(index, &profile, self.probability(&profile));
            index += 1;
            let mut i = n;
            loop {
                if i == 0 {
                    return;
                }
                i -= 1;
                profile[i] += 1;
                if profile[i] < self.grids[i].len() {
                    break;
                }
                profile[i] = 0;
            }
        }
    }
}

fn dense_len<T>(map: &ProfileMap<T>) -> Option<usize> {
    match map {
        ProfileMap::Dense(v) => Some(v.len()),
        _ => None,
    }
}
