//! JSON format for instances and interim rules.
//!
//! ```json
//! {
//!   "agents": [{"types": [0, 1], "masses": [0.5, 0.5]}],
//!   "capacity": {"default": 1, "entries": [{"profile": [0], "value": 0}]},
//!   "eligible": {"default": null, "entries": [{"profile": [1], "agents": [0]}]}
//! }
//! ```
//! A `null` eligibility default means every agent.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{FlowError, Result};
use crate::instance::{AgentGrid, AgentSet, DiscreteInstance, InterimRule, ProfileMap};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub agents: Vec<AgentGrid>,
    #[serde(default)]
    pub capacity: CapacityTable,
    #[serde(default)]
    pub eligible: EligibilityTable,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityTable {
    pub default: u32,
    #[serde(default)]
    pub entries: Vec<CapacityEntry>,
}

impl Default for CapacityTable {
    fn default() -> Self {
        Self {
            default: 1,
            entries: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CapacityEntry {
    pub profile: Vec<usize>,
    pub value: u32,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityTable {
    pub default: Option<Vec<usize>>,
    #[serde(default)]
    pub entries: Vec<EligibilityEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EligibilityEntry {
    pub profile: Vec<usize>,
    pub agents: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleFile {
    pub interim: InterimRule,
}

fn agent_set(agents: &[usize], n: usize) -> Result<AgentSet> {
    if let Some(bad) = agents.iter().find(|a| **a >= n) {
        return Err(FlowError::Format(format!("agent {bad} out of range for {n} agents")));
    }
    Ok(AgentSet::from_agents(agents.iter().copied()))
}

impl InstanceFile {
    pub fn into_instance(self) -> Result<DiscreteInstance> {
        let n = self.agents.len();
        let capacity = if self.capacity.entries.is_empty() {
            ProfileMap::Constant(self.capacity.default)
        } else {
            let mut entries = BTreeMap::new();
            for e in self.capacity.entries {
                if entries.insert(e.profile.clone(), e.value).is_some() {
                    return Err(FlowError::Format(format!(
                        "duplicate capacity entry for {:?}",
                        e.profile
                    )));
                }
            }
            ProfileMap::Sparse {
                default: self.capacity.default,
                entries,
            }
        };
        let default = match &self.eligible.default {
            Some(a) => agent_set(a, n)?,
            None => AgentSet::all(n),
        };
        let eligible = if self.eligible.entries.is_empty() {
            ProfileMap::Constant(default)
        } else {
            let mut entries = BTreeMap::new();
            for e in self.eligible.entries {
                let set = agent_set(&e.agents, n)?;
                if entries.insert(e.profile.clone(), set).is_some() {
                    return Err(FlowError::Format(format!(
                        "duplicate eligibility entry for {:?}",
                        e.profile
                    )));
                }
            }
            ProfileMap::Sparse { default, entries }
        };
        DiscreteInstance::new(self.agents, capacity, eligible)
    }

    /// Sparse form of an instance; dense maps keep their most common value as the default.
    pub fn from_instance(inst: &DiscreteInstance) -> Self {
        let n = inst.agents();
        let mut profiles = Vec::new();
        let dense = matches!(inst.capacity_map(), ProfileMap::Dense(_))
            || matches!(inst.eligibility_map(), ProfileMap::Dense(_));
        if dense {
            inst.for_each_profile(|_, p, _| profiles.push(p.to_vec()));
        }
        let capacity = match inst.capacity_map() {
            ProfileMap::Constant(h) => CapacityTable {
                default: *h,
                entries: Vec::new(),
            },
            ProfileMap::Sparse { default, entries } => CapacityTable {
                default: *default,
                entries: entries
                    .iter()
                    .map(|(p, v)| CapacityEntry {
                        profile: p.clone(),
                        value: *v,
                    })
                    .collect(),
            },
            ProfileMap::Dense(values) => {
                let default = most_common(values);
                CapacityTable {
                    default,
                    entries: profiles
                        .iter()
                        .zip(values)
                        .filter(|(_, v)| **v != default)
                        .map(|(p, v)| CapacityEntry {
                            profile: p.clone(),
                            value: *v,
                        })
                        .collect(),
                }
            }
        };
        let all = AgentSet::all(n);
        let default_field = |s: AgentSet| (s != all).then(|| s.iter().collect());
        let entry = |p: &Vec<usize>, s: &AgentSet| EligibilityEntry {
            profile: p.clone(),
            agents: s.iter().collect(),
        };
        let eligible = match inst.eligibility_map() {
            ProfileMap::Constant(s) => EligibilityTable {
                default: default_field(*s),
                entries: Vec::new(),
            },
            ProfileMap::Sparse { default, entries } => EligibilityTable {
                default: default_field(*default),
                entries: entries.iter().map(|(p, s)| entry(p, s)).collect(),
            },
            ProfileMap::Dense(values) => {
                let default = most_common(values);
                EligibilityTable {
                    default: default_field(default),
                    entries: profiles
                        .iter()
                        .zip(values)
                        .filter(|(_, s)| **s != default)
                        .map(|(p, s)| entry(p, s))
                        .collect(),
                }
            }
        };
        Self {
            agents: inst.grids().to_vec(),
            capacity,
            eligible,
        }
    }
}

fn most_common<T: Copy + Eq + std::hash::Hash + Ord>(values: &[T]) -> T {
    let mut counts: HashMap<T, usize> = HashMap::new();
    for v in values {
        *counts.entry(*v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(v, _)| v)
        .expect("non-empty profile map")
}

pub fn parse_instance(json: &str) -> Result<DiscreteInstance> {
    serde_json::from_str::<InstanceFile>(json)?.into_instance()
}

pub fn instance_to_json(inst: &DiscreteInstance) -> Result<String> {
    Ok(serde_json::to_string_pretty(&InstanceFile::from_instance(inst))?)
}

pub fn parse_rule(json: &str) -> Result<InterimRule> {
    Ok(serde_json::from_str::<RuleFile>(json)?.interim)
}

pub const FOOTNOTE_INSTANCE: &str = include_str!("../../../data/footnote/instance.json");
pub const FOOTNOTE_RULE: &str = include_str!("../../../data/footnote/rule.json");

/// The two-agent example where every upper set passes but the rule is infeasible.
pub fn footnote() -> (DiscreteInstance, InterimRule) {
    let inst = parse_instance(FOOTNOTE_INSTANCE).expect("bundled instance parses");
    let rule = parse_rule(FOOTNOTE_RULE).expect("bundled rule parses");
    (inst, rule)
}
