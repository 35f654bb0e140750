//! The three ex-post stages: merit, lottery and audit selection.

use rand::Rng;
use serde::Serialize;

use crate::envelope::{ProblemInstance, Region, RegionPartition};

/// Piecewise-constant positive weights over disjoint type intervals.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinWeights {
    /// `(lo, hi, bin)`, sorted and disjoint; a bin may own several pieces.
    pub pieces: Vec<(f64, f64, usize)>,
    pub weights: Vec<f64>,
}

impl BinWeights {
    /// Pieces are `labels` intervals of the partition cut at `edges` evenly spaced
    /// type cutoffs; `pooled` regions get one bin for all their intervals.
    pub fn over_regions(
        part: &RegionPartition,
        labels: &[Region],
        pooled: &[Region],
        edges: usize,
    ) -> Self {
        let mut pieces = Vec::new();
        let mut bins = 0usize;
        let mut pooled_bin: Vec<(Region, usize)> = Vec::new();
        for iv in part.intervals.iter().filter(|iv| labels.contains(&iv.label)) {
            if iv.hi <= iv.lo {
                continue;
            }
            if pooled.contains(&iv.label) {
                let bin = match pooled_bin.iter().find(|(r, _)| *r == iv.label) {
                    Some(&(_, b)) => b,
                    None => {
                        pooled_bin.push((iv.label, bins));
                        bins += 1;
                        bins - 1
                    }
                };
                pieces.push((iv.lo, iv.hi, bin));
                continue;
            }
            let e = edges.max(1) as f64;
            let first = (iv.lo * e).floor() as usize;
            let last = ((iv.hi * e).ceil() as usize).max(first + 1);
            for j in first..last {
                let lo = iv.lo.max(j as f64 / e);
                let hi = iv.hi.min((j + 1) as f64 / e);
                if hi > lo {
                    pieces.push((lo, hi, bins));
                    bins += 1;
                }
            }
        }
        pieces.sort_by(|a, b| a.0.total_cmp(&b.0));
        BinWeights {
            pieces,
            weights: vec![1.0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.weights.len()
    }

    pub fn bin_of(&self, t: f64) -> Option<usize> {
        let idx = self.pieces.partition_point(|p| p.1 <= t);
        match self.pieces.get(idx) {
            Some(&(lo, _, bin)) if lo <= t => Some(bin),
            // The top piece is closed on the right.
            _ => self
                .pieces
                .last()
                .filter(|p| p.1 == t && t >= 1.0)
                .map(|p| p.2),
        }
    }

    /// Weight of type `t`; types outside every piece weigh 1.
    pub fn weight(&self, t: f64) -> f64 {
        self.bin_of(t).map_or(1.0, |b| self.weights[b])
    }

    /// Pieces of `bin` in type space.
    pub fn pieces_of(&self, bin: usize) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.pieces.iter().filter(move |p| p.2 == bin).map(|p| (p.0, p.1))
    }

    pub(crate) fn normalize(&mut self) {
        let top = self.weights.iter().copied().fold(0.0, f64::max);
        if top > 0.0 {
            self.weights.iter_mut().for_each(|w| *w /= top);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Merit,
    Lottery,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProfileOutcome {
    pub profile: Vec<f64>,
    /// Sorted agent indices.
    pub allocated: Vec<usize>,
    pub audited: Vec<usize>,
    pub stage: Vec<Stage>,
}

/// A merit-with-guarantee mechanism with calibrated lottery and audit weights.
#[derive(Debug, Clone, Serialize)]
pub struct Mechanism {
    pub inst: ProblemInstance,
    pub partition: RegionPartition,
    pub lottery: BinWeights,
    pub audit: BinWeights,
}

/// Scratch space reused across profiles.
#[derive(Debug, Default, Clone)]
pub(crate) struct Scratch {
    pub order: Vec<usize>,
    pub regions: Vec<Region>,
    pub merit: Vec<bool>,
    pub pool: Vec<usize>,
    pub pool_w: Vec<f64>,
    pub picked: Vec<usize>,
}

impl Scratch {
    pub fn new(n: usize) -> Self {
        Scratch {
            order: Vec::with_capacity(n),
            regions: Vec::with_capacity(n),
            merit: Vec::with_capacity(n),
            pool: Vec::with_capacity(n),
            pool_w: Vec::with_capacity(n),
            picked: Vec::with_capacity(n),
        }
    }
}

/// Successive weighted sampling of `draws` items without replacement; appends to `out`.
pub(crate) fn weighted_draws(
    items: &mut Vec<usize>,
    weights: &mut Vec<f64>,
    draws: usize,
    rng: &mut impl Rng,
    out: &mut Vec<usize>,
) {
    if draws >= items.len() {
        out.extend_from_slice(items);
        return;
    }
    for _ in 0..draws {
        let total: f64 = weights.iter().sum();
        let mut x = rng.gen::<f64>() * total;
        let mut pick = items.len() - 1;
        for (j, w) in weights.iter().enumerate() {
            if x < *w {
                pick = j;
                break;
            }
            x -= w;
        }
        out.push(items.swap_remove(pick));
        weights.swap_remove(pick);
    }
}

impl Mechanism {
    /// Merit stage into `s.merit`; returns the number of winners.
    pub(crate) fn merit_into(&self, types: &[f64], s: &mut Scratch) -> usize {
        merit_stage(types, &self.partition, &self.inst, s)
    }

    /// Runs all three stages on one profile.
    pub fn run(&self, types: &[f64], rng: &mut impl Rng) -> ProfileOutcome {
        let mut s = Scratch::new(types.len());
        let mut allocated = Vec::new();
        let mut audited = Vec::new();
        let mut stage = Vec::new();
        self.run_into(types, rng, &mut s, &mut allocated, &mut audited, &mut stage);
        allocated.sort_unstable();
        audited.sort_unstable();
        ProfileOutcome {
            profile: types.to_vec(),
            allocated,
            audited,
            stage,
        }
    }

    pub(crate) fn run_into(
        &self,
        types: &[f64],
        rng: &mut impl Rng,
        s: &mut Scratch,
        allocated: &mut Vec<usize>,
        audited: &mut Vec<usize>,
        stage: &mut Vec<Stage>,
    ) {
        let n = types.len();
        let winners = self.merit_into(types, s);
        stage.clear();
        stage.extend((0..n).map(|i| if s.merit[i] { Stage::Merit } else { Stage::None }));
        allocated.clear();
        allocated.extend((0..n).filter(|&i| s.merit[i]));

        // Lottery among non-winners in the aud and ic regions.
        let remaining = self.inst.m.saturating_sub(winners);
        s.pool.clear();
        s.pool_w.clear();
        for i in 0..n {
            if !s.merit[i] && s.regions[i] != Region::Allo {
                s.pool.push(i);
                s.pool_w.push(self.lottery.weight(types[i]));
            }
        }
        s.picked.clear();
        weighted_draws(&mut s.pool, &mut s.pool_w, remaining, rng, &mut s.picked);
        for &i in &s.picked {
            stage[i] = Stage::Lottery;
            allocated.push(i);
        }

        // Audits: every merit winner if they fit; otherwise all aud winners plus a
        // weighted draw among the allo winners.
        audited.clear();
        if winners <= self.inst.k {
            audited.extend((0..n).filter(|&i| s.merit[i]));
            return;
        }
        s.pool.clear();
        s.pool_w.clear();
        for i in 0..n {
            if !s.merit[i] {
                continue;
            }
            if s.regions[i] == Region::Aud {
                audited.push(i);
            } else {
                s.pool.push(i);
                s.pool_w.push(self.audit.weight(types[i]));
            }
        }
        let slots = self.inst.k.saturating_sub(audited.len());
        weighted_draws(&mut s.pool, &mut s.pool_w, slots, rng, audited);
    }
}

/// Fills `s.order` (descending type), `s.regions` and `s.merit`; returns the
/// number of merit winners. Any exact tie leaves the merit stage empty.
pub(crate) fn merit_stage(
    types: &[f64],
    part: &RegionPartition,
    inst: &ProblemInstance,
    s: &mut Scratch,
) -> usize {
    let n = types.len();
    s.order.clear();
    s.order.extend(0..n);
    s.order
        .sort_unstable_by(|&a, &b| types[b].total_cmp(&types[a]));
    s.regions.clear();
    s.regions.extend(types.iter().map(|&t| part.region_of(t)));
    s.merit.clear();
    s.merit.resize(n, false);
    if s.order.windows(2).any(|w| types[w[0]] == types[w[1]]) {
        return 0;
    }
    let mut winners = 0;
    for (rank, &i) in s.order.iter().enumerate() {
        let win = match s.regions[i] {
            Region::Allo => rank < inst.m,
            Region::Aud => rank < inst.k,
            Region::Ic => false,
        };
        if win {
            s.merit[i] = true;
            winners += 1;
        }
    }
    winners
}

/// Agents allocated in the merit stage, sorted.
pub fn merit_allocate(profile: &[f64], part: &RegionPartition, inst: &ProblemInstance) -> Vec<usize> {
    let mut s = Scratch::new(profile.len());
    merit_stage(profile, part, inst, &mut s);
    (0..profile.len()).filter(|&i| s.merit[i]).collect()
}

/// Second stage: `m - |merit_winners|` objects drawn by weight among the
/// non-winners whose types lie in the aud or ic regions. Returns sorted agents.
pub fn lottery_allocate(
    profile: &[f64],
    merit_winners: &[usize],
    weights: &BinWeights,
    part: &RegionPartition,
    inst: &ProblemInstance,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut items: Vec<usize> = (0..profile.len())
        .filter(|i| !merit_winners.contains(i) && part.region_of(profile[*i]) != Region::Allo)
        .collect();
    let mut w: Vec<f64> = items.iter().map(|&i| weights.weight(profile[i])).collect();
    let mut out = Vec::new();
    let remaining = inst.m.saturating_sub(merit_winners.len());
    weighted_draws(&mut items, &mut w, remaining, rng, &mut out);
    out.sort_unstable();
    out
}

/// Audit set among the merit winners: all of them when at most `k`; otherwise
/// every aud winner plus a weighted draw among allo winners. Returns sorted agents.
pub fn audit_select(
    profile: &[f64],
    merit_winners: &[usize],
    weights: &BinWeights,
    part: &RegionPartition,
    inst: &ProblemInstance,
    rng: &mut impl Rng,
) -> Vec<usize> {
    let mut out: Vec<usize> = Vec::new();
    if merit_winners.len() <= inst.k {
        out.extend_from_slice(merit_winners);
    } else {
        let (aud, mut allo): (Vec<usize>, Vec<usize>) = merit_winners
            .iter()
            .partition(|&&i| part.region_of(profile[i]) == Region::Aud);
        out.extend_from_slice(&aud);
        let mut w: Vec<f64> = allo.iter().map(|&i| weights.weight(profile[i])).collect();
        let slots = inst.k.saturating_sub(out.len());
        weighted_draws(&mut allo, &mut w, slots, rng, &mut out);
    }
    out.sort_unstable();
    out
}
