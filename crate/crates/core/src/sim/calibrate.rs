//! Fitting lottery and audit weights to their interim targets.
//!
//! Each bin is sampled once with agent 0's type stratified inside the bin and the
//! other agents drawn iid. A sample whose outcome for agent 0 does not depend on the
//! weights is tallied directly. Otherwise it is reduced to agent 0's bin, the number
//! of free slots and the bins of the other contenders, and agent 0's exact inclusion
//! probability under successive weighted sampling is recomputed every round. The
//! rounds are a damped multiplicative fixed-point iteration on these fixed samples,
//! so the sampling noise is common to all of them.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::mechanism::{merit_stage, BinWeights, Scratch};
use crate::envelope::{ProblemInstance, Region, RegionPartition};
use crate::error::{CoreError, Result};
use crate::numeric::{integrate, QUAD_TOL};

pub(crate) const CHUNK: u64 = 1 << 16;

const DAMPING: f64 = 0.5;

/// Relative weight change below which the iteration has stalled.
const STALL: f64 = 1e-9;

/// Largest |z| accepted as converged.
pub const CONVERGED_Z: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationOptions {
    /// Total calibration samples, split evenly over the bins.
    pub trials: u64,
    /// Evenly spaced type cutoffs used to split regions into bins.
    pub edges: usize,
    pub max_rounds: usize,
    /// Stop iterating once every free bin is within this many standard errors.
    pub z_stop: f64,
    pub seed: u64,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        CalibrationOptions {
            trials: 1 << 23,
            edges: 64,
            max_rounds: 100,
            z_stop: 0.1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum CalibrationStage {
    Lottery,
    Audit,
}

impl CalibrationStage {
    fn name(self) -> &'static str {
        match self {
            CalibrationStage::Lottery => "lottery",
            CalibrationStage::Audit => "audit",
        }
    }

    fn salt(self) -> u64 {
        match self {
            CalibrationStage::Lottery => 0x6c6f_7474,
            CalibrationStage::Audit => 0x6175_6469,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    pub samples: u64,
    pub target: f64,
    pub empirical: f64,
    pub se: f64,
    pub z: f64,
    pub weight: f64,
    /// Whether the bin's outcome depends on the weights at all.
    pub free: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Calibration {
    pub stage: CalibrationStage,
    pub weights: BinWeights,
    pub bins: Vec<CalibrationBin>,
    pub rounds: usize,
    /// Over free bins.
    pub max_z: f64,
    pub converged: bool,
}

/// Samples whose outcome for agent 0 is fixed, and the weight-dependent rest.
#[derive(Default)]
struct Tally {
    samples: Vec<u64>,
    fixed: Vec<u64>,
    /// `[bin, slots, other bins (sorted)...] -> count`.
    contested: HashMap<Vec<u16>, u64>,
}

fn draw_in_bin(pieces: &[(f64, f64, f64)], dist: crate::TypeDistribution, rng: &mut impl Rng) -> f64 {
    // pieces: (F(lo), F(hi), cumulative mass up to and including this piece)
    let total = pieces.last().map_or(0.0, |p| p.2);
    let x = rng.gen::<f64>() * total;
    let (a, b, _) = pieces
        .iter()
        .find(|p| x < p.2)
        .copied()
        .unwrap_or(*pieces.last().expect("bins have pieces"));
    dist.quantile(a + rng.gen::<f64>() * (b - a))
}

#[allow(clippy::too_many_arguments)]
fn sample_chunk(
    stage: CalibrationStage,
    inst: &ProblemInstance,
    part: &RegionPartition,
    weights: &BinWeights,
    bin: usize,
    pieces: &[(f64, f64, f64)],
    count: u64,
    rng: &mut ChaCha8Rng,
) -> (u64, HashMap<Vec<u16>, u64>) {
    let n = inst.n;
    let mut types = vec![0.0; n];
    let mut s = Scratch::new(n);
    let mut key: Vec<u16> = Vec::with_capacity(n + 1);
    let mut fixed = 0u64;
    let mut contested: HashMap<Vec<u16>, u64> = HashMap::new();
    for _ in 0..count {
        types[0] = draw_in_bin(pieces, inst.dist, rng);
        for t in types.iter_mut().skip(1) {
            *t = inst.dist.quantile(rng.gen::<f64>());
        }
        let winners = merit_stage(&types, part, inst, &mut s);
        key.clear();
        key.push(bin as u16);
        let slots = match stage {
            CalibrationStage::Lottery => {
                if s.merit[0] {
                    continue;
                }
                for j in 1..n {
                    if !s.merit[j] && s.regions[j] != Region::Allo {
                        key.push(weights.bin_of(types[j]).expect("lottery types are binned") as u16);
                    }
                }
                inst.m.saturating_sub(winners)
            }
            CalibrationStage::Audit => {
                if !s.merit[0] {
                    continue;
                }
                if winners <= inst.k {
                    fixed += 1;
                    continue;
                }
                let mut aud = 0;
                for j in 1..n {
                    if !s.merit[j] {
                        continue;
                    }
                    if s.regions[j] == Region::Aud {
                        aud += 1;
                    } else {
                        key.push(weights.bin_of(types[j]).expect("allo types are binned") as u16);
                    }
                }
                inst.k.saturating_sub(aud)
            }
        };
        let others = key.len() - 1;
        if slots == 0 {
            continue;
        }
        if slots > others {
            fixed += 1;
            continue;
        }
        key.insert(1, slots as u16);
        key[2..].sort_unstable();
        match contested.get_mut(key.as_slice()) {
            Some(c) => *c += 1,
            None => {
                contested.insert(key.clone(), 1);
            }
        }
    }
    (fixed, contested)
}

/// Probability that item 0 is among `slots` successive weighted draws without
/// replacement from `{0} ∪ others`, given as `(weight, multiplicity)` groups.
pub(crate) fn inclusion(w0: f64, groups: &[(f64, u32)], slots: usize) -> f64 {
    fn rec(w0: f64, groups: &mut Vec<(f64, u32)>, slots: usize, memo: &mut HashMap<(Vec<u32>, usize), f64>) -> f64 {
        let rest: u32 = groups.iter().map(|g| g.1).sum();
        if slots == 0 {
            return 0.0;
        }
        if slots > rest as usize {
            return 1.0;
        }
        let total = w0 + groups.iter().map(|g| g.0 * g.1 as f64).sum::<f64>();
        if slots == 1 {
            return w0 / total;
        }
        let key = (groups.iter().map(|g| g.1).collect::<Vec<_>>(), slots);
        if let Some(&v) = memo.get(&key) {
            return v;
        }
        let mut p = w0 / total;
        for j in 0..groups.len() {
            let (w, c) = groups[j];
            if c == 0 {
                continue;
            }
            groups[j].1 -= 1;
            p += c as f64 * w / total * rec(w0, groups, slots - 1, memo);
            groups[j].1 += 1;
        }
        memo.insert(key, p);
        p
    }
    let mut g = groups.to_vec();
    rec(w0, &mut g, slots, &mut HashMap::new())
}

fn bin_targets(
    stage: CalibrationStage,
    inst: &ProblemInstance,
    part: &RegionPartition,
    weights: &BinWeights,
) -> Vec<f64> {
    (0..weights.bins())
        .map(|b| match stage {
            CalibrationStage::Lottery => part.phi,
            CalibrationStage::Audit => {
                let (mut mass, mut total) = (0.0, 0.0);
                for (lo, hi) in weights.pieces_of(b) {
                    let (a, c) = (inst.dist.cdf(lo), inst.dist.cdf(hi));
                    let region = part.region_of(lo);
                    mass += c - a;
                    total += integrate(|u| inst.branch_p(region, u, part.phi) - part.phi, a, c, QUAD_TOL);
                }
                if mass > 0.0 {
                    total / mass
                } else {
                    0.0
                }
            }
        })
        .collect()
}

/// Calibrates weights for one stage.
pub fn calibrate(
    stage: CalibrationStage,
    inst: &ProblemInstance,
    part: &RegionPartition,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    let mut weights = match stage {
        CalibrationStage::Lottery => {
            BinWeights::over_regions(part, &[Region::Ic, Region::Aud], &[Region::Ic], opts.edges)
        }
        CalibrationStage::Audit => BinWeights::over_regions(part, &[Region::Allo], &[], opts.edges),
    };
    let bins = weights.bins();
    let targets = bin_targets(stage, inst, part, &weights);
    let pieces: Vec<Vec<(f64, f64, f64)>> = (0..bins)
        .map(|b| {
            let mut acc = 0.0;
            weights
                .pieces_of(b)
                .map(|(lo, hi)| {
                    let (a, c) = (inst.dist.cdf(lo), inst.dist.cdf(hi));
                    acc += c - a;
                    (a, c, acc)
                })
                .collect()
        })
        .collect();

    let per_bin = if bins == 0 { 0 } else { (opts.trials / bins as u64).max(1) };
    let jobs: Vec<(usize, u64, u64)> = (0..bins)
        .flat_map(|b| {
            let chunks = per_bin.div_ceil(CHUNK);
            (0..chunks).map(move |c| (b, c, CHUNK.min(per_bin - c * CHUNK)))
        })
        .collect();
    let seed = opts.seed ^ stage.salt();
    let results: Vec<(usize, u64, u64, HashMap<Vec<u16>, u64>)> = jobs
        .par_iter()
        .enumerate()
        .map(|(stream, &(b, _, count))| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(stream as u64);
            let (fixed, contested) = sample_chunk(stage, inst, part, &weights, b, &pieces[b], count, &mut rng);
            (b, count, fixed, contested)
        })
        .collect();

    let mut tally = Tally {
        samples: vec![0; bins],
        fixed: vec![0; bins],
        contested: HashMap::new(),
    };
    for (b, count, fixed, contested) in results {
        tally.samples[b] += count;
        tally.fixed[b] += fixed;
        for (k, c) in contested {
            *tally.contested.entry(k).or_insert(0) += c;
        }
    }
    // Sorted so every round sums in the same order.
    let records: BTreeMap<Vec<u16>, u64> = tally.contested.into_iter().collect();
    let mut free = vec![false; bins];
    if bins > 1 {
        for k in records.keys() {
            free[k[0] as usize] = true;
        }
    }

    let se: Vec<f64> = (0..bins)
        .map(|b| (targets[b] * (1.0 - targets[b]) / tally.samples[b].max(1) as f64).sqrt())
        .collect();
    let z_of = |emp: f64, b: usize| -> f64 {
        let d = emp - targets[b];
        if se[b] > 0.0 {
            d / se[b]
        } else if d.abs() < 1e-12 {
            0.0
        } else {
            f64::INFINITY.copysign(d)
        }
    };
    let empirical = |w: &BinWeights| -> Vec<f64> {
        let mut hits: Vec<f64> = tally.fixed.iter().map(|&f| f as f64).collect();
        let mut groups: Vec<(f64, u32)> = Vec::new();
        for (key, &count) in &records {
            let b = key[0] as usize;
            groups.clear();
            for &o in &key[2..] {
                match groups.last_mut() {
                    Some(g) if g.0 == w.weights[o as usize] => g.1 += 1,
                    _ => groups.push((w.weights[o as usize], 1)),
                }
            }
            hits[b] += count as f64 * inclusion(w.weights[b], &groups, key[1] as usize);
        }
        hits.iter()
            .zip(&tally.samples)
            .map(|(h, &s)| if s > 0 { h / s as f64 } else { 0.0 })
            .collect()
    };

    let mut rounds = 0;
    let mut emp = empirical(&weights);
    let mut max_z = max_free_z(&emp, &free, &z_of);
    while rounds < opts.max_rounds {
        rounds += 1;
        if max_z < opts.z_stop {
            break;
        }
        let before = weights.weights.clone();
        for b in (0..bins).filter(|&b| free[b]) {
            let ratio = if emp[b] > 0.0 { targets[b] / emp[b] } else { 2.0 };
            weights.weights[b] *= 1.0 + DAMPING * (ratio - 1.0);
        }
        weights.normalize();
        emp = empirical(&weights);
        // Weights only share out a fixed supply; once they stop moving the
        // remaining gap is sampling noise in the total.
        let moved = before
            .iter()
            .zip(&weights.weights)
            .map(|(a, b)| (a - b).abs() / a.max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        if moved < STALL {
            max_z = max_free_z(&emp, &free, &z_of);
            break;
        }
        max_z = max_free_z(&emp, &free, &z_of);
    }
    let converged = max_z < CONVERGED_Z;
    log::info!(
        "{} calibration: {bins} bins, {rounds} rounds, max |z| = {max_z:.3}",
        stage.name()
    );
    if !converged {
        return Err(CoreError::CalibrationDiverged {
            stage: stage.name(),
            rounds,
            max_z,
        });
    }
    let bins_out = (0..bins)
        .map(|b| {
            let span = weights.pieces_of(b).fold((f64::INFINITY, f64::NEG_INFINITY), |acc, p| {
                (acc.0.min(p.0), acc.1.max(p.1))
            });
            CalibrationBin {
                lo: span.0,
                hi: span.1,
                samples: tally.samples[b],
                target: targets[b],
                empirical: emp[b],
                se: se[b],
                z: z_of(emp[b], b),
                weight: weights.weights[b],
                free: free[b],
            }
        })
        .collect();
    Ok(Calibration {
        stage,
        weights,
        bins: bins_out,
        rounds,
        max_z,
        converged,
    })
}

fn max_free_z(emp: &[f64], free: &[bool], z_of: &impl Fn(f64, usize) -> f64) -> f64 {
    (0..emp.len())
        .filter(|&b| free[b])
        .map(|b| z_of(emp[b], b).abs())
        .fold(0.0, f64::max)
}

pub fn calibrate_lottery(
    inst: &ProblemInstance,
    part: &RegionPartition,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    calibrate(CalibrationStage::Lottery, inst, part, opts)
}

pub fn calibrate_audit(
    inst: &ProblemInstance,
    part: &RegionPartition,
    opts: &CalibrationOptions,
) -> Result<Calibration> {
    calibrate(CalibrationStage::Audit, inst, part, opts)
}
