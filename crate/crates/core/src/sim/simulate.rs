//! Monte Carlo validation of a calibrated mechanism against its interim targets.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use super::calibrate::{calibrate_audit, calibrate_lottery, Calibration, CalibrationOptions, CHUNK};
use super::mechanism::{Mechanism, Scratch, Stage};
use crate::envelope::{partition, ProblemInstance, Region, RegionPartition};
use crate::error::Result;
use crate::numeric::{integrate, QUAD_TOL};
use crate::optimizer::payoff;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SimConfig {
    pub trials: u64,
    pub seed: u64,
    /// Evenly spaced type bins for reporting and for splitting calibration regions.
    pub bins: usize,
    pub lottery_trials: u64,
    pub audit_trials: u64,
    pub max_rounds: usize,
    pub z_stop: f64,
    /// Half-width of the acceptance band in standard errors.
    pub band: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            trials: 1_000_000,
            seed: 0,
            bins: 64,
            lottery_trials: 1 << 23,
            audit_trials: 1 << 25,
            max_rounds: 100,
            z_stop: 0.1,
            band: 3.0,
        }
    }
}

impl SimConfig {
    fn calibration(&self, trials: u64) -> CalibrationOptions {
        CalibrationOptions {
            trials,
            edges: self.bins,
            max_rounds: self.max_rounds,
            z_stop: self.z_stop,
            // Keep calibration samples independent of the validation stream.
            seed: self.seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinStat {
    pub lo: f64,
    pub hi: f64,
    pub observations: u64,
    pub p_target: f64,
    pub p_hat: f64,
    pub a_target: f64,
    pub a_hat: f64,
    /// Merit stage alone: `P` on allo, `P - phi` on aud, 0 on ic.
    pub merit_target: f64,
    pub merit_hat: f64,
    pub se_p: f64,
    pub se_a: f64,
    pub se_merit: f64,
    pub z_p: f64,
    pub z_a: f64,
    pub z_merit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    pub instance: ProblemInstance,
    pub phi: f64,
    pub trials: u64,
    pub seed: u64,
    pub band: f64,
    pub bins: Vec<BinStat>,
    pub max_dev_p: f64,
    pub max_dev_a: f64,
    pub within_p: usize,
    pub within_a: usize,
    pub within_merit: usize,
    pub capacity_violations: u64,
    /// Mean over profiles of the summed types of allocated agents.
    pub payoff_hat: f64,
    pub payoff_se: f64,
    pub payoff_target: f64,
    pub lottery: Option<Calibration>,
    pub audit: Option<Calibration>,
}

impl SimReport {
    /// No capacity violations and at least `min_bins` bins within the band for
    /// both `P` and `A`.
    pub fn passes(&self, min_bins: usize) -> bool {
        self.capacity_violations == 0 && self.within_p >= min_bins && self.within_a >= min_bins
    }
}

/// Calibrates lottery and audit weights for the merit-with-guarantee rule at `phi`.
pub fn build_mechanism(
    inst: &ProblemInstance,
    phi: f64,
    cfg: &SimConfig,
) -> Result<(Mechanism, Calibration, Calibration)> {
    let part = partition(phi, inst)?;
    let lottery = calibrate_lottery(inst, &part, &cfg.calibration(cfg.lottery_trials))?;
    let audit = calibrate_audit(inst, &part, &cfg.calibration(cfg.audit_trials))?;
    let mech = Mechanism {
        inst: *inst,
        partition: part,
        lottery: lottery.weights.clone(),
        audit: audit.weights.clone(),
    };
    Ok((mech, lottery, audit))
}

/// Calibrates and then simulates `cfg.trials` truthful profiles.
pub fn simulate(inst: &ProblemInstance, phi: f64, cfg: &SimConfig) -> Result<SimReport> {
    inst.validate()?;
    inst.check_phi(phi)?;
    if cfg.trials == 0 {
        let part = partition(phi, inst)?;
        return Ok(empty_report(inst, &part, cfg, payoff(phi, inst)?));
    }
    let (mech, lottery, audit) = build_mechanism(inst, phi, cfg)?;
    let mut report = simulate_mechanism(&mech, cfg)?;
    report.lottery = Some(lottery);
    report.audit = Some(audit);
    Ok(report)
}

#[derive(Clone)]
struct Acc {
    obs: Vec<u64>,
    p: Vec<u64>,
    a: Vec<u64>,
    merit: Vec<u64>,
    payoff: f64,
    payoff_sq: f64,
    violations: u64,
}

impl Acc {
    fn new(bins: usize) -> Self {
        Acc {
            obs: vec![0; bins],
            p: vec![0; bins],
            a: vec![0; bins],
            merit: vec![0; bins],
            payoff: 0.0,
            payoff_sq: 0.0,
            violations: 0,
        }
    }

    fn merge(&mut self, other: &Acc) {
        for (x, y) in [
            (&mut self.obs, &other.obs),
            (&mut self.p, &other.p),
            (&mut self.a, &other.a),
            (&mut self.merit, &other.merit),
        ] {
            x.iter_mut().zip(y).for_each(|(a, b)| *a += b);
        }
        self.payoff += other.payoff;
        self.payoff_sq += other.payoff_sq;
        self.violations += other.violations;
    }
}

fn violates(n: usize, m: usize, k: usize, allocated: &[usize], audited: &[usize]) -> bool {
    let mut seen = vec![false; n];
    for &i in allocated {
        if seen[i] {
            return true;
        }
        seen[i] = true;
    }
    allocated.len() > m || audited.len() > k || audited.iter().any(|&i| !seen[i])
        || audited.iter().enumerate().any(|(j, i)| audited[..j].contains(i))
}

/// Simulates an already calibrated mechanism.
pub fn simulate_mechanism(mech: &Mechanism, cfg: &SimConfig) -> Result<SimReport> {
    let inst = &mech.inst;
    let part = &mech.partition;
    let phi = part.phi;
    let bins = cfg.bins.max(1);
    let chunks = cfg.trials.div_ceil(CHUNK);
    let accs: Vec<Acc> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(c);
            let count = CHUNK.min(cfg.trials - c * CHUNK);
            let n = inst.n;
            let mut acc = Acc::new(bins);
            let mut s = Scratch::new(n);
            let mut types = vec![0.0; n];
            let (mut allocated, mut audited, mut stage) = (Vec::new(), Vec::new(), Vec::new());
            for _ in 0..count {
                for t in types.iter_mut() {
                    *t = inst.dist.quantile(rng.gen::<f64>());
                }
                mech.run_into(&types, &mut rng, &mut s, &mut allocated, &mut audited, &mut stage);
                if violates(n, inst.m, inst.k, &allocated, &audited) {
                    acc.violations += 1;
                }
                let mut value = 0.0;
                for &i in &allocated {
                    value += types[i];
                }
                acc.payoff += value;
                acc.payoff_sq += value * value;
                for i in 0..n {
                    let b = ((types[i] * bins as f64) as usize).min(bins - 1);
                    acc.obs[b] += 1;
                    if stage[i] != Stage::None {
                        acc.p[b] += 1;
                    }
                    if stage[i] == Stage::Merit {
                        acc.merit[b] += 1;
                    }
                }
                for &i in &audited {
                    let b = ((types[i] * bins as f64) as usize).min(bins - 1);
                    acc.a[b] += 1;
                }
            }
            acc
        })
        .collect();
    let mut total = Acc::new(bins);
    for a in &accs {
        total.merge(a);
    }

    let mut report = empty_report(inst, part, cfg, payoff(phi, inst)?);
    let trials = cfg.trials as f64;
    report.trials = cfg.trials;
    report.payoff_hat = total.payoff / trials;
    let var = (total.payoff_sq / trials - report.payoff_hat.powi(2)).max(0.0);
    report.payoff_se = (var / trials).sqrt();
    report.capacity_violations = total.violations;
    for (b, stat) in report.bins.iter_mut().enumerate() {
        let obs = total.obs[b];
        stat.observations = obs;
        let rate = |x: u64| if obs > 0 { x as f64 / obs as f64 } else { 0.0 };
        stat.p_hat = rate(total.p[b]);
        stat.a_hat = rate(total.a[b]);
        stat.merit_hat = rate(total.merit[b]);
        (stat.se_p, stat.z_p) = zscore(stat.p_hat, stat.p_target, obs);
        (stat.se_a, stat.z_a) = zscore(stat.a_hat, stat.a_target, obs);
        (stat.se_merit, stat.z_merit) = zscore(stat.merit_hat, stat.merit_target, obs);
    }
    let within = |z: fn(&BinStat) -> f64| report.bins.iter().filter(|s| z(s).abs() <= cfg.band).count();
    report.within_p = within(|s| s.z_p);
    report.within_a = within(|s| s.z_a);
    report.within_merit = within(|s| s.z_merit);
    report.max_dev_p = report.bins.iter().map(|s| (s.p_hat - s.p_target).abs()).fold(0.0, f64::max);
    report.max_dev_a = report.bins.iter().map(|s| (s.a_hat - s.a_target).abs()).fold(0.0, f64::max);
    Ok(report)
}

fn zscore(hat: f64, target: f64, obs: u64) -> (f64, f64) {
    if obs == 0 {
        return (0.0, 0.0);
    }
    let se = (target * (1.0 - target) / obs as f64).max(0.0).sqrt();
    let d = hat - target;
    let z = if se > 0.0 {
        d / se
    } else if d.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY.copysign(d)
    };
    (se, z)
}

/// `dF`-average over `[lo, hi]` of `f(region, u)` in quantile space.
fn bin_average(
    inst: &ProblemInstance,
    part: &RegionPartition,
    lo: f64,
    hi: f64,
    f: impl Fn(Region, f64) -> f64,
) -> f64 {
    let (a, b) = (inst.dist.cdf(lo), inst.dist.cdf(hi));
    if b <= a {
        return f(part.region_of(lo), a);
    }
    let total: f64 = part
        .intervals
        .iter()
        .filter(|iv| iv.q_hi > a && iv.q_lo < b)
        .map(|iv| integrate(|u| f(iv.label, u), iv.q_lo.max(a), iv.q_hi.min(b), QUAD_TOL))
        .sum();
    total / (b - a)
}

fn empty_report(inst: &ProblemInstance, part: &RegionPartition, cfg: &SimConfig, target: f64) -> SimReport {
    let bins = cfg.bins.max(1);
    let phi = part.phi;
    let stats = (0..bins)
        .map(|b| {
            let (lo, hi) = (b as f64 / bins as f64, (b + 1) as f64 / bins as f64);
            let p = |r: Region, u: f64| inst.branch_p(r, u, phi);
            let p_target = bin_average(inst, part, lo, hi, p);
            let merit_target = bin_average(inst, part, lo, hi, |r, u| match r {
                Region::Allo => p(r, u),
                _ => p(r, u) - phi,
            });
            BinStat {
                lo,
                hi,
                observations: 0,
                p_target,
                p_hat: 0.0,
                a_target: p_target - phi,
                a_hat: 0.0,
                merit_target,
                merit_hat: 0.0,
                se_p: 0.0,
                se_a: 0.0,
                se_merit: 0.0,
                z_p: 0.0,
                z_a: 0.0,
                z_merit: 0.0,
            }
        })
        .collect();
    SimReport {
        instance: *inst,
        phi,
        trials: 0,
        seed: cfg.seed,
        band: cfg.band,
        bins: stats,
        max_dev_p: 0.0,
        max_dev_a: 0.0,
        within_p: bins,
        within_a: bins,
        within_merit: bins,
        capacity_violations: 0,
        payoff_hat: 0.0,
        payoff_se: 0.0,
        payoff_target: target,
        lottery: None,
        audit: None,
    }
}
