//! Constraint functions in quantile space, their lower envelope and the induced
//! partition of the type space.
//!
//! With `X ~ Bin(n, 1-q)` counting agents whose type quantile exceeds `q`:
//!
//! * `c_allo(q) = E[min(X, m)]`
//! * `c_aud(q, phi) = E[min(X, k)] + n(1-q)phi`
//! * `c_ic(q, phi) = m - n q phi`

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::binom;
use crate::dist::TypeDistribution;
use crate::error::{check_range, check_unit, CoreError, Result};
use crate::numeric::brent;

/// Root tolerance for crossings in quantile space.
pub const ROOT_TOL: f64 = 1e-12;

/// Relative tolerance under which two constraint values count as tied.
pub const TIE_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    #[serde(default)]
    pub dist: TypeDistribution,
}

impl ProblemInstance {
    /// Requires `0 < k < m < n`.
    pub fn new(n: usize, m: usize, k: usize, dist: TypeDistribution) -> Result<Self> {
        let inst = ProblemInstance { n, m, k, dist };
        inst.validate()?;
        Ok(inst)
    }

    /// Three agents, two objects, one audit, uniform types.
    pub fn example() -> Self {
        ProblemInstance {
            n: 3,
            m: 2,
            k: 1,
            dist: TypeDistribution::Uniform,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0 < self.k && self.k < self.m && self.m < self.n) {
            return Err(CoreError::InvalidInstance(format!(
                "need 0 < k < m < n, got n={}, m={}, k={}",
                self.n, self.m, self.k
            )));
        }
        self.dist.validate()
    }

    /// `(m - k) / n`, the smallest guarantee worth considering.
    pub fn phi_lower(&self) -> f64 {
        (self.m - self.k) as f64 / self.n as f64
    }

    /// `m / n`, the largest feasible guarantee.
    pub fn phi_upper(&self) -> f64 {
        self.m as f64 / self.n as f64
    }

    pub fn check_phi(&self, phi: f64) -> Result<()> {
        check_range("phi", phi, 0.0, self.phi_upper())
    }

    pub fn allo(&self, q: f64) -> f64 {
        binom::expected_min(self.n, 1.0 - q, self.m)
    }

    pub fn aud(&self, q: f64, phi: f64) -> f64 {
        binom::expected_min(self.n, 1.0 - q, self.k) + self.n as f64 * (1.0 - q) * phi
    }

    pub fn ic(&self, q: f64, phi: f64) -> f64 {
        self.m as f64 - self.n as f64 * q * phi
    }

    /// `Pr[Y <= j - 1]` for `Y ~ Bin(n-1, 1-q)`: the chance fewer than `j` others are above `q`.
    pub fn fewer_above(&self, q: f64, j: usize) -> f64 {
        if j == 0 {
            return 0.0;
        }
        binom::cdf(self.n - 1, 1.0 - q, j - 1)
    }

    pub fn d_allo(&self, q: f64) -> f64 {
        -(self.n as f64) * self.fewer_above(q, self.m)
    }

    pub fn d_aud(&self, q: f64, phi: f64) -> f64 {
        -(self.n as f64) * (self.fewer_above(q, self.k) + phi)
    }

    pub fn d_ic(&self, phi: f64) -> f64 {
        -(self.n as f64) * phi
    }

    pub fn value(&self, region: Region, q: f64, phi: f64) -> f64 {
        match region {
            Region::Ic => self.ic(q, phi),
            Region::Aud => self.aud(q, phi),
            Region::Allo => self.allo(q),
        }
    }

    /// `-(1/n)` times the derivative of the given constraint: the interim
    /// allocation probability it induces at quantile `q`.
    pub fn branch_p(&self, region: Region, q: f64, phi: f64) -> f64 {
        match region {
            Region::Ic => phi,
            Region::Aud => self.fewer_above(q, self.k) + phi,
            Region::Allo => self.fewer_above(q, self.m),
        }
    }
}

impl fmt::Display for ProblemInstance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "n={} m={} k={} dist={}", self.n, self.m, self.k, self.dist)
    }
}

pub fn c_allo(q: f64, inst: &ProblemInstance) -> Result<f64> {
    check_unit("q", q)?;
    Ok(inst.allo(q))
}

pub fn c_aud(q: f64, phi: f64, inst: &ProblemInstance) -> Result<f64> {
    check_unit("q", q)?;
    inst.check_phi(phi)?;
    Ok(inst.aud(q, phi))
}

pub fn c_ic(q: f64, phi: f64, inst: &ProblemInstance) -> Result<f64> {
    check_unit("q", q)?;
    inst.check_phi(phi)?;
    Ok(inst.ic(q, phi))
}

pub fn d_c_allo(q: f64, inst: &ProblemInstance) -> Result<f64> {
    check_unit("q", q)?;
    Ok(inst.d_allo(q))
}

pub fn d_c_aud(q: f64, phi: f64, inst: &ProblemInstance) -> Result<f64> {
    check_unit("q", q)?;
    inst.check_phi(phi)?;
    Ok(inst.d_aud(q, phi))
}

pub fn d_c_ic(phi: f64, inst: &ProblemInstance) -> Result<f64> {
    inst.check_phi(phi)?;
    Ok(inst.d_ic(phi))
}

/// Which constraint binds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Region {
    Ic,
    Aud,
    Allo,
}

impl Region {
    pub fn as_str(self) -> &'static str {
        match self {
            Region::Ic => "ic",
            Region::Aud => "aud",
            Region::Allo => "allo",
        }
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

fn argmin(inst: &ProblemInstance, q: f64, phi: f64) -> (f64, Region) {
    argmin_among(inst, q, phi, &[Region::Ic, Region::Aud, Region::Allo])
}

fn argmin_among(inst: &ProblemInstance, q: f64, phi: f64, order: &[Region]) -> (f64, Region) {
    let mut best = (inst.value(order[0], q, phi), order[0]);
    for &region in &order[1..] {
        let v = inst.value(region, q, phi);
        if v < best.0 - TIE_TOL * best.0.abs().max(1.0) {
            best = (v, region);
        }
    }
    best
}

/// Lower envelope `min(c_allo, c_aud, c_ic)` at `q` and the binding constraint,
/// ties resolved in the order ic, aud, allo.
pub fn envelope_value(q: f64, phi: f64, inst: &ProblemInstance) -> Result<(f64, Region)> {
    check_unit("q", q)?;
    inst.check_phi(phi)?;
    Ok(argmin(inst, q, phi))
}

/// Shape of the lower envelope from left to right.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseTag {
    /// aud then allo (no ic region).
    AudAllo,
    /// ic, allo, aud, allo.
    IcAlloAudAllo,
    /// ic, aud, allo.
    IcAudAllo,
    /// ic then allo (no aud region).
    IcAllo,
}

impl CaseTag {
    /// Short label: 1, 2a, 2b or 3.
    pub fn label(self) -> &'static str {
        match self {
            CaseTag::AudAllo => "1",
            CaseTag::IcAlloAudAllo => "2a",
            CaseTag::IcAudAllo => "2b",
            CaseTag::IcAllo => "3",
        }
    }
}

impl fmt::Display for CaseTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?} ({})", self, self.label())
    }
}

/// Pairwise crossings in quantile space, when they exist.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Crossings {
    /// c_ic = c_allo.
    pub z1: Option<f64>,
    /// c_ic = c_aud.
    pub z2: Option<f64>,
    /// c_allo = c_aud, lower root.
    pub r1: Option<f64>,
    /// c_allo = c_aud, upper root.
    pub r2: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabeledInterval {
    /// Type-space bounds.
    pub lo: f64,
    pub hi: f64,
    /// Quantile-space bounds.
    pub q_lo: f64,
    pub q_hi: f64,
    pub label: Region,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionPartition {
    pub phi: f64,
    #[serde(rename = "case")]
    pub case_tag: CaseTag,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma3: f64,
    /// Disjoint, ordered, covering `[0, 1]`.
    pub intervals: Vec<LabeledInterval>,
    pub crossings: Crossings,
}

impl RegionPartition {
    /// Region of type `t`; a boundary point belongs to the interval on its right.
    pub fn region_of(&self, t: f64) -> Region {
        self.interval_of(t).label
    }

    pub fn interval_of(&self, t: f64) -> &LabeledInterval {
        self.intervals
            .iter()
            .find(|iv| t < iv.hi)
            .unwrap_or_else(|| self.intervals.last().expect("partition is never empty"))
    }

    /// Region of quantile `q`, with the same right-continuity convention.
    pub fn region_of_quantile(&self, q: f64) -> Region {
        self.intervals
            .iter()
            .find(|iv| q < iv.q_hi)
            .unwrap_or_else(|| self.intervals.last().expect("partition is never empty"))
            .label
    }

    pub fn has_aud(&self) -> bool {
        self.intervals.iter().any(|iv| iv.label == Region::Aud)
    }

    /// Type-space cutoffs of every interval boundary, including 0 and 1.
    pub fn breakpoints(&self) -> Vec<f64> {
        let mut pts = vec![0.0];
        pts.extend(self.intervals.iter().map(|iv| iv.hi));
        pts
    }
}

fn bracketing(what: &str) -> CoreError {
    CoreError::Bracketing(format!("{what}: no sign change on the expected bracket"))
}

/// Second root of the convex `c_ic - c_allo`, which vanishes at 0 with slope `-n phi`.
fn find_z1(inst: &ProblemInstance, phi: f64) -> Result<Option<f64>> {
    if phi <= 0.0 {
        return Ok(None);
    }
    let h = |q: f64| inst.ic(q, phi) - inst.allo(q);
    if phi >= inst.phi_upper() {
        return Ok(Some(1.0));
    }
    let mut neg = None;
    let mut q = 0.5;
    for _ in 0..60 {
        if h(q) < 0.0 {
            neg = Some(q);
            break;
        }
        q *= 0.5;
    }
    match neg {
        None => Ok(None),
        Some(a) => brent(h, a, 1.0, ROOT_TOL)
            .map(Some)
            .ok_or_else(|| bracketing("c_ic - c_allo")),
    }
}

/// Root of the increasing `c_ic - c_aud = m - n phi - E[min(X, k)]`.
fn find_z2(inst: &ProblemInstance, phi: f64) -> Result<Option<f64>> {
    if phi <= inst.phi_lower() {
        return Ok(None);
    }
    let h = |q: f64| inst.ic(q, phi) - inst.aud(q, phi);
    brent(h, 0.0, 1.0, ROOT_TOL)
        .map(Some)
        .ok_or_else(|| bracketing("c_ic - c_aud"))
}

/// Interior roots of `g = c_allo - c_aud`.
///
/// `g(1) = 0` and `g'(q) = n phi - n Pr[k <= Y <= m-1]`, whose minimum sits at
/// `q* = 1 / (1 + rho^(1/(m-k)))`, `rho = k C(n-1,k) / (m C(n-1,m))`. So `g`
/// rises, falls, then rises back to 0 at 1.
fn find_r(inst: &ProblemInstance, phi: f64) -> Result<(Option<f64>, Option<f64>)> {
    let (n, m, k) = (inst.n, inst.m, inst.k);
    let nf = n as f64;
    let g = |q: f64| inst.allo(q) - inst.aud(q, phi);
    let dg = |q: f64| nf * phi - nf * (inst.fewer_above(q, m) - inst.fewer_above(q, k));
    let ln_rho = (k as f64).ln() + binom::ln_choose(n - 1, k)
        - (m as f64).ln()
        - binom::ln_choose(n - 1, m);
    let q_star = 1.0 / (1.0 + (ln_rho / (m - k) as f64).exp());
    if dg(q_star) >= 0.0 {
        return Ok((None, None));
    }
    let d1 = if phi <= 0.0 {
        0.0
    } else {
        brent(dg, 0.0, q_star, ROOT_TOL).ok_or_else(|| bracketing("g' on [0, q*]"))?
    };
    let d2 = brent(dg, q_star, 1.0, ROOT_TOL).ok_or_else(|| bracketing("g' on [q*, 1]"))?;
    if g(d1) <= 0.0 {
        return Ok((None, None));
    }
    let r2 = brent(g, d1, d2, ROOT_TOL).ok_or_else(|| bracketing("c_allo - c_aud upper"))?;
    let r1 = if g(0.0) < 0.0 {
        Some(brent(g, 0.0, d1, ROOT_TOL).ok_or_else(|| bracketing("c_allo - c_aud lower"))?)
    } else {
        None
    };
    Ok((r1, r2.into()))
}

/// Locates all crossings and labels the type space by the binding constraint.
pub fn partition(phi: f64, inst: &ProblemInstance) -> Result<RegionPartition> {
    inst.validate()?;
    inst.check_phi(phi)?;
    let z1 = find_z1(inst, phi)?;
    let z2 = find_z2(inst, phi)?;
    let (r1, r2) = find_r(inst, phi)?;
    let crossings = Crossings { z1, z2, r1, r2 };

    let mut cuts = vec![0.0, 1.0];
    cuts.extend([z1, z2, r1, r2].into_iter().flatten());
    cuts.sort_by(f64::total_cmp);
    cuts.dedup();

    // Without z2, c_aud <= c_ic on all of [0, 1] and ic can only tie.
    let order: &[Region] = if z2.is_some() {
        &[Region::Ic, Region::Aud, Region::Allo]
    } else {
        &[Region::Aud, Region::Allo]
    };
    let mut pieces: Vec<(f64, f64, Region)> = Vec::new();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b - a <= 0.0 {
            continue;
        }
        let (_, label) = argmin_among(inst, 0.5 * (a + b), phi, order);
        match pieces.last_mut() {
            Some(last) if last.2 == label => last.1 = b,
            _ => pieces.push((a, b, label)),
        }
    }

    let labels: Vec<Region> = pieces.iter().map(|p| p.2).collect();
    use Region::*;
    let case_tag = match labels.as_slice() {
        [Aud] | [Aud, Allo] => CaseTag::AudAllo,
        [Ic, Allo, Aud, Allo] => CaseTag::IcAlloAudAllo,
        [Ic, Aud, Allo] => CaseTag::IcAudAllo,
        [Ic] | [Ic, Allo] => CaseTag::IcAllo,
        other => {
            return Err(CoreError::Bracketing(format!(
                "unexpected envelope shape {other:?} at phi = {phi}"
            )))
        }
    };

    let dist = inst.dist;
    let intervals: Vec<LabeledInterval> = pieces
        .iter()
        .map(|&(a, b, label)| LabeledInterval {
            lo: dist.quantile(a),
            hi: dist.quantile(b),
            q_lo: a,
            q_hi: b,
            label,
        })
        .collect();
    let gamma1 = intervals
        .iter()
        .find(|iv| iv.label == Ic)
        .map_or(0.0, |iv| iv.hi);
    let (gamma2, gamma3) = intervals
        .iter()
        .find(|iv| iv.label == Aud)
        .map_or((1.0, 1.0), |iv| (iv.lo, iv.hi));

    Ok(RegionPartition {
        phi,
        case_tag,
        gamma1,
        gamma2,
        gamma3,
        intervals,
        crossings,
    })
}

/// Guarantee above which the audit region disappears, by bisection on
/// `[(m-k)/n, m/n]` to tolerance `tol`.
pub fn phi_bar(inst: &ProblemInstance, tol: f64) -> Result<f64> {
    let (mut lo, mut hi) = (inst.phi_lower(), inst.phi_upper());
    if partition(hi, inst)?.has_aud() {
        return Ok(hi);
    }
    while hi - lo > tol {
        let mid = 0.5 * (lo + hi);
        if partition(mid, inst)?.has_aud() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnvelopeRow {
    pub q: f64,
    pub c_allo: f64,
    pub c_aud: f64,
    pub c_ic: f64,
    pub envelope: f64,
}

/// The three constraints and their minimum on `points` evenly spaced quantiles.
pub fn envelope_table(inst: &ProblemInstance, phi: f64, points: usize) -> Result<Vec<EnvelopeRow>> {
    inst.check_phi(phi)?;
    let points = points.max(2);
    Ok((0..points)
        .map(|i| {
            let q = i as f64 / (points - 1) as f64;
            let (envelope, _) = argmin(inst, q, phi);
            EnvelopeRow {
                q,
                c_allo: inst.allo(q),
                c_aud: inst.aud(q, phi),
                c_ic: inst.ic(q, phi),
                envelope,
            }
        })
        .collect())
}
