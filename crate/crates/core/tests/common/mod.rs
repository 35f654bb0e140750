//! Oracles shared by the integration tests. Nothing here calls into the crate's
//! numerics.
#![allow(dead_code)]

use capver_core::{ProblemInstance, TypeDistribution};
use proptest::prelude::*;

pub fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `sum_i min(i, cap) C(n, i) (1-q)^i q^(n-i)`, term by term.
pub fn capped(n: usize, q: f64, cap: usize) -> f64 {
    (0..=n)
        .map(|i| i.min(cap) as f64 * choose(n, i) * (1.0 - q).powi(i as i32) * q.powi((n - i) as i32))
        .sum()
}

pub fn allo(inst: &ProblemInstance, q: f64) -> f64 {
    capped(inst.n, q, inst.m)
}

pub fn aud(inst: &ProblemInstance, q: f64, phi: f64) -> f64 {
    capped(inst.n, q, inst.k) + inst.n as f64 * (1.0 - q) * phi
}

pub fn ic(inst: &ProblemInstance, q: f64, phi: f64) -> f64 {
    inst.m as f64 - inst.n as f64 * q * phi
}

pub fn envelope(inst: &ProblemInstance, q: f64, phi: f64) -> f64 {
    allo(inst, q).min(aud(inst, q, phi)).min(ic(inst, q, phi))
}

/// Composite Simpson rule with `2 * half` panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, half: usize) -> f64 {
    let n = 2 * half;
    let h = (b - a) / n as f64;
    let mut s = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(a + i as f64 * h);
    }
    s * h / 3.0
}

pub fn dist_strategy() -> impl Strategy<Value = TypeDistribution> {
    prop_oneof![
        Just(TypeDistribution::Uniform),
        (0.5f64..3.0).prop_map(|a| TypeDistribution::power(a).unwrap()),
    ]
}

/// Valid instances with `n <= max_n`.
pub fn instance_strategy(max_n: usize) -> impl Strategy<Value = ProblemInstance> {
    (3..=max_n)
        .prop_flat_map(|n| (Just(n), 2..n))
        .prop_flat_map(|(n, m)| (Just(n), Just(m), 1..m))
        .prop_flat_map(|(n, m, k)| {
            dist_strategy().prop_map(move |d| ProblemInstance::new(n, m, k, d).unwrap())
        })
}

/// An instance with a guarantee anywhere in `[0, m/n]`.
pub fn instance_phi_strategy(max_n: usize) -> impl Strategy<Value = (ProblemInstance, f64)> {
    instance_strategy(max_n).prop_flat_map(|inst| {
        let hi = inst.phi_upper();
        (Just(inst), 0.0..=hi)
    })
}
