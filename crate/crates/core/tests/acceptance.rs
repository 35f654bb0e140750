//! One PASS/FAIL line per acceptance criterion; exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use capver_core::discrete::{discretize, realize_allocation};
use capver_core::sim::{epic_counterexample, simulate, SimConfig};
use capver_core::*;
use capver_flow::file::footnote;
use capver_flow::{
    border_lhs, border_rhs, check_family, check_feasible, upper_sets, AgentGrid, AgentSet,
    CheckSet, DiscreteInstance, FlowOptions, InterimRule, ProfileMap,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl Into<String>) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn choose(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[min(X, cap)]`, `X ~ Bin(n, 1-q)`, by the direct sum.
fn capped(n: usize, q: f64, cap: usize) -> f64 {
    (1..=n)
        .map(|i| i.min(cap) as f64 * choose(n, i) * (1.0 - q).powi(i as i32) * q.powi((n - i) as i32))
        .sum()
}

fn envelope_oracle(inst: &ProblemInstance, q: f64, phi: f64) -> f64 {
    let n = inst.n as f64;
    let allo = capped(inst.n, q, inst.m);
    let aud = capped(inst.n, q, inst.k) + n * (1.0 - q) * phi;
    let ic = inst.m as f64 - n * q * phi;
    allo.min(aud).min(ic)
}

fn random_instance(rng: &mut impl Rng, max_n: usize) -> ProblemInstance {
    let n = rng.gen_range(3..=max_n);
    let m = rng.gen_range(2..n);
    let k = rng.gen_range(1..m);
    let dist = if rng.gen_bool(0.5) {
        TypeDistribution::Uniform
    } else {
        TypeDistribution::power(rng.gen_range(0.5..3.0)).unwrap()
    };
    ProblemInstance::new(n, m, k, dist).unwrap()
}

fn c1_example() -> Outcome {
    let start = Instant::now();
    let r = solve(&ProblemInstance::example()).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure((r.phi_star - 0.34764).abs() <= 1e-4, format!("phi* = {}", r.phi_star))?;
    ensure((r.payoff - 1.223).abs() <= 1e-3, format!("payoff = {}", r.payoff))?;
    ensure((r.baselines.first_best - 1.25).abs() <= 1e-9, format!("first best = {}", r.baselines.first_best))?;
    ensure((r.baselines.random_lottery - 1.0).abs() <= 1e-12, "random lottery")?;
    ensure(elapsed < 1.0, format!("took {elapsed:.3} s"))?;
    Ok(format!(
        "phi*={:.6} U={:.6} first_best={} random={} ({elapsed:.3} s)",
        r.phi_star, r.payoff, r.baselines.first_best, r.baselines.random_lottery
    ))
}

fn c2_polynomials() -> Outcome {
    let inst = ProblemInstance::example();
    let mut worst: f64 = 0.0;
    for phi in [0.0, 1.0 / 3.0, 0.34764, 0.5, 2.0 / 3.0] {
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let allo = t.powi(3) - 3.0 * t * t + 2.0;
            let aud = -t.powi(3) - 3.0 * phi * t + 1.0 + 3.0 * phi;
            worst = worst.max((c_allo(t, &inst).unwrap() - allo).abs());
            worst = worst.max((c_aud(t, phi, &inst).unwrap() - aud).abs());
        }
    }
    ensure(worst <= 1e-12, format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.2e} over 1000 points x 5 guarantees"))
}

fn c3_derivatives() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let inst = random_instance(&mut rng, 50);
        let phi = rng.gen_range(0.0..=inst.phi_upper());
        for i in 0..=98 {
            let q = 0.01 + 0.98 * i as f64 / 98.0;
            let fd = |f: &dyn Fn(f64) -> f64| (f(q + h) - f(q - h)) / (2.0 * h);
            let e1 = d_c_allo(q, &inst).unwrap() - fd(&|x| c_allo(x, &inst).unwrap());
            let e2 = d_c_aud(q, phi, &inst).unwrap() - fd(&|x| c_aud(x, phi, &inst).unwrap());
            let e3 = d_c_ic(phi, &inst).unwrap() - fd(&|x| c_ic(x, phi, &inst).unwrap());
            worst = worst.max(e1.abs()).max(e2.abs()).max(e3.abs());
        }
    }
    ensure(worst <= 1e-6, format!("max error {worst:e}"))?;
    Ok(format!("max error {worst:.2e} over 20 random instances"))
}

fn identity_error(inst: &ProblemInstance, phi: f64) -> f64 {
    let rules = merit_with_guarantee(phi, inst).unwrap();
    (0..=100)
        .map(|i| {
            let t = i as f64 / 100.0;
            let lhs = interim_integral(&rules, t).unwrap();
            (lhs - envelope_oracle(inst, inst.dist.cdf(t), phi)).abs()
        })
        .fold(0.0, f64::max)
}

fn c4_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut insts = vec![ProblemInstance::example()];
    insts.extend((0..5).map(|_| random_instance(&mut rng, 20)));
    let mut worst: f64 = 0.0;
    for inst in &insts {
        let phi = solve(inst).map_err(|e| format!("{inst}: {e}"))?.phi_star;
        let e = identity_error(inst, phi);
        ensure(e <= 1e-7, format!("{inst} at phi={phi}: error {e:e}"))?;
        worst = worst.max(e);
    }
    Ok(format!("max error {worst:.2e} at 101 points, example + 5 random instances"))
}

fn c5_bic_structure() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut insts = vec![ProblemInstance::example()];
    insts.extend((0..5).map(|_| random_instance(&mut rng, 20)));
    let mut rules_checked = 0;
    for inst in &insts {
        let r = solve(inst).map_err(|e| e.to_string())?;
        ensure(r.phi_star >= inst.phi_lower(), format!("{inst}: phi* below (m-k)/n"))?;
        ensure(
            r.partition.gamma2 < r.partition.gamma3,
            format!("{inst}: empty audit region at optimum"),
        )?;
        for j in 0..=10 {
            let phi = inst.phi_upper() * j as f64 / 10.0;
            for phi in [phi, r.phi_star] {
                let rules = merit_with_guarantee(phi, inst).unwrap();
                let slack = bic_slack(&rules);
                let mut prev = f64::NEG_INFINITY;
                for i in 0..=1000 {
                    let t = i as f64 / 1000.0;
                    let p = rules.p(t);
                    ensure(slack(t).abs() <= 1e-9, format!("{inst} phi={phi}: slack {} at {t}", slack(t)))?;
                    ensure(p >= prev - 1e-12, format!("{inst} phi={phi}: P decreases at {t}"))?;
                    ensure(p >= phi - 1e-9, format!("{inst} phi={phi}: P below phi at {t}"))?;
                    prev = p;
                }
                rules_checked += 1;
            }
        }
    }
    Ok(format!("{rules_checked} rules on 1001-point grids, {} solved optima", insts.len()))
}

fn c6_simulation() -> Outcome {
    let start = Instant::now();
    let inst = ProblemInstance::example();
    let phi = solve(&inst).map_err(|e| e.to_string())?.phi_star;
    let cfg = SimConfig {
        trials: 1_000_000,
        seed: 20240601,
        ..SimConfig::default()
    };
    let rep = simulate(&inst, phi, &cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();
    ensure(rep.capacity_violations == 0, format!("{} violations", rep.capacity_violations))?;
    ensure((rep.payoff_hat - 1.223).abs() <= 0.01, format!("payoff {}", rep.payoff_hat))?;
    ensure(rep.within_p >= 62, format!("P within 3 SE in {} / 64 bins", rep.within_p))?;
    ensure(rep.within_a >= 62, format!("A within 3 SE in {} / 64 bins", rep.within_a))?;
    ensure(elapsed < 60.0, format!("took {elapsed:.1} s"))?;
    Ok(format!(
        "payoff {:.4}, P {}/64, A {}/64, merit {}/64, 0 violations ({elapsed:.1} s)",
        rep.payoff_hat, rep.within_p, rep.within_a, rep.within_merit
    ))
}

/// Worst excess over all `2^(total grid points)` check sets.
fn brute_force_excess(inst: &DiscreteInstance, rule: &InterimRule) -> f64 {
    let sizes: Vec<usize> = inst.grids().iter().map(|g| g.len()).collect();
    let total: usize = sizes.iter().sum();
    let opts = FlowOptions::default();
    let mut worst = 0.0f64;
    for mask in 0u32..(1 << total) {
        let mut members = Vec::new();
        let mut bit = 0;
        for &s in &sizes {
            members.push((0..s).filter(|j| mask >> (bit + j) & 1 == 1).collect());
            bit += s;
        }
        let set = CheckSet::from_members(members);
        let excess = border_lhs(inst, rule, &set) - border_rhs(inst, &set, &opts).unwrap();
        worst = worst.max(excess);
    }
    worst
}

fn random_discrete(rng: &mut impl Rng) -> (DiscreteInstance, InterimRule) {
    let agents = rng.gen_range(1..=3);
    let mut grids = Vec::new();
    // At most 3 agents with at most 4 types each: 12 grid points.
    for _ in 0..agents {
        let len = rng.gen_range(1..=4);
        let raw: Vec<f64> = (0..len).map(|_| rng.gen_range(1..=4) as f64).collect();
        let sum: f64 = raw.iter().sum();
        grids.push(AgentGrid::new((0..len).map(|j| j as f64).collect(), raw.iter().map(|x| x / sum).collect()));
    }
    let probe = DiscreteInstance::new(grids.clone(), ProfileMap::Constant(0), ProfileMap::Constant(AgentSet(0))).unwrap();
    let count = probe.profile_count() as usize;
    let caps = (0..count).map(|_| rng.gen_range(0..=agents as u32)).collect();
    let elig = (0..count).map(|_| AgentSet(rng.gen_range(0..(1u64 << agents)))).collect();
    let inst = DiscreteInstance::new(grids, ProfileMap::Dense(caps), ProfileMap::Dense(elig)).unwrap();
    let rule = InterimRule(
        inst.grids()
            .iter()
            .map(|g| (0..g.len()).map(|_| rng.gen_range(0..=8) as f64 / 8.0).collect())
            .collect(),
    );
    (inst, rule)
}

fn c7_footnote_and_exhaustive() -> Outcome {
    let opts = FlowOptions::default();
    let (inst, rule) = footnote();
    let verdict = check_feasible(&inst, &rule, &opts).map_err(|e| e.to_string())?;
    let v = verdict.violation().ok_or("footnote rule declared feasible")?;
    ensure(v.set == CheckSet::from_members(vec![vec![0], vec![1]]), format!("witness {:?}", v.set))?;
    ensure((v.lhs - 0.375).abs() < 1e-15 && (v.rhs - 0.25).abs() < 1e-15, format!("lhs {} rhs {}", v.lhs, v.rhs))?;
    let upper = check_family(&inst, &rule, upper_sets(&inst), &opts).map_err(|e| e.to_string())?;
    ensure(upper.passed, "upper-set family rejects the footnote rule")?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut agree, mut infeasible) = (0, 0);
    for _ in 0..300 {
        let (inst, rule) = random_discrete(&mut rng);
        let brute = brute_force_excess(&inst, &rule);
        let flow = check_feasible(&inst, &rule, &opts).unwrap();
        ensure(flow.is_feasible() == (brute <= 1e-12), format!("verdict mismatch, brute excess {brute:e}"))?;
        if let Some(v) = flow.violation() {
            infeasible += 1;
            ensure((v.excess() - brute).abs() < 1e-9, format!("cut excess {} vs brute {brute}", v.excess()))?;
        }
        agree += 1;
    }
    Ok(format!(
        "witness ({{lo}}_1, {{hi}}_2) lhs 0.375 rhs 0.25, {} upper sets pass; {agree}/300 random instances agree ({infeasible} infeasible)",
        upper.sets_checked
    ))
}

fn c8_realization() -> Outcome {
    let inst = ProblemInstance::example();
    let phi = solve(&inst).map_err(|e| e.to_string())?.phi_star;
    let rules = merit_with_guarantee(phi, &inst).unwrap();
    let disc = discretize(&rules, 64).map_err(|e| e.to_string())?;
    let (verdict, real) = realize_allocation(&disc, &inst, &FlowOptions::default()).map_err(|e| e.to_string())?;
    ensure(verdict.is_feasible(), "discretized rule infeasible")?;
    ensure(real.marginal_error <= 1e-9, format!("marginal error {:e}", real.marginal_error))?;
    ensure(real.constraint_violation <= 1e-12, format!("constraint violation {:e}", real.constraint_violation))?;
    Ok(format!(
        "64-point grid, {} profiles, marginal error {:.2e}",
        real.rule.profiles(),
        real.marginal_error
    ))
}

fn c9_epic() -> Outcome {
    let inst = ProblemInstance::example();
    let phi = solve(&inst).map_err(|e| e.to_string())?.phi_star;
    let w = epic_counterexample(&inst, phi).map_err(|e| e.to_string())?;
    let bound = (inst.m - inst.k) as f64 / inst.m as f64;
    ensure(w.truthful_allocation == 0.0, "truthful agent receives something")?;
    ensure(w.escape_probability >= bound - 1e-15, format!("escape {}", w.escape_probability))?;
    ensure(w.gain_lower_bound > 0.0, "no gain")?;
    Ok(format!(
        "profile {:?}, report {:.3} instead of {:.3}, escape {} >= {bound}",
        w.profile, w.deviation, w.truthful_type, w.escape_probability
    ))
}

fn c10_statics() -> Outcome {
    let mut rows = Vec::new();
    for dist in [TypeDistribution::Uniform, TypeDistribution::power(2.0).unwrap(), TypeDistribution::power(0.5).unwrap()] {
        let mut prev = f64::NEG_INFINITY;
        for k in 1..4 {
            let inst = ProblemInstance::new(6, 4, k, dist).unwrap();
            let u = solve(&inst).map_err(|e| e.to_string())?.payoff;
            ensure(u >= prev - 1e-12, format!("{dist}: payoff drops at k={k}: {u} < {prev}"))?;
            prev = u;
            rows.push(format!("{dist} k={k}: {u:.5}"));
        }
    }
    Ok(rows.join(", "))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("example reproduction", c1_example),
        ("closed-form consistency", c2_polynomials),
        ("derivative correctness", c3_derivatives),
        ("interim identity", c4_identity),
        ("BIC and structure", c5_bic_structure),
        ("simulation fidelity", c6_simulation),
        ("discrete feasibility ground truth", c7_footnote_and_exhaustive),
        ("constructive realization", c8_realization),
        ("ex-post IC failure", c9_epic),
        ("comparative statics in k", c10_statics),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
