use capver_core::sim::{
    audit_select, build_mechanism, calibrate_lottery, deviation_outcome, epic_counterexample,
    lottery_allocate, merit_allocate, simulate, BinWeights, CalibrationOptions, SimConfig, Stage,
};
use capver_core::{partition, solve, ProblemInstance, Region, RegionPartition, TypeDistribution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const PHI_STAR: f64 = 0.3476444268802677;

fn example_part() -> (ProblemInstance, RegionPartition) {
    let inst = ProblemInstance::example();
    (inst, partition(PHI_STAR, &inst).unwrap())
}

fn uniform_weights(part: &RegionPartition) -> BinWeights {
    BinWeights::over_regions(part, &[Region::Ic, Region::Aud], &[Region::Ic], 8)
}

fn quick() -> SimConfig {
    SimConfig {
        trials: 20_000,
        bins: 16,
        lottery_trials: 1 << 18,
        audit_trials: 1 << 18,
        ..SimConfig::default()
    }
}

#[test]
fn merit_stage_examples() {
    let (inst, part) = example_part();
    assert_eq!(merit_allocate(&[0.9, 0.8, 0.1], &part, &inst), vec![0, 1]);
    assert_eq!(merit_allocate(&[0.40, 0.38, 0.1], &part, &inst), vec![0]);
    assert!(merit_allocate(&[0.2, 0.2, 0.2], &part, &inst).is_empty());
    assert!(merit_allocate(&[0.9, 0.9, 0.1], &part, &inst).is_empty());
    assert!(merit_allocate(&[0.1, 0.2, 0.3], &part, &inst).is_empty());
}

#[test]
fn lottery_and_audit_trivial_cases() {
    let (inst, part) = example_part();
    let w = uniform_weights(&part);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    // Both objects already went to merit winners.
    assert!(lottery_allocate(&[0.9, 0.8, 0.1], &[0, 1], &w, &part, &inst, &mut rng).is_empty());
    // Supply covers every eligible agent.
    assert_eq!(lottery_allocate(&[0.1, 0.2, 0.9], &[2], &w, &part, &inst, &mut rng), vec![0]);
    assert_eq!(lottery_allocate(&[0.1, 0.2, 0.3], &[], &w, &part, &inst, &mut rng), vec![0, 1]);
    let audit = BinWeights::over_regions(&part, &[Region::Allo], &[], 8);
    assert_eq!(audit_select(&[0.1, 0.2, 0.9], &[2], &audit, &part, &inst, &mut rng), vec![2]);
    assert!(audit_select(&[0.1, 0.2, 0.3], &[], &audit, &part, &inst, &mut rng).is_empty());
    let picked = audit_select(&[0.9, 0.8, 0.1], &[0, 1], &audit, &part, &inst, &mut rng);
    assert_eq!(picked.len(), 1);
}

#[test]
fn lottery_respects_eligibility() {
    let inst = ProblemInstance::new(6, 3, 1, TypeDistribution::Uniform).unwrap();
    let part = partition(0.4, &inst).unwrap();
    let w = uniform_weights(&part);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..2000 {
        let profile: Vec<f64> = (0..6).map(|_| rng.gen()).collect();
        let winners = merit_allocate(&profile, &part, &inst);
        let lot = lottery_allocate(&profile, &winners, &w, &part, &inst, &mut rng);
        let eligible = (0..6)
            .filter(|i| !winners.contains(i) && part.region_of(profile[*i]) != Region::Allo)
            .count();
        assert_eq!(lot.len(), (inst.m - winners.len()).min(eligible));
        assert!(lot.iter().all(|i| !winners.contains(i)));
        assert!(lot.iter().all(|&i| part.region_of(profile[i]) != Region::Allo));
    }
}

#[test]
fn mechanism_outcomes_are_feasible() {
    let inst = ProblemInstance::new(5, 3, 1, TypeDistribution::power(1.5).unwrap()).unwrap();
    let phi = solve(&inst).unwrap().phi_star;
    let (mech, _, _) = build_mechanism(&inst, phi, &quick()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..5000 {
        let profile: Vec<f64> = (0..5).map(|_| inst.dist.quantile(rng.gen())).collect();
        let out = mech.run(&profile, &mut rng);
        assert!(out.allocated.len() <= inst.m);
        assert!(out.audited.len() <= inst.k);
        assert!(out.audited.iter().all(|i| out.allocated.contains(i)));
        assert!(out.audited.iter().all(|&i| out.stage[i] == Stage::Merit));
        let staged = out.stage.iter().filter(|s| **s != Stage::None).count();
        assert_eq!(staged, out.allocated.len());
    }
}

#[test]
fn same_seed_same_report() {
    let inst = ProblemInstance::example();
    let a = simulate(&inst, PHI_STAR, &quick()).unwrap();
    let b = simulate(&inst, PHI_STAR, &quick()).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    let c = simulate(&inst, PHI_STAR, &SimConfig { seed: 9, ..quick() }).unwrap();
    assert_ne!(a.payoff_hat, c.payoff_hat);
}

#[test]
fn zero_trials() {
    let r = simulate(&ProblemInstance::example(), PHI_STAR, &SimConfig { trials: 0, ..quick() }).unwrap();
    assert_eq!(r.trials, 0);
    assert_eq!(r.capacity_violations, 0);
    assert!(r.bins.iter().all(|b| b.observations == 0));
}

#[test]
fn example_simulation() {
    let inst = ProblemInstance::example();
    let cfg = SimConfig {
        trials: 200_000,
        bins: 16,
        lottery_trials: 1 << 21,
        audit_trials: 1 << 22,
        ..SimConfig::default()
    };
    let r = simulate(&inst, PHI_STAR, &cfg).unwrap();
    assert_eq!(r.capacity_violations, 0);
    assert!((r.payoff_hat - 1.223).abs() < 0.01, "{}", r.payoff_hat);
    assert!((r.payoff_hat - r.payoff_target).abs() < 4.0 * r.payoff_se);
    assert!(r.within_p >= 15 && r.within_a >= 15, "{} {}", r.within_p, r.within_a);
    assert_eq!(r.within_merit, 16);

    // Higher aud types win the merit stage more often and need more lottery weight.
    let lottery = r.lottery.unwrap();
    let aud: Vec<f64> = lottery
        .bins
        .iter()
        .filter(|b| b.free && part_label(&inst, b.lo, b.hi) == Region::Aud)
        .map(|b| b.weight)
        .collect();
    assert!(aud.len() >= 2);
    assert!(aud.last().unwrap() > aud.first().unwrap(), "{aud:?}");
}

fn part_label(inst: &ProblemInstance, lo: f64, hi: f64) -> Region {
    partition(PHI_STAR, inst).unwrap().region_of(0.5 * (lo + hi))
}

#[test]
fn full_guarantee_is_a_lottery() {
    let inst = ProblemInstance::example();
    let phi = inst.phi_upper();
    let r = simulate(&inst, phi, &SimConfig { trials: 100_000, ..quick() }).unwrap();
    assert_eq!(r.capacity_violations, 0);
    for b in &r.bins {
        assert!((b.p_target - 2.0 / 3.0).abs() < 1e-12);
        assert!(b.z_p.abs() < 4.0, "{b:?}");
    }
    assert!((r.payoff_hat - 1.0).abs() < 4.0 * r.payoff_se);
}

#[test]
fn lottery_without_audit_region_calibrates_at_once() {
    let inst = ProblemInstance::example();
    let part = partition(0.5, &inst).unwrap();
    assert!(!part.has_aud());
    let opts = CalibrationOptions { trials: 1 << 18, edges: 16, ..CalibrationOptions::default() };
    let cal = calibrate_lottery(&inst, &part, &opts).unwrap();
    assert!(cal.converged);
    assert_eq!(cal.rounds, 1);
}

#[test]
fn epic_witness_example() {
    let inst = ProblemInstance::example();
    let w = epic_counterexample(&inst, PHI_STAR).unwrap();
    assert_eq!(w.truthful_allocation, 0.0);
    assert!(w.escape_probability >= 0.5);
    assert!(w.gain_lower_bound > 0.0);
    assert!(w.winners_after.contains(&w.agent));
    let part = partition(PHI_STAR, &inst).unwrap();
    assert_eq!(part.region_of(w.deviation), Region::Allo);

    // The scenario from the text: others at 0.9 and 0.8, deviation to 0.95.
    let profile = [0.1, 0.9, 0.8];
    let out = deviation_outcome(&inst, &part, &profile, 0, 0.95);
    assert!(out.merit_win);
    assert_eq!(out.lottery_slots, 0);
    assert!((out.escape_uniform - 0.5).abs() < 1e-15);

    // A report that stays below gamma1 changes nothing.
    let low = deviation_outcome(&inst, &part, &profile, 0, 0.5 * part.gamma1);
    let truthful = deviation_outcome(&inst, &part, &profile, 0, 0.1);
    assert_eq!(low, truthful);
    assert!(!low.merit_win);
}

#[test]
fn epic_escape_bound_general() {
    let inst = ProblemInstance::new(7, 4, 1, TypeDistribution::Uniform).unwrap();
    let phi = solve(&inst).unwrap().phi_star;
    let w = epic_counterexample(&inst, phi).unwrap();
    assert!(w.escape_probability >= 0.75 - 1e-12);
}
