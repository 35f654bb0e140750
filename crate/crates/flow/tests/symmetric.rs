use capver_flow::file::{instance_to_json, parse_instance};
use capver_flow::{
    check_family, check_feasible, check_interim_allocation, check_interim_audit,
    expected_capped_binomial, symmetric_family, AgentGrid, AgentSet, Certificate,
    DiscreteInstance, FlowOptions, InterimRule, ProfileMap,
};
use proptest::prelude::*;

fn binom(n: u64, k: u64) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Interim probability of being among the `m` highest of `n` on a uniform grid,
/// with ties broken uniformly at random.
fn efficient_rule(len: usize, n: usize, m: usize) -> Vec<f64> {
    let l = len as f64;
    (0..len)
        .map(|t| {
            let below = t as f64 / l;
            let same = 1.0 / l;
            // Condition on how many others are strictly above and tied.
            let mut p = 0.0;
            for above in 0..n {
                for tied in 0..(n - above) {
                    let rest = n - 1 - above - tied;
                    let prob = binom((n - 1) as u64, above as u64)
                        * binom((n - 1 - above) as u64, tied as u64)
                        * (1.0 - below - same).powi(above as i32)
                        * same.powi(tied as i32)
                        * below.powi(rest as i32);
                    let slots = m.saturating_sub(above).min(tied + 1);
                    p += prob * slots as f64 / (tied + 1) as f64;
                }
            }
            p
        })
        .collect()
}

#[test]
fn efficient_rule_is_feasible_with_equality_on_upper_sets() {
    let (len, n, m) = (6, 3, 2);
    let inst = DiscreteInstance::symmetric(AgentGrid::uniform(len), n, m as u32).unwrap();
    let p = efficient_rule(len, n, m);
    let rule = InterimRule(vec![p.clone(); n]);
    let verdict = check_interim_allocation(&inst, &rule, &FlowOptions::default()).unwrap();
    let FeasibilityOk { min_slack } = expect_upper_sets(verdict);
    assert!(min_slack.abs() < 1e-12);
    assert!(check_feasible(&inst, &rule, &FlowOptions::default())
        .unwrap()
        .is_feasible());
}

struct FeasibilityOk {
    min_slack: f64,
}

fn expect_upper_sets(v: capver_flow::FeasibilityVerdict) -> FeasibilityOk {
    match v {
        capver_flow::FeasibilityVerdict::Feasible(Certificate::UpperSets { min_slack, .. }) => {
            FeasibilityOk { min_slack }
        }
        other => panic!("expected upper-set certificate, got {other:?}"),
    }
}

#[test]
fn full_demand_fails_on_the_whole_grid() {
    let inst = DiscreteInstance::symmetric(AgentGrid::uniform(4), 3, 2).unwrap();
    let rule = InterimRule(vec![vec![1.0; 4]; 3]);
    let verdict = check_interim_allocation(&inst, &rule, &FlowOptions::default()).unwrap();
    let v = verdict.violation().unwrap();
    assert!(v.set.members.iter().all(|m| m == &vec![0, 1, 2, 3]));
    assert!((v.lhs - 3.0).abs() < 1e-12 && (v.rhs - 2.0).abs() < 1e-12);
}

#[test]
fn audit_everyone_when_capacity_is_unlimited() {
    let n = 3;
    let inst = DiscreteInstance::symmetric(AgentGrid::uniform(3), n, 2).unwrap();
    // Allocate to the two highest types, agent index breaking ties.
    let mut allocated = Vec::new();
    inst.for_each_profile(|_, p, _| {
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by_key(|i| (std::cmp::Reverse(p[*i]), *i));
        allocated.push(AgentSet::from_agents(order[..2].iter().copied()));
    });
    let winners = allocated.clone();
    let mut interim = InterimRule::zeros(&inst);
    inst.for_each_profile(|idx, p, prob| {
        for i in winners[idx].iter() {
            interim.0[i][p[i]] += prob / inst.grid(i).masses[p[i]];
        }
    });
    let v = check_interim_audit(&inst, allocated.clone(), n as u32, &interim, &FlowOptions::default())
        .unwrap();
    assert!(v.is_feasible());
    let v = check_interim_audit(&inst, allocated, 1, &interim, &FlowOptions::default()).unwrap();
    assert!(!v.is_feasible());
}

#[test]
fn dense_instance_round_trips() {
    let inst = DiscreteInstance::new(
        vec![AgentGrid::uniform(2), AgentGrid::new(vec![0.1, 0.2, 0.9], vec![0.25, 0.25, 0.5])],
        ProfileMap::Dense(vec![1, 1, 2, 0, 1, 1]),
        ProfileMap::Dense(vec![
            AgentSet::all(2),
            AgentSet::from_agents([0]),
            AgentSet::all(2),
            AgentSet::all(2),
            AgentSet(0),
            AgentSet::all(2),
        ]),
    )
    .unwrap();
    let back = parse_instance(&instance_to_json(&inst).unwrap()).unwrap();
    inst.for_each_profile(|idx, p, _| {
        assert_eq!(inst.capacity(idx, p), back.capacity(idx, p));
        assert_eq!(inst.eligible(idx, p), back.eligible(idx, p));
    });
    assert_eq!(inst.grids(), back.grids());
}

proptest! {
    #[test]
    fn capped_binomial_matches_direct_sum(n in 1usize..20, cap in 0usize..20, s in 0.0f64..=1.0) {
        let direct: f64 = (0..=n)
            .map(|j| binom(n as u64, j as u64) * s.powi(j as i32) * (1.0 - s).powi((n - j) as i32) * j.min(cap) as f64)
            .sum();
        prop_assert!((expected_capped_binomial(n, s, cap) - direct).abs() < 1e-10);
    }

    /// For symmetric monotone rules the worst threshold set is as bad as the worst set overall.
    #[test]
    fn threshold_family_attains_flow_deficit(
        raw in prop::collection::vec(0u32..=16, 4),
        supply in 1u32..3,
    ) {
        let n = 3;
        let mut p: Vec<f64> = raw.iter().map(|x| *x as f64 / 16.0).collect();
        p.sort_by(f64::total_cmp);
        let inst = DiscreteInstance::symmetric(AgentGrid::uniform(4), n, supply).unwrap();
        let rule = InterimRule(vec![p; n]);
        let opts = FlowOptions::default();
        let family = symmetric_family((0..=4).map(|s| (s..4).collect()), n, n);
        let report = check_family(&inst, &rule, family, &opts).unwrap();
        let flow = check_feasible(&inst, &rule, &opts).unwrap();
        let flow_excess = flow.violation().map_or(0.0, |v| v.excess());
        prop_assert!((report.worst.excess() - flow_excess).abs() < 1e-12);
        prop_assert_eq!(report.passed, flow.is_feasible());
    }
}
