//! One function per subcommand, each returning its result in every format.

use std::path::Path;

use capver_core::sim::{epic_counterexample, simulate as run_simulation, SimConfig};
use capver_core::{
    envelope_table, merit_with_guarantee, solve as solve_instance, ProblemInstance, SolveReport,
    TypeDistribution,
};
use capver_flow::file::{footnote, parse_instance, parse_rule};
use capver_flow::{
    check_family, check_feasible, upper_sets, Certificate, CheckSet, DiscreteInstance, FeasibilityVerdict,
    FlowOptions, InterimRule, Violation,
};
use rayon::prelude::*;
use serde::Serialize;

use crate::args::{Bundled, CheckArgs, SimulateArgs, SweepArgs};
use crate::config::RunConfig;
use crate::error::{CliError, EXIT_OK, EXIT_VIOLATION};
use crate::output::{fmt_num, key_values, Cell, Output, Table};

fn instance_label(inst: &ProblemInstance) -> String {
    format!("n={} m={} k={} {}", inst.n, inst.m, inst.k, inst.dist)
}

/// `phi` from the config, validated, or the optimum.
fn resolve_phi(cfg: &RunConfig, inst: &ProblemInstance) -> Result<f64, CliError> {
    match cfg.phi {
        Some(phi) => {
            inst.check_phi(phi)?;
            Ok(phi)
        }
        None => Ok(solve_instance(inst)?.phi_star),
    }
}

pub fn solve(cfg: &RunConfig) -> Result<Output, CliError> {
    let inst = cfg.instance()?;
    let r = solve_instance(&inst)?;
    let part = &r.partition;
    let mut text = key_values(&[
        ("instance", instance_label(&inst)),
        ("phi*", fmt_num(r.phi_star)),
        ("payoff", fmt_num(r.payoff)),
        ("case", part.case_tag.label().to_string()),
        ("gamma1", fmt_num(part.gamma1)),
        ("gamma2", fmt_num(part.gamma2)),
        ("gamma3", fmt_num(part.gamma3)),
        ("foc residual", fmt_num(r.foc_residual)),
        ("interior", r.interior.to_string()),
        ("first best", fmt_num(r.baselines.first_best)),
        ("random lottery", fmt_num(r.baselines.random_lottery)),
        ("k-top", fmt_num(r.baselines.k_top)),
        ("golden gap", fmt_num(r.golden.gap)),
    ]);
    let mut regions = Table::new("regions", &["lo", "hi", "region"]);
    for iv in &part.intervals {
        regions.push(vec![iv.lo.into(), iv.hi.into(), iv.label.as_str().into()]);
    }
    text.push('\n');
    text.push_str(&regions.to_text());

    let mut row = Table::new(
        "solve",
        &[
            "n", "m", "k", "dist", "phi_star", "payoff", "case", "gamma1", "gamma2", "gamma3",
            "foc_residual", "first_best", "random_lottery", "k_top",
        ],
    );
    row.push(solve_row(&r));
    Output::new(&r, text, vec![row], EXIT_OK)
}

fn solve_row(r: &SolveReport) -> Vec<Cell> {
    let inst = &r.instance;
    let p = &r.partition;
    vec![
        inst.n.into(),
        inst.m.into(),
        inst.k.into(),
        inst.dist.to_string().into(),
        r.phi_star.into(),
        r.payoff.into(),
        p.case_tag.label().into(),
        p.gamma1.into(),
        p.gamma2.into(),
        p.gamma3.into(),
        r.foc_residual.into(),
        r.baselines.first_best.into(),
        r.baselines.random_lottery.into(),
        r.baselines.k_top.into(),
    ]
}

pub fn simulate(cfg: &RunConfig, args: &SimulateArgs) -> Result<Output, CliError> {
    let inst = cfg.instance()?;
    let phi = resolve_phi(cfg, &inst)?;
    if args.epic_witness {
        return epic(&inst, phi);
    }
    let sim = SimConfig {
        trials: cfg.trials,
        seed: cfg.seed,
        bins: cfg.bins,
        lottery_trials: args.lottery_trials,
        audit_trials: args.audit_trials,
        max_rounds: args.max_rounds,
        z_stop: args.z_stop,
        band: args.band,
    };
    let r = run_simulation(&inst, phi, &sim)?;
    let min_within = args.min_within.unwrap_or(cfg.bins - cfg.bins / 32);
    let ok = r.trials == 0 || r.passes(min_within);

    let mut pairs = vec![
        ("instance", instance_label(&inst)),
        ("phi", fmt_num(phi)),
        ("trials", r.trials.to_string()),
        ("seed", r.seed.to_string()),
        ("payoff", format!("{} +/- {}", fmt_num(r.payoff_hat), fmt_num(r.payoff_se))),
        ("payoff target", fmt_num(r.payoff_target)),
        ("capacity violations", r.capacity_violations.to_string()),
        ("P bins within band", format!("{} of {}", r.within_p, r.bins.len())),
        ("A bins within band", format!("{} of {}", r.within_a, r.bins.len())),
        ("max |P - target|", fmt_num(r.max_dev_p)),
        ("max |A - target|", fmt_num(r.max_dev_a)),
    ];
    for (name, cal) in [("lottery", &r.lottery), ("audit", &r.audit)] {
        if let Some(c) = cal {
            pairs.push((
                name,
                format!("{} rounds, max |z| {}, converged {}", c.rounds, fmt_num(c.max_z), c.converged),
            ));
        }
    }
    pairs.push(("verdict", if ok { "pass" } else { "fail" }.to_string()));

    let mut bins = Table::new(
        "bins",
        &["lo", "hi", "observations", "p_target", "p_hat", "se_p", "z_p", "a_target", "a_hat", "se_a", "z_a"],
    );
    for b in &r.bins {
        bins.push(vec![
            b.lo.into(),
            b.hi.into(),
            b.observations.into(),
            b.p_target.into(),
            b.p_hat.into(),
            b.se_p.into(),
            b.z_p.into(),
            b.a_target.into(),
            b.a_hat.into(),
            b.se_a.into(),
            b.z_a.into(),
        ]);
    }
    let mut text = key_values(&pairs);
    if !r.bins.is_empty() {
        text.push('\n');
        text.push_str(&bins.to_text());
    }
    Output::new(&r, text, vec![bins], if ok { EXIT_OK } else { EXIT_VIOLATION })
}

#[derive(Serialize)]
struct EpicOutput<'a> {
    #[serde(flatten)]
    witness: &'a capver_core::sim::EpicWitness,
    /// `(m - k) / m`.
    escape_bound: f64,
}

fn epic(inst: &ProblemInstance, phi: f64) -> Result<Output, CliError> {
    let w = epic_counterexample(inst, phi)?;
    let bound = (inst.m - inst.k) as f64 / inst.m as f64;
    let profile: Vec<String> = w.profile.iter().map(|t| fmt_num(*t)).collect();
    let winners: Vec<String> = w.winners_after.iter().map(|i| i.to_string()).collect();
    let text = key_values(&[
        ("instance", instance_label(inst)),
        ("phi", fmt_num(phi)),
        ("profile", profile.join(" ")),
        ("agent", w.agent.to_string()),
        ("truthful type", fmt_num(w.truthful_type)),
        ("truthful allocation", fmt_num(w.truthful_allocation)),
        ("deviation", fmt_num(w.deviation)),
        ("winners after", winners.join(" ")),
        ("escape probability", fmt_num(w.escape_probability)),
        ("bound (m-k)/m", fmt_num(bound)),
        ("gain lower bound", fmt_num(w.gain_lower_bound)),
    ]);
    let mut row = Table::new(
        "epic",
        &["agent", "truthful_type", "deviation", "truthful_allocation", "escape_probability", "escape_bound", "gain_lower_bound"],
    );
    row.push(vec![
        w.agent.into(),
        w.truthful_type.into(),
        w.deviation.into(),
        w.truthful_allocation.into(),
        w.escape_probability.into(),
        bound.into(),
        w.gain_lower_bound.into(),
    ]);
    Output::new(&EpicOutput { witness: &w, escape_bound: bound }, text, vec![row], EXIT_OK)
}

fn read_file(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path)
        .map_err(|e| CliError::validation(format!("cannot read {}: {e}", path.display())))
}

fn load_check_input(args: &CheckArgs) -> Result<(DiscreteInstance, InterimRule), CliError> {
    if let Some(Bundled::Footnote) = args.bundled {
        return Ok(footnote());
    }
    let (Some(inst), Some(rule)) = (&args.instance, &args.rule) else {
        return Err(CliError::validation("need --instance and --rule, or --bundled"));
    };
    let parse = |what: &str, path: &Path, e: capver_flow::FlowError| {
        CliError::validation(format!("{what} {}: {e}", path.display()))
    };
    let instance = parse_instance(&read_file(inst)?).map_err(|e| parse("instance", inst, e))?;
    let rule_v = parse_rule(&read_file(rule)?).map_err(|e| parse("rule", rule, e))?;
    Ok((instance, rule_v))
}

/// `E_1 = {0}, E_2 = {1}` with type values, agents numbered from 1.
fn describe_set(inst: &DiscreteInstance, set: &CheckSet) -> String {
    set.members
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let types: Vec<String> = m.iter().map(|&t| fmt_num(inst.grid(i).types[t])).collect();
            format!("E_{} = {{{}}}", i + 1, types.join(", "))
        })
        .collect::<Vec<_>>()
        .join(", ")
}

#[derive(Serialize)]
struct ViolationOutput<'a> {
    set: &'a CheckSet,
    /// Type values of each agent's members.
    types: Vec<Vec<f64>>,
    lhs: f64,
    rhs: f64,
    excess: f64,
}

impl<'a> ViolationOutput<'a> {
    fn new(inst: &DiscreteInstance, v: &'a Violation) -> Self {
        let types = v
            .set
            .members
            .iter()
            .enumerate()
            .map(|(i, m)| m.iter().map(|&t| inst.grid(i).types[t]).collect())
            .collect();
        ViolationOutput { set: &v.set, types, lhs: v.lhs, rhs: v.rhs, excess: v.excess() }
    }
}

#[derive(Serialize)]
struct ProfileRow {
    profile: Vec<usize>,
    probability: f64,
    allocation: Vec<f64>,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
enum CheckOutput<'a> {
    UpperSets {
        passed: bool,
        sets_checked: usize,
        worst: ViolationOutput<'a>,
    },
    Flow {
        feasible: bool,
        #[serde(skip_serializing_if = "Option::is_none")]
        violation: Option<ViolationOutput<'a>>,
        #[serde(skip_serializing_if = "Option::is_none")]
        marginal_error: Option<f64>,
        #[serde(skip_serializing_if = "Option::is_none")]
        constraint_violation: Option<f64>,
        #[serde(skip_serializing_if = "Vec::is_empty")]
        expost: Vec<ProfileRow>,
    },
}

fn violation_table(inst: &DiscreteInstance, v: &Violation) -> Table {
    let mut t = Table::new("violation", &["agent", "type_index", "type", "lhs", "rhs"]);
    for (i, m) in v.set.members.iter().enumerate() {
        for &idx in m {
            t.push(vec![(i + 1).into(), idx.into(), inst.grid(i).types[idx].into(), v.lhs.into(), v.rhs.into()]);
        }
    }
    t
}

pub fn check(args: &CheckArgs) -> Result<Output, CliError> {
    let (inst, rule) = load_check_input(args)?;
    let opts = FlowOptions { max_profiles: args.max_profiles, tolerance: args.tolerance };

    if args.upper_sets_only {
        let rep = check_family(&inst, &rule, upper_sets(&inst), &opts)?;
        let text = key_values(&[
            ("mode", "upper sets only".to_string()),
            ("verdict", if rep.passed { "all upper sets pass" } else { "violated" }.to_string()),
            ("sets checked", rep.sets_checked.to_string()),
            ("worst set", describe_set(&inst, &rep.worst.set)),
            ("lhs", fmt_num(rep.worst.lhs)),
            ("rhs", fmt_num(rep.worst.rhs)),
        ]);
        let table = violation_table(&inst, &rep.worst);
        let code = if rep.passed { EXIT_OK } else { EXIT_VIOLATION };
        let out = CheckOutput::UpperSets {
            passed: rep.passed,
            sets_checked: rep.sets_checked,
            worst: ViolationOutput::new(&inst, &rep.worst),
        };
        return Output::new(&out, text, vec![table], code);
    }

    match check_feasible(&inst, &rule, &opts)? {
        FeasibilityVerdict::Infeasible(v) => {
            let text = key_values(&[
                ("verdict", "infeasible".to_string()),
                ("witness", describe_set(&inst, &v.set)),
                ("lhs", fmt_num(v.lhs)),
                ("rhs", fmt_num(v.rhs)),
            ]);
            let table = violation_table(&inst, &v);
            let out = CheckOutput::Flow {
                feasible: false,
                violation: Some(ViolationOutput::new(&inst, &v)),
                marginal_error: None,
                constraint_violation: None,
                expost: Vec::new(),
            };
            Output::new(&out, text, vec![table], EXIT_VIOLATION)
        }
        FeasibilityVerdict::Feasible(Certificate::UpperSets { .. }) => {
            Err(CliError::internal("flow check returned no ex-post rule"))
        }
        FeasibilityVerdict::Feasible(Certificate::ExPost(expost)) => {
            let marginals = expost.marginals(&inst);
            let marginal_error = marginals
                .0
                .iter()
                .zip(&rule.0)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0, f64::max);
            let constraint_violation = expost.max_constraint_violation(&inst).max(0.0);
            let mut rows = Vec::new();
            let mut table = Table::new("expost", &["profile", "probability", "agent", "allocation"]);
            inst.for_each_profile(|idx, profile, prob| {
                let allocation = expost.profile(idx).to_vec();
                let label: Vec<String> = profile.iter().map(|t| t.to_string()).collect();
                for (i, &p) in allocation.iter().enumerate() {
                    table.push(vec![label.join(" ").into(), prob.into(), (i + 1).into(), p.into()]);
                }
                rows.push(ProfileRow { profile: profile.to_vec(), probability: prob, allocation });
            });
            let mut text = key_values(&[
                ("verdict", "feasible".to_string()),
                ("profiles", rows.len().to_string()),
                ("max marginal error", fmt_num(marginal_error)),
                ("max constraint violation", fmt_num(constraint_violation)),
            ]);
            text.push('\n');
            text.push_str(&table.to_text());
            let out = CheckOutput::Flow {
                feasible: true,
                violation: None,
                marginal_error: Some(marginal_error),
                constraint_violation: Some(constraint_violation),
                expost: rows,
            };
            Output::new(&out, text, vec![table], EXIT_OK)
        }
    }
}

/// `3`, `1,2,5`, `2..4` (inclusive) or any comma-separated mix.
pub fn parse_counts(text: &str) -> Result<Vec<usize>, CliError> {
    let bad = |s: &str| CliError::validation(format!("cannot parse {s:?} as a count or range"));
    let mut out = Vec::new();
    for part in text.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let a: usize = a.trim().parse().map_err(|_| bad(part))?;
            let b: usize = b.trim().parse().map_err(|_| bad(part))?;
            out.extend(a..=b);
        } else {
            out.push(part.parse().map_err(|_| bad(part))?);
        }
    }
    if out.is_empty() {
        return Err(bad(text));
    }
    Ok(out)
}

fn parse_dists(text: &str) -> Result<Vec<TypeDistribution>, CliError> {
    text.split([',', ';'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(CliError::from))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub dist: String,
    pub ok: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<SolveReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

pub fn sweep(cfg: &RunConfig, args: &SweepArgs) -> Result<Output, CliError> {
    let ns = match &args.ns {
        Some(s) => parse_counts(s)?,
        None => vec![cfg.n],
    };
    let ms = match &args.ms {
        Some(s) => parse_counts(s)?,
        None => vec![cfg.m],
    };
    let ks = args.ks.as_deref().map(parse_counts).transpose()?;
    let dists = match &args.dists {
        Some(s) => parse_dists(s)?,
        None => vec![cfg.dist],
    };
    let mut cells = Vec::new();
    for &n in &ns {
        for &m in &ms {
            let ks_here = ks.clone().unwrap_or_else(|| (1..m).collect());
            for &k in &ks_here {
                for &dist in &dists {
                    cells.push((n, m, k, dist));
                }
            }
        }
    }
    let rows: Vec<SweepRow> = cells
        .par_iter()
        .map(|&(n, m, k, dist)| {
            let result = ProblemInstance::new(n, m, k, dist).and_then(|inst| solve_instance(&inst));
            let (report, error) = match result {
                Ok(r) => (Some(r), None),
                Err(e) => (None, Some(e.to_string())),
            };
            SweepRow { n, m, k, dist: dist.to_string(), ok: report.is_some(), report, error }
        })
        .collect();

    let mut table = Table::new(
        "sweep",
        &[
            "n", "m", "k", "dist", "status", "phi_star", "payoff", "case", "first_best",
            "random_lottery", "k_top", "error",
        ],
    );
    for row in &rows {
        let mut cells: Vec<Cell> = vec![row.n.into(), row.m.into(), row.k.into(), row.dist.clone().into()];
        match &row.report {
            Some(r) => {
                cells.extend([
                    "ok".into(),
                    r.phi_star.into(),
                    r.payoff.into(),
                    r.partition.case_tag.label().into(),
                    r.baselines.first_best.into(),
                    r.baselines.random_lottery.into(),
                    r.baselines.k_top.into(),
                    "".into(),
                ]);
            }
            None => {
                cells.extend(["error".into(), "".into(), "".into(), "".into(), "".into(), "".into(), "".into()]);
                cells.push(row.error.clone().unwrap_or_default().into());
            }
        }
        table.push(cells);
    }
    let text = table.to_text();
    Output::new(&rows, text, vec![table], EXIT_OK)
}

#[derive(Serialize)]
struct PlotData {
    instance: ProblemInstance,
    phi: f64,
    envelope: Vec<capver_core::EnvelopeRow>,
    interim: Vec<capver_core::InterimRow>,
}

pub fn plot_data(cfg: &RunConfig) -> Result<Output, CliError> {
    let inst = cfg.instance()?;
    let phi = resolve_phi(cfg, &inst)?;
    let envelope = envelope_table(&inst, phi, cfg.grid)?;
    let interim = merit_with_guarantee(phi, &inst)?.table(cfg.grid);

    let mut env = Table::new("envelope", &["q", "c_allo", "c_aud", "c_ic", "envelope"]);
    for r in &envelope {
        env.push(vec![r.q.into(), r.c_allo.into(), r.c_aud.into(), r.c_ic.into(), r.envelope.into()]);
    }
    let mut rules = Table::new("interim", &["t", "p", "a"]);
    for r in &interim {
        rules.push(vec![r.t.into(), r.p.into(), r.a.into()]);
    }
    let mut text = key_values(&[("instance", instance_label(&inst)), ("phi", fmt_num(phi))]);
    text.push('\n');
    text.push_str(&env.to_text());
    text.push('\n');
    text.push_str(&rules.to_text());
    let data = PlotData { instance: inst, phi, envelope, interim };
    Output::new(&data, text, vec![env, rules], EXIT_OK)
}
