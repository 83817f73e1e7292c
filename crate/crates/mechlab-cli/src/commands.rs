//! Subcommand drivers, generic over the numeric backend.

use std::path::Path;
use std::time::Instant;

use mechlab_core::expect_tensors;
use mechlab_core::game::{
    budget_report, play, verify_stage1_honesty, verify_stage2_dominance, Battery, BuyerStrategy,
};
use mechlab_core::model::{AssignmentProblem, MechError, ValidationReport};
use mechlab_core::num::Scalar;
use mechlab_core::prob::{class_beliefs, posterior_flat, PartitionSet, StateDistribution};
use mechlab_core::qap::QapSolution;
use mechlab_core::replica::ReplicaFamily;
use mechlab_core::rng::Rng;
use mechlab_core::scenario::{
    load_family, load_reports, load_strategies, FamilyFile, Scenario, ScenarioError,
};
use mechlab_core::scoring::{calibrate_delta, Calibration, RewardSystem};
use mechlab_core::vcg::stage2_settle;

use crate::jout::{fmt_sig12, J};

#[derive(Debug)]
pub enum CliError {
    Scenario(ScenarioError),
    Mech(MechError),
    Usage(String),
}

impl From<ScenarioError> for CliError {
    fn from(e: ScenarioError) -> Self {
        CliError::Scenario(e)
    }
}

impl From<MechError> for CliError {
    fn from(e: MechError) -> Self {
        CliError::Mech(e)
    }
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Scenario(ScenarioError::Io { .. }) => "io",
            CliError::Scenario(ScenarioError::Parse { .. }) => "parse",
            CliError::Scenario(ScenarioError::Schema { .. }) => "schema",
            CliError::Scenario(ScenarioError::Num { .. }) => "number",
            CliError::Scenario(ScenarioError::Validation { .. }) => "validation",
            CliError::Scenario(ScenarioError::Semantic(_)) => "semantic",
            CliError::Scenario(ScenarioError::Mech(_)) | CliError::Mech(_) => "mechanism",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn message(&self) -> String {
        match self {
            CliError::Scenario(e) => e.to_string(),
            CliError::Mech(e) => e.to_string(),
            CliError::Usage(m) => m.clone(),
        }
    }

    pub fn to_stderr_json(&self) -> String {
        J::obj(vec![(
            "error",
            J::obj(vec![
                ("kind", J::Str(self.kind().to_string())),
                ("message", J::Str(self.message())),
            ]),
        )])
        .render()
    }
}

pub struct CommandOutput {
    pub text: String,
    pub artifact: &'static str,
    pub exit_code: i32,
}

impl CommandOutput {
    fn ok(text: String, artifact: &'static str) -> Self {
        CommandOutput {
            text,
            artifact,
            exit_code: 0,
        }
    }
}

// --- shared rendering helpers ---

fn validation_json(report: &ValidationReport) -> J {
    J::obj(vec![
        ("pass", J::Bool(report.pass())),
        (
            "violations",
            J::Arr(
                report
                    .violations
                    .iter()
                    .map(|v| {
                        J::obj(vec![
                            ("rule", J::Str(v.rule.clone())),
                            ("location", J::Str(v.location.clone())),
                            ("detail", J::Str(v.detail.clone())),
                        ])
                    })
                    .collect(),
            ),
        ),
    ])
}

fn matching_json(solution: &QapSolution<impl Scalar>) -> J {
    J::Arr(
        solution
            .matching
            .pairs()
            .map(|(i, j)| {
                J::obj(vec![
                    ("buyer", J::Int(i as i64 + 1)),
                    ("seller", J::Int(j as i64 + 1)),
                ])
            })
            .collect(),
    )
}

fn scalar_vec_json<S: Scalar>(values: &[S]) -> J {
    J::nums(values.iter().map(|x| x.approx_f64()))
}

fn distribution_json<S: Scalar>(pi: &StateDistribution<S>) -> J {
    J::nums(pi.probs().iter().map(|x| x.approx_f64()))
}

/// Empty batteries leave min-margins at infinity; render those as null.
fn num_or_null(x: f64) -> J {
    if x.is_finite() {
        J::Num(x)
    } else {
        J::Null
    }
}

fn parse_pi<S: Scalar>(
    problem: &AssignmentProblem<S>,
    text: &str,
) -> Result<StateDistribution<S>, CliError> {
    let entries: Vec<S> = text
        .split(',')
        .map(|part| {
            S::parse_literal(part.trim()).map_err(|source| {
                CliError::Scenario(ScenarioError::Num {
                    literal: part.trim().to_string(),
                    source,
                })
            })
        })
        .collect::<Result<_, _>>()?;
    if entries.len() != problem.state_count() {
        return Err(CliError::Usage(format!(
            "--pi needs {} entries, got {}",
            problem.state_count(),
            entries.len()
        )));
    }
    StateDistribution::new(entries).map_err(CliError::Mech)
}

fn parse_signals<S: Scalar>(
    problem: &AssignmentProblem<S>,
    text: &str,
) -> Result<Vec<usize>, CliError> {
    let labels: Vec<&str> = text.split(',').map(str::trim).collect();
    if labels.len() != problem.n() {
        return Err(CliError::Usage(format!(
            "--signals needs {} labels, got {}",
            problem.n(),
            labels.len()
        )));
    }
    labels
        .iter()
        .enumerate()
        .map(|(i, label)| problem.signal_index(i, label).map_err(CliError::Mech))
        .collect()
}

fn signal_labels<S: Scalar>(problem: &AssignmentProblem<S>, profile: &[usize]) -> J {
    J::strs(
        profile
            .iter()
            .enumerate()
            .map(|(i, &b)| problem.signal_sets()[i][b].clone()),
    )
}

// --- commands ---

pub fn validate<S: Scalar>(scenario: &Scenario) -> Result<CommandOutput, CliError> {
    let (_, report) = scenario.problem_unvalidated::<S>()?;
    let text = validation_json(&report).render();
    Ok(CommandOutput {
        text,
        artifact: "validate.json",
        exit_code: if report.pass() { 0 } else { 1 },
    })
}

pub fn solve<S: Scalar>(
    scenario: &Scenario,
    pi: Option<&str>,
    signals: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let problem = scenario.problem::<S>()?;
    let pi = resolve_posterior(&problem, pi, signals)?;
    let tensors = expect_tensors(&problem, &pi);
    let solution = mechlab_core::solve_qap(&tensors)?;
    let doc = J::obj(vec![
        ("posterior", distribution_json(&pi)),
        ("matching", matching_json(&solution)),
        ("value", J::Num(solution.value.approx_f64())),
        ("per_buyer", scalar_vec_json(&solution.per_buyer)),
    ]);
    Ok(CommandOutput::ok(doc.render(), "solve.json"))
}

fn resolve_posterior<S: Scalar>(
    problem: &AssignmentProblem<S>,
    pi: Option<&str>,
    signals: Option<&str>,
) -> Result<StateDistribution<S>, CliError> {
    match (pi, signals) {
        (Some(text), None) => parse_pi(problem, text),
        (None, Some(text)) => {
            let profile = parse_signals(problem, text)?;
            let flat = problem.profile_flat(&profile).map_err(CliError::Mech)?;
            Ok(posterior_flat(problem, flat))
        }
        (Some(_), Some(_)) => Err(CliError::Usage(
            "give either --pi or --signals, not both".into(),
        )),
        (None, None) => Err(CliError::Usage("give --pi or --signals".into())),
    }
}

pub fn vcg<S: Scalar>(
    scenario: &Scenario,
    pi: &str,
    reports_path: &Path,
) -> Result<CommandOutput, CliError> {
    let problem = scenario.problem::<S>()?;
    let pi = parse_pi(&problem, pi)?;
    let reports = load_reports(reports_path)?.reports(&problem)?;
    let settlement = stage2_settle(&problem, &pi, &reports)?;
    let vcg_revenue: f64 = settlement
        .vcg
        .transfers
        .iter()
        .map(|x| -x.approx_f64())
        .sum();
    let doc = J::obj(vec![
        ("posterior", distribution_json(&pi)),
        ("matching", matching_json(&settlement.vcg.outcome)),
        ("value", J::Num(settlement.vcg.outcome.value.approx_f64())),
        (
            "per_buyer",
            scalar_vec_json(&settlement.vcg.outcome.per_buyer),
        ),
        ("transfers", scalar_vec_json(&settlement.vcg.transfers)),
        ("buyer_net", scalar_vec_json(&settlement.vcg.buyer_net)),
        (
            "seller_payments",
            scalar_vec_json(&settlement.seller_payments),
        ),
        ("vcg_revenue", J::Num(vcg_revenue)),
    ]);
    Ok(CommandOutput::ok(doc.render(), "vcg.json"))
}

fn calibration_json<S: Scalar>(problem: &AssignmentProblem<S>, cal: &Calibration<S>) -> J {
    let binding = match cal.binding {
        Some((i, b, r)) => J::obj(vec![
            ("buyer", J::Int(i as i64 + 1)),
            ("observed", J::Str(problem.signal_sets()[i][b].clone())),
            ("report", J::Str(problem.signal_sets()[i][r].clone())),
        ]),
        None => J::Null,
    };
    J::obj(vec![
        ("delta", J::Num(cal.delta.approx_f64())),
        ("binding_triple", binding),
        ("gap", J::Num(cal.gap_at_binding.approx_f64())),
        ("bound", J::Num(cal.bound_at_binding.approx_f64())),
        (
            "margin",
            J::Num(
                (cal.delta.clone() * cal.gap_at_binding.clone() - cal.bound_at_binding.clone())
                    .approx_f64(),
            ),
        ),
    ])
}

pub fn calibrate<S: Scalar>(
    scenario: &Scenario,
    margin: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let problem = scenario.problem::<S>()?;
    let margin = parse_margin::<S>(scenario, margin)?;
    let cal = calibrate_delta(&problem, &margin)?;
    Ok(CommandOutput::ok(
        calibration_json(&problem, &cal).render(),
        "calibrate.json",
    ))
}

fn parse_margin<S: Scalar>(scenario: &Scenario, flag: Option<&str>) -> Result<S, CliError> {
    let literal = flag.unwrap_or(&scenario.options.margin);
    S::parse_literal(literal).map_err(|source| {
        CliError::Scenario(ScenarioError::Num {
            literal: literal.to_string(),
            source,
        })
    })
}

pub fn simulate<S: Scalar>(
    scenario: &Scenario,
    strategies_path: &Path,
    signals: &str,
    delta: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let problem = scenario.problem::<S>()?;
    let strategies: Vec<BuyerStrategy<S>> =
        load_strategies(strategies_path)?.strategies(&problem)?;
    let profile = parse_signals(&problem, signals)?;
    let delta = match delta {
        Some(literal) => S::parse_literal(literal).map_err(|source| {
            CliError::Scenario(ScenarioError::Num {
                literal: literal.to_string(),
                source,
            })
        })?,
        None => {
            let margin = parse_margin::<S>(scenario, None)?;
            calibrate_delta(&problem, &margin)?.delta
        }
    };
    let rewards = RewardSystem::spherical(&problem, delta.clone());
    let run = play(&problem, &rewards, &strategies, &profile)?;
    let budget = budget_report(&run);
    let doc = J::obj(vec![
        ("signals", signal_labels(&problem, &run.true_signals)),
        ("reports", signal_labels(&problem, &run.reports)),
        ("posted_posterior", distribution_json(&run.posted)),
        ("delta", J::Num(delta.approx_f64())),
        (
            "matching",
            J::Arr(
                run.matching
                    .pairs()
                    .map(|(i, j)| {
                        J::obj(vec![
                            ("buyer", J::Int(i as i64 + 1)),
                            ("seller", J::Int(j as i64 + 1)),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("transfers", scalar_vec_json(&run.transfers)),
        ("rewards", scalar_vec_json(&run.rewards)),
        ("seller_payments", scalar_vec_json(&run.seller_payments)),
        ("buyer_payoffs", scalar_vec_json(&run.buyer_payoffs)),
        ("gross_value", J::Num(run.gross_value.approx_f64())),
        ("vcg_revenue", J::Num(budget.vcg_revenue.approx_f64())),
        ("reward_outlay", J::Num(budget.reward_outlay.approx_f64())),
        ("net_payment", J::Num(run.net_payment.approx_f64())),
        (
            "accounting_imbalance",
            J::Num(run.accounting_imbalance().approx_f64()),
        ),
    ]);
    Ok(CommandOutput::ok(doc.render(), "simulate.json"))
}

pub fn verify<S: Scalar>(scenario: &Scenario, seed: u64) -> Result<CommandOutput, CliError> {
    let (problem, validation) = scenario.problem_unvalidated::<S>()?;
    if !validation.pass() {
        let doc = J::obj(vec![("validation", validation_json(&validation))]);
        return Ok(CommandOutput {
            text: doc.render(),
            artifact: "verify.json",
            exit_code: 1,
        });
    }
    let options = &scenario.options;
    let margin = parse_margin::<S>(scenario, None)?;
    let cal = calibrate_delta(&problem, &margin)?;
    let rewards = RewardSystem::spherical(&problem, cal.delta.clone());

    let stage2_battery = Battery::stage2(
        &problem,
        seed,
        options.battery_opponents,
        options.battery_misreports,
    );
    let stage2 = verify_stage2_dominance(&problem, &stage2_battery);
    let stage1_battery = Battery::stage1(
        &problem,
        seed.wrapping_add(1),
        options.stage1_opponents,
        options.stage1_candidates,
    );
    let stage1 = verify_stage1_honesty(&problem, &rewards, &stage1_battery);

    let signal_label = |i: usize, s: usize| problem.signal_sets()[i][s].clone();
    let stage2_ok = stage2
        .violations
        .iter()
        .all(|v| v.margin >= -options.dominance_tol);
    let stage2_json = J::obj(vec![
        ("cells_checked", J::Int(stage2.cells_checked as i64)),
        (
            "candidates_checked",
            J::Int(stage2.candidates_checked as i64),
        ),
        ("min_margin", num_or_null(stage2.min_margin)),
        (
            "violations",
            J::Arr(
                stage2
                    .violations
                    .iter()
                    .map(|v| {
                        J::obj(vec![
                            ("buyer", J::Int(v.buyer as i64 + 1)),
                            ("observed", J::Str(signal_label(v.buyer, v.observed))),
                            ("class", J::Int(v.class_index as i64)),
                            ("opponent_profile", J::Int(v.opponent_profile as i64)),
                            ("candidate", J::Int(v.candidate as i64)),
                            ("margin", J::Num(v.margin)),
                        ])
                    })
                    .collect(),
            ),
        ),
        ("pass", J::Bool(stage2_ok)),
    ]);
    let stage1_json = J::obj(vec![
        (
            "cells",
            J::Arr(
                stage1
                    .cells
                    .iter()
                    .map(|c| {
                        J::obj(vec![
                            ("buyer", J::Int(c.buyer as i64 + 1)),
                            ("observed", J::Str(signal_label(c.buyer, c.observed))),
                            ("report", J::Str(signal_label(c.buyer, c.report))),
                            ("opponent_profile", J::Int(c.opponent_profile as i64)),
                            ("truthful_value", J::Num(c.truthful_value)),
                            ("best_deviation_value", J::Num(c.best_deviation_value)),
                            ("empirical_margin", J::Num(c.empirical_margin)),
                            ("analytic_margin", J::Num(c.analytic_margin)),
                        ])
                    })
                    .collect(),
            ),
        ),
        (
            "min_empirical_margin",
            num_or_null(stage1.min_empirical_margin),
        ),
        (
            "min_analytic_margin",
            num_or_null(stage1.min_analytic_margin),
        ),
        ("violations", J::Int(stage1.violations as i64)),
        ("pass", J::Bool(stage1.pass())),
    ]);
    let all_pass = stage2_ok && stage1.pass();
    let doc = J::obj(vec![
        ("validation", validation_json(&validation)),
        ("calibration", calibration_json(&problem, &cal)),
        ("stage2_dominance", stage2_json),
        ("stage1_honesty", stage1_json),
        ("pass", J::Bool(all_pass)),
    ]);
    Ok(CommandOutput {
        text: doc.render(),
        artifact: "verify.json",
        exit_code: if all_pass { 0 } else { 1 },
    })
}

pub fn report<S: Scalar>(scenario: &Scenario, seed: u64) -> Result<CommandOutput, CliError> {
    let verify_out = verify::<S>(scenario, seed)?;
    if verify_out.exit_code != 0 {
        return Ok(CommandOutput {
            text: verify_out.text,
            artifact: "report.json",
            exit_code: verify_out.exit_code,
        });
    }
    let problem = scenario.problem::<S>()?;
    let margin = parse_margin::<S>(scenario, None)?;
    let cal = calibrate_delta(&problem, &margin)?;
    let rewards = RewardSystem::spherical(&problem, cal.delta.clone());
    let truthful: Vec<BuyerStrategy<S>> = (0..problem.n())
        .map(|_| BuyerStrategy::truthful())
        .collect();
    // Budget across truthful runs: every profile at desk scale, a seeded
    // sample beyond.
    let mut flats: Vec<usize> = (0..problem.profile_count()).collect();
    if flats.len() > 64 {
        let mut rng = Rng::new(seed).fork("budget-profiles", 0);
        flats = (0..64)
            .map(|_| rng.next_usize(problem.profile_count()))
            .collect();
        flats.sort_unstable();
        flats.dedup();
    }
    let mut max_net = f64::NEG_INFINITY;
    let mut min_net = f64::INFINITY;
    let mut max_outlay: f64 = 0.0;
    for &flat in &flats {
        let profile = problem.profile_of_flat(flat);
        let run = play(&problem, &rewards, &truthful, &profile)?;
        let budget = budget_report(&run);
        max_net = max_net.max(budget.net.approx_f64());
        min_net = min_net.min(budget.net.approx_f64());
        max_outlay = max_outlay.max(budget.reward_outlay.approx_f64());
    }
    let budget_json = J::obj(vec![
        ("profiles_evaluated", J::Int(flats.len() as i64)),
        ("max_net_payment", J::Num(max_net)),
        ("min_net_payment", J::Num(min_net)),
        ("max_reward_outlay", J::Num(max_outlay)),
        ("max_deficit", J::Num(max_net.max(0.0))),
    ]);
    // Re-render the verify document with the budget section appended.
    let verify_body = verify_out
        .text
        .trim_end()
        .trim_end_matches('}')
        .trim_end()
        .trim_end_matches(',')
        .to_string();
    let mut text = verify_body;
    text.push_str(",\n  \"budget\": ");
    let budget_text = budget_json.render();
    let mut lines = budget_text.trim_end().lines();
    if let Some(first) = lines.next() {
        text.push_str(first);
    }
    for line in lines {
        text.push('\n');
        text.push_str("  ");
        text.push_str(line);
    }
    text.push_str("\n}\n");
    Ok(CommandOutput::ok(text, "report.json"))
}

pub fn inspect<S: Scalar>(
    scenario: &Scenario,
    buyer_one_based: usize,
    signal: Option<&str>,
) -> Result<CommandOutput, CliError> {
    let problem = scenario.problem::<S>()?;
    if buyer_one_based == 0 || buyer_one_based > problem.n() {
        return Err(CliError::Usage(format!(
            "--buyer must lie in 1..={}",
            problem.n()
        )));
    }
    let buyer = buyer_one_based - 1;
    let signals: Vec<usize> = match signal {
        Some(label) => vec![problem.signal_index(buyer, label)?],
        None => (0..problem.signal_size(buyer)).collect(),
    };
    let partitions = PartitionSet::build(&problem);
    let opp_labels = |opp: usize| -> J {
        let profile = problem.opponent_profile(buyer, opp);
        let mut k = 0;
        let mut labels = Vec::new();
        for i in 0..problem.n() {
            if i == buyer {
                continue;
            }
            labels.push(problem.signal_sets()[i][profile[k]].clone());
            k += 1;
        }
        J::strs(labels)
    };
    let mut partition_docs = Vec::new();
    for &r in &signals {
        let partition = partitions.get(buyer, r);
        let classes = partition
            .classes
            .iter()
            .enumerate()
            .map(|(class_idx, class)| {
                J::obj(vec![
                    ("class", J::Int(class_idx as i64)),
                    ("representative", distribution_json(&class.representative)),
                    (
                        "members",
                        J::Arr(class.members.iter().map(|&opp| opp_labels(opp)).collect()),
                    ),
                ])
            })
            .collect();
        // Beliefs at every information set (r, class, observed).
        let mut belief_docs = Vec::new();
        for class_idx in 0..partition.classes.len() {
            for observed in 0..problem.signal_size(buyer) {
                let table = class_beliefs(&problem, partition, class_idx, observed);
                let entries = table
                    .support
                    .iter()
                    .map(|&opp| {
                        J::obj(vec![
                            ("opponents", opp_labels(opp)),
                            ("mass", J::Num(table.opponent_mass(opp).approx_f64())),
                            (
                                "state_conditional",
                                distribution_json(&table.state_conditional(opp)),
                            ),
                        ])
                    })
                    .collect();
                belief_docs.push(J::obj(vec![
                    ("class", J::Int(class_idx as i64)),
                    (
                        "observed",
                        J::Str(problem.signal_sets()[buyer][observed].clone()),
                    ),
                    ("entries", J::Arr(entries)),
                ]));
            }
        }
        partition_docs.push(J::obj(vec![
            ("report", J::Str(problem.signal_sets()[buyer][r].clone())),
            ("classes", J::Arr(classes)),
            ("beliefs", J::Arr(belief_docs)),
        ]));
    }
    let doc = J::obj(vec![
        ("buyer", J::Int(buyer_one_based as i64)),
        ("partitions", J::Arr(partition_docs)),
    ]);
    Ok(CommandOutput::ok(doc.render(), "inspect.json"))
}

// --- replica experiments (always in the float backend) ---

pub fn replica(
    family_path: &Path,
    n_range: &str,
    k_flag: Option<u32>,
    seed: Option<u64>,
    monte_carlo: Option<usize>,
) -> Result<CommandOutput, CliError> {
    let file: FamilyFile = load_family(family_path)?;
    let k = k_flag.unwrap_or(file.k);
    let family: ReplicaFamily<f64> = file.family()?;
    let (lo, hi) = parse_range(n_range)?;
    let seed = seed.unwrap_or(file.seed);
    let mut csv = String::from("n,max_nu,xi_sum_bound,worst_ic_margin,deficit,runtime_s\n");
    for n in lo..=hi {
        let started = Instant::now();
        let nu = family.nu_bound(n, monte_carlo)?;
        let bound = family.xi_sum_bound(n, k);
        let margin_row = family.ic_margin(n, k, monte_carlo);
        let deficit = replica_deficit(&family, n, k, seed)?;
        let runtime = started.elapsed().as_secs_f64();
        csv.push_str(&format!(
            "{n},{},{},{},{},{}\n",
            fmt_sig12(nu),
            fmt_sig12(bound),
            fmt_sig12(margin_row.margin),
            fmt_sig12(deficit),
            fmt_sig12(runtime)
        ));
    }
    Ok(CommandOutput::ok(csv, "replica.csv"))
}

/// Net mechanism payment of a truthful run at a seeded signal profile with
/// the neighbor-spherical rewards.
fn replica_deficit(
    family: &ReplicaFamily<f64>,
    n: usize,
    k: u32,
    seed: u64,
) -> Result<f64, CliError> {
    let problem = family.build_replica(n)?;
    let rewards = RewardSystem::neighbor_spherical(family, &problem, k);
    let mut rng = Rng::new(seed).fork("deficit-profile", n as u64);
    // theta ~ lambda, then signals iid from q(.|theta).
    let mut pick_theta = rng.next_f64();
    let mut theta = family.state_count() - 1;
    for (t, w) in family.lambda().iter().enumerate() {
        if pick_theta < *w {
            theta = t;
            break;
        }
        pick_theta -= *w;
    }
    let profile: Vec<usize> = (0..n)
        .map(|_| {
            let mut draw = rng.next_f64();
            let mut x = family.alphabet() - 1;
            for (cand, qv) in family.q()[theta].iter().enumerate() {
                if draw < *qv {
                    x = cand;
                    break;
                }
                draw -= *qv;
            }
            x
        })
        .collect();
    let truthful: Vec<BuyerStrategy<f64>> = (0..n).map(|_| BuyerStrategy::truthful()).collect();
    let run = play(&problem, &rewards, &truthful, &profile)?;
    Ok(run.net_payment)
}

fn parse_range(text: &str) -> Result<(usize, usize), CliError> {
    let (lo, hi) = text
        .split_once(':')
        .ok_or_else(|| CliError::Usage("--n-range must look like 2:10".into()))?;
    let lo: usize = lo
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad range start `{lo}`")))?;
    let hi: usize = hi
        .trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("bad range end `{hi}`")))?;
    if lo < 2 || hi < lo {
        return Err(CliError::Usage("--n-range needs 2 <= start <= end".into()));
    }
    Ok((lo, hi))
}
