//! Scenario, family, strategy, and report files: strict JSON schemas, exact
//! numeric literals, seeded instance generation, and canonical
//! re-serialization.
//!
//! Numeric leaves accept either a JSON number or a fraction string such as
//! `"2/3"`; literals are parsed exactly in rational mode and preserved
//! verbatim by the canonical form. Indices are 0-based in files.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::game::{BuyerStrategy, Stage1Rule, Stage2Rule};
use crate::model::{
    validate_problem, AssignmentProblem, ExtTable, ExternalityEntry, MechError, Prior,
    ValidationReport,
};
use crate::num::{NumParseError, Scalar};
use crate::replica::ReplicaFamily;
use crate::rng::Rng;
use crate::vcg::StageTwoReport;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("parse error at line {line}, column {column}: {detail}")]
    Parse {
        line: usize,
        column: usize,
        detail: String,
    },
    #[error("schema violation at `{pointer}`: {detail}")]
    Schema { pointer: String, detail: String },
    #[error("invalid number `{literal}`: {source}")]
    Num {
        literal: String,
        source: NumParseError,
    },
    #[error("{0}")]
    Semantic(String),
    #[error("instance fails validation: {summary}")]
    Validation {
        report: ValidationReport,
        summary: String,
    },
    #[error(transparent)]
    Mech(#[from] MechError),
}

/// A numeric literal: JSON number or fraction string, preserved verbatim.
#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(untagged)]
pub enum RawNum {
    Number(serde_json::Number),
    Literal(String),
}

impl RawNum {
    pub fn literal(&self) -> String {
        match self {
            RawNum::Number(n) => n.to_string(),
            RawNum::Literal(s) => s.clone(),
        }
    }

    pub fn to_scalar<S: Scalar>(&self) -> Result<S, ScenarioError> {
        let literal = self.literal();
        S::parse_literal(&literal).map_err(|source| ScenarioError::Num { literal, source })
    }

    pub fn from_f64(v: f64) -> Self {
        RawNum::Number(serde_json::Number::from_f64(v).expect("finite"))
    }
}

// --- scenario schema ---

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub problem: Option<RawProblem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub generator: Option<RawGenerator>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub options: Option<RawOptions>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawProblem {
    pub n: usize,
    pub states: Vec<String>,
    pub signal_sets: Vec<Vec<String>>,
    /// `u[i][j][theta]`
    pub u: Vec<Vec<Vec<RawNum>>>,
    pub v: Vec<Vec<Vec<RawNum>>>,
    /// Sparse externality entries; omitted entries are zero.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub c: Vec<RawExternality>,
    pub prior: RawPrior,
    #[serde(rename = "M")]
    pub m_bound: RawNum,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawExternality {
    pub i: usize,
    pub j: usize,
    pub p: usize,
    pub q: usize,
    pub theta: usize,
    pub value: RawNum,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawPrior {
    /// `table[theta][profile]`, profiles in row-major order over
    /// `(b_1, ..., b_n)` with buyer 1's signal most significant.
    Dense { table: Vec<Vec<RawNum>> },
    /// `P(theta, b) = lambda(theta) * prod_i q[theta][b_i]`.
    ConditionallyIndependent {
        lambda: Vec<RawNum>,
        q: Vec<Vec<RawNum>>,
    },
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawGenerator {
    pub n: usize,
    pub m: usize,
    pub signal_sizes: Vec<usize>,
    #[serde(rename = "M")]
    pub m_bound: RawNum,
    pub seed: u64,
    pub externality_density: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawOptions {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub arithmetic: Option<ArithmeticMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub margin: Option<RawNum>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub battery_misreports: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub battery_opponents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_candidates: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stage1_opponents: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerances: Option<RawTolerances>,
}

#[derive(Debug, Clone, PartialEq, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawTolerances {
    /// Violation threshold for the dominance harnesses (default 1e-9).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dominance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ArithmeticMode {
    Float,
    Rational,
}

/// Effective run options after defaulting.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub arithmetic: ArithmeticMode,
    /// Calibration margin literal (exactly parseable in both backends).
    pub margin: String,
    pub k: u32,
    pub battery_misreports: usize,
    pub battery_opponents: usize,
    pub stage1_candidates: usize,
    pub stage1_opponents: usize,
    pub dominance_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            arithmetic: ArithmeticMode::Float,
            margin: "0.01".to_string(),
            k: 1,
            battery_misreports: 50,
            battery_opponents: 10,
            stage1_candidates: 200,
            stage1_opponents: 5,
            dominance_tol: 1e-9,
        }
    }
}

/// A parsed scenario: an explicit instance or a generator spec, plus options.
#[derive(Debug, Clone)]
pub struct Scenario {
    raw: ScenarioFile,
    pub options: RunOptions,
}

impl Scenario {
    pub fn raw(&self) -> &ScenarioFile {
        &self.raw
    }

    pub fn is_generated(&self) -> bool {
        self.raw.generator.is_some()
    }

    /// Materializes the instance in the requested numeric backend.
    /// The result always passes [`validate_problem`].
    pub fn problem<S: Scalar>(&self) -> Result<AssignmentProblem<S>, ScenarioError> {
        let problem = match (&self.raw.problem, &self.raw.generator) {
            (Some(raw), None) => convert_problem::<S>(raw)?,
            (None, Some(spec)) => generate_problem::<S>(spec)?,
            _ => unreachable!("shape checked at parse time"),
        };
        let report = validate_problem(&problem);
        if !report.pass() {
            let summary = report
                .violations
                .iter()
                .map(|v| format!("{} at {}", v.rule, v.location))
                .collect::<Vec<_>>()
                .join("; ");
            return Err(ScenarioError::Validation { report, summary });
        }
        Ok(problem)
    }

    /// Like [`Self::problem`] but returning the validation report instead of
    /// failing, for the `validate` command.
    pub fn problem_unvalidated<S: Scalar>(
        &self,
    ) -> Result<(AssignmentProblem<S>, ValidationReport), ScenarioError> {
        let problem = match (&self.raw.problem, &self.raw.generator) {
            (Some(raw), None) => convert_problem::<S>(raw)?,
            (None, Some(spec)) => generate_problem::<S>(spec)?,
            _ => unreachable!("shape checked at parse time"),
        };
        let report = validate_problem(&problem);
        Ok((problem, report))
    }

    /// Canonical serialization: stable key order, numeric literals preserved.
    /// Re-parsing the canonical form yields an equal scenario.
    pub fn canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.raw).expect("serializable");
        text.push('\n');
        text
    }
}

fn json_error(text: &str, err: serde_path_to_error::Error<serde_json::Error>) -> ScenarioError {
    let pointer = err.path().to_string();
    let inner = err.into_inner();
    if inner.is_syntax() || inner.is_eof() {
        ScenarioError::Parse {
            line: inner.line(),
            column: inner.column(),
            detail: inner.to_string(),
        }
    } else {
        let _ = text;
        ScenarioError::Schema {
            pointer,
            detail: inner.to_string(),
        }
    }
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: ScenarioFile =
        serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(text, e))?;
    match (&raw.problem, &raw.generator) {
        (Some(_), Some(_)) => {
            return Err(ScenarioError::Semantic(
                "scenario must give either `problem` or `generator`, not both".into(),
            ))
        }
        (None, None) => {
            return Err(ScenarioError::Semantic(
                "scenario must give `problem` or `generator`".into(),
            ))
        }
        _ => {}
    }
    if let Some(raw_problem) = &raw.problem {
        check_problem_shape(raw_problem)?;
    }
    if let Some(generator) = &raw.generator {
        if generator.signal_sizes.len() != generator.n {
            return Err(ScenarioError::Semantic(
                "generator.signal_sizes must have one entry per buyer".into(),
            ));
        }
        if generator.signal_sizes.iter().any(|&s| s < 2) {
            return Err(ScenarioError::Semantic(
                "generator signal sets need at least two signals".into(),
            ));
        }
        if !(0.0..=1.0).contains(&generator.externality_density) {
            return Err(ScenarioError::Semantic(
                "externality_density must lie in [0, 1]".into(),
            ));
        }
    }
    let options = effective_options(raw.options.as_ref());
    Ok(Scenario { raw, options })
}

pub fn load_scenario(path: &Path) -> Result<Scenario, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&text)
}

fn effective_options(raw: Option<&RawOptions>) -> RunOptions {
    let mut options = RunOptions::default();
    let Some(raw) = raw else {
        return options;
    };
    if let Some(mode) = raw.arithmetic {
        options.arithmetic = mode;
    }
    if let Some(margin) = &raw.margin {
        options.margin = margin.literal();
    }
    if let Some(k) = raw.k {
        options.k = k;
    }
    if let Some(v) = raw.battery_misreports {
        options.battery_misreports = v;
    }
    if let Some(v) = raw.battery_opponents {
        options.battery_opponents = v;
    }
    if let Some(v) = raw.stage1_candidates {
        options.stage1_candidates = v;
    }
    if let Some(v) = raw.stage1_opponents {
        options.stage1_opponents = v;
    }
    if let Some(t) = &raw.tolerances {
        if let Some(d) = t.dominance {
            options.dominance_tol = d;
        }
    }
    options
}

fn check_problem_shape(raw: &RawProblem) -> Result<(), ScenarioError> {
    let n = raw.n;
    let m = raw.states.len();
    if raw.signal_sets.len() != n {
        return Err(ScenarioError::Semantic(format!(
            "signal_sets must have n = {n} entries"
        )));
    }
    for (name, tensor) in [("u", &raw.u), ("v", &raw.v)] {
        if tensor.len() != n
            || tensor
                .iter()
                .any(|row| row.len() != n || row.iter().any(|cell| cell.len() != m))
        {
            return Err(ScenarioError::Semantic(format!(
                "{name} must be an {n} x {n} x {m} tensor"
            )));
        }
    }
    let profile_count: usize = raw.signal_sets.iter().map(|s| s.len()).product();
    match &raw.prior {
        RawPrior::Dense { table } => {
            if table.len() != m || table.iter().any(|row| row.len() != profile_count) {
                return Err(ScenarioError::Semantic(format!(
                    "dense prior must be {m} rows of {profile_count} profile entries"
                )));
            }
        }
        RawPrior::ConditionallyIndependent { lambda, q } => {
            if lambda.len() != m || q.len() != m {
                return Err(ScenarioError::Semantic(
                    "conditionally independent prior needs lambda and q per state".into(),
                ));
            }
            let alphabet = raw.signal_sets.first().map(|s| s.len()).unwrap_or(0);
            if raw.signal_sets.iter().any(|s| s.len() != alphabet) {
                return Err(ScenarioError::Semantic(
                    "conditionally independent prior requires a common signal alphabet".into(),
                ));
            }
            if q.iter().any(|row| row.len() != alphabet) {
                return Err(ScenarioError::Semantic(
                    "q rows must match the signal alphabet".into(),
                ));
            }
        }
    }
    Ok(())
}

fn convert_problem<S: Scalar>(raw: &RawProblem) -> Result<AssignmentProblem<S>, ScenarioError> {
    let m = raw.states.len();
    let convert_tensor = |t: &Vec<Vec<Vec<RawNum>>>| -> Result<Vec<Vec<Vec<S>>>, ScenarioError> {
        t.iter()
            .map(|row| {
                row.iter()
                    .map(|cell| cell.iter().map(|x| x.to_scalar()).collect())
                    .collect()
            })
            .collect()
    };
    let u = convert_tensor(&raw.u)?;
    let v = convert_tensor(&raw.v)?;
    let externalities = raw
        .c
        .iter()
        .map(|e| {
            Ok(ExternalityEntry {
                buyer: e.i,
                seller: e.j,
                other_buyer: e.p,
                other_seller: e.q,
                state: e.theta,
                value: e.value.to_scalar()?,
            })
        })
        .collect::<Result<Vec<_>, ScenarioError>>()?;
    let prior = match &raw.prior {
        RawPrior::Dense { table } => {
            let profile_count = table[0].len();
            let mut flat = vec![S::zero(); profile_count * m];
            for (theta, row) in table.iter().enumerate() {
                for (profile, value) in row.iter().enumerate() {
                    flat[profile * m + theta] = value.to_scalar()?;
                }
            }
            Prior::Dense(flat)
        }
        RawPrior::ConditionallyIndependent { lambda, q } => Prior::CondIndependent {
            lambda: lambda
                .iter()
                .map(|x| x.to_scalar())
                .collect::<Result<_, _>>()?,
            q: q.iter()
                .map(|row| row.iter().map(|x| x.to_scalar()).collect())
                .collect::<Result<_, _>>()?,
        },
    };
    let m_bound = raw.m_bound.to_scalar()?;
    AssignmentProblem::new(
        raw.states.clone(),
        raw.signal_sets.clone(),
        u,
        v,
        externalities,
        prior,
        m_bound,
    )
    .map_err(ScenarioError::from)
}

/// Generates a seeded instance. Tensor entries are dyadic multiples of `M`,
/// identical across numeric backends; the prior is a normalized table of
/// positive integers. Draws that fail validation (coinciding conditionals
/// are the only realistic case) retry with a derived seed.
pub fn generate_problem<S: Scalar>(
    spec: &RawGenerator,
) -> Result<AssignmentProblem<S>, ScenarioError> {
    let m_bound: S = spec.m_bound.to_scalar()?;
    if spec.n == 0 || spec.m == 0 {
        return Err(ScenarioError::Semantic(
            "generator needs n >= 1 and m >= 1".into(),
        ));
    }
    for attempt in 0..50 {
        let rng = Rng::new(spec.seed).fork("generator-attempt", attempt);
        let problem = generate_once::<S>(spec, &m_bound, &rng);
        if validate_problem(&problem).pass() {
            return Ok(problem);
        }
    }
    Err(ScenarioError::Semantic(format!(
        "generator seed {} produced no valid instance in 50 attempts",
        spec.seed
    )))
}

fn generate_once<S: Scalar>(spec: &RawGenerator, m_bound: &S, rng: &Rng) -> AssignmentProblem<S> {
    let n = spec.n;
    let m = spec.m;
    let states = (1..=m).map(|t| format!("s{t}")).collect::<Vec<_>>();
    let signal_sets: Vec<Vec<String>> = spec
        .signal_sizes
        .iter()
        .map(|&size| (1..=size).map(|x| format!("x{x}")).collect())
        .collect();
    let mut draw = |stream: Rng| -> S {
        let mut stream = stream;
        stream.next_unit::<S>() * m_bound.clone()
    };
    let tensor = |label: &str, rng: &Rng, draw: &mut dyn FnMut(Rng) -> S| -> Vec<Vec<Vec<S>>> {
        (0..n)
            .map(|i| {
                (0..n)
                    .map(|j| {
                        (0..m)
                            .map(|t| {
                                draw(
                                    rng.fork(label, i as u64)
                                        .fork("j", j as u64)
                                        .fork("theta", t as u64),
                                )
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect()
    };
    let u = tensor("u", rng, &mut draw);
    let v = tensor("v", rng, &mut draw);
    let mut externalities = Vec::new();
    for i in 0..n {
        for j in 0..n {
            for p in 0..n {
                for q in 0..n {
                    if p == i || q == j {
                        continue;
                    }
                    let mut gate = rng
                        .fork("c-gate", i as u64)
                        .fork("j", j as u64)
                        .fork("p", p as u64)
                        .fork("q", q as u64);
                    if gate.next_f64() >= spec.externality_density {
                        continue;
                    }
                    for t in 0..m {
                        externalities.push(ExternalityEntry {
                            buyer: i,
                            seller: j,
                            other_buyer: p,
                            other_seller: q,
                            state: t,
                            value: draw(
                                rng.fork("c", i as u64)
                                    .fork("j", j as u64)
                                    .fork("p", p as u64)
                                    .fork("q", q as u64)
                                    .fork("theta", t as u64),
                            ),
                        });
                    }
                }
            }
        }
    }
    let profile_count: usize = spec.signal_sizes.iter().product();
    let mut prior_rng = rng.fork("prior", 0);
    let weights: Vec<u64> = (0..profile_count * m)
        .map(|_| 1 + prior_rng.next_below(1 << 20))
        .collect();
    let total: u64 = weights.iter().sum();
    let table: Vec<S> = weights.iter().map(|&w| S::ratio(w as i64, total)).collect();
    AssignmentProblem::new(
        states,
        signal_sets,
        u,
        v,
        externalities,
        Prior::Dense(table),
        m_bound.clone(),
    )
    .expect("generated dimensions are consistent")
}

// --- replica family files ---

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct FamilyFile {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub states: Option<Vec<String>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub x: Option<Vec<String>>,
    pub lambda: Vec<RawNum>,
    /// `q[theta][x]`
    pub q: Vec<Vec<RawNum>>,
    #[serde(rename = "M")]
    pub m_bound: RawNum,
    pub seed: u64,
    #[serde(default)]
    pub externality_density: f64,
    #[serde(default = "default_k")]
    pub k: u32,
}

fn default_k() -> u32 {
    1
}

pub fn parse_family(text: &str) -> Result<FamilyFile, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    let raw: FamilyFile =
        serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(text, e))?;
    Ok(raw)
}

pub fn load_family(path: &Path) -> Result<FamilyFile, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_family(&text)
}

impl FamilyFile {
    pub fn family<S: Scalar>(&self) -> Result<ReplicaFamily<S>, ScenarioError> {
        let m = self.lambda.len();
        let alphabet = self.q.first().map(|row| row.len()).unwrap_or(0);
        let states = self
            .states
            .clone()
            .unwrap_or_else(|| (1..=m).map(|t| format!("s{t}")).collect());
        let x_labels = self
            .x
            .clone()
            .unwrap_or_else(|| (1..=alphabet).map(|x| format!("x{x}")).collect());
        let lambda: Vec<S> = self
            .lambda
            .iter()
            .map(|x| x.to_scalar())
            .collect::<Result<_, _>>()?;
        let q: Vec<Vec<S>> = self
            .q
            .iter()
            .map(|row| row.iter().map(|x| x.to_scalar()).collect())
            .collect::<Result<_, _>>()?;
        ReplicaFamily::new(
            states,
            x_labels,
            lambda,
            q,
            self.m_bound.to_scalar()?,
            self.seed,
            self.externality_density,
        )
        .map_err(ScenarioError::from)
    }
}

// --- strategy files ---

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct StrategiesFile {
    pub strategies: Vec<RawStrategy>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawStrategy {
    #[serde(default = "RawAlpha::truthful")]
    pub alpha: RawAlpha,
    #[serde(default = "RawBeta::truthful")]
    pub beta: RawBeta,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawAlpha {
    Truthful,
    /// Signal label -> reported label; unmapped labels report truthfully.
    Map {
        map: BTreeMap<String, String>,
    },
    Constant {
        report: String,
    },
}

impl RawAlpha {
    fn truthful() -> Self {
        RawAlpha::Truthful
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum RawBeta {
    Truthful,
    Zero,
    Scale {
        valuation_factor: RawNum,
        externality_factor: RawNum,
    },
    PermuteSellers {
        perm: Vec<usize>,
    },
    Table {
        /// `w[theta][j]`
        w: Vec<Vec<RawNum>>,
        #[serde(default)]
        d: Vec<RawExternality>,
    },
}

impl RawBeta {
    fn truthful() -> Self {
        RawBeta::Truthful
    }
}

pub fn parse_strategies(text: &str) -> Result<StrategiesFile, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(text, e))
}

pub fn load_strategies(path: &Path) -> Result<StrategiesFile, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_strategies(&text)
}

impl StrategiesFile {
    pub fn strategies<S: Scalar>(
        &self,
        problem: &AssignmentProblem<S>,
    ) -> Result<Vec<BuyerStrategy<S>>, ScenarioError> {
        if self.strategies.len() != problem.n() {
            return Err(ScenarioError::Semantic(format!(
                "need {} strategies, got {}",
                problem.n(),
                self.strategies.len()
            )));
        }
        self.strategies
            .iter()
            .enumerate()
            .map(|(buyer, raw)| {
                let stage1 = match &raw.alpha {
                    RawAlpha::Truthful => Stage1Rule::Truthful,
                    RawAlpha::Map { map } => {
                        let mut table: Vec<usize> = (0..problem.signal_size(buyer)).collect();
                        for (from, to) in map {
                            let from_idx = problem.signal_index(buyer, from)?;
                            let to_idx = problem.signal_index(buyer, to)?;
                            table[from_idx] = to_idx;
                        }
                        Stage1Rule::Map(table)
                    }
                    RawAlpha::Constant { report } => {
                        let to_idx = problem.signal_index(buyer, report)?;
                        Stage1Rule::Map(vec![to_idx; problem.signal_size(buyer)])
                    }
                };
                let stage2 = match &raw.beta {
                    RawBeta::Truthful => Stage2Rule::Truthful,
                    RawBeta::Zero => Stage2Rule::Zero,
                    RawBeta::Scale {
                        valuation_factor,
                        externality_factor,
                    } => Stage2Rule::Scale {
                        valuation_factor: valuation_factor.to_scalar()?,
                        externality_factor: externality_factor.to_scalar()?,
                    },
                    RawBeta::PermuteSellers { perm } => {
                        let n = problem.n();
                        let mut seen = vec![false; n];
                        if perm.len() != n || perm.iter().any(|&j| j >= n) {
                            return Err(ScenarioError::Semantic(
                                "perm must be a permutation of 0..n".into(),
                            ));
                        }
                        for &j in perm {
                            if seen[j] {
                                return Err(ScenarioError::Semantic(
                                    "perm must be a permutation of 0..n".into(),
                                ));
                            }
                            seen[j] = true;
                        }
                        Stage2Rule::PermuteSellers(perm.clone())
                    }
                    RawBeta::Table { w, d } => {
                        let report = convert_report::<S>(problem, buyer, w, d)?;
                        Stage2Rule::Table(report)
                    }
                };
                Ok(BuyerStrategy { stage1, stage2 })
            })
            .collect()
    }
}

// --- stage-2 report files ---

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ReportsFile {
    pub reports: Vec<RawReport>,
}

#[derive(Debug, Clone, PartialEq, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RawReport {
    /// `w[theta][j]`
    pub w: Vec<Vec<RawNum>>,
    #[serde(default)]
    pub d: Vec<RawExternality>,
}

pub fn parse_reports(text: &str) -> Result<ReportsFile, ScenarioError> {
    let mut de = serde_json::Deserializer::from_str(text);
    serde_path_to_error::deserialize(&mut de).map_err(|e| json_error(text, e))
}

pub fn load_reports(path: &Path) -> Result<ReportsFile, ScenarioError> {
    let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_reports(&text)
}

fn convert_report<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    w: &[Vec<RawNum>],
    d: &[RawExternality],
) -> Result<StageTwoReport<S>, ScenarioError> {
    let n = problem.n();
    let m = problem.state_count();
    if w.len() != m || w.iter().any(|row| row.len() != n) {
        return Err(ScenarioError::Semantic(format!(
            "report w must be {m} rows of {n} valuations"
        )));
    }
    let valuations_by_state: Vec<Vec<S>> = w
        .iter()
        .map(|row| row.iter().map(|x| x.to_scalar()).collect())
        .collect::<Result<_, _>>()?;
    let mut externalities_by_state = vec![ExtTable::zeros(n); m];
    for entry in d {
        if entry.i != buyer {
            return Err(ScenarioError::Semantic(format!(
                "report externality entry for buyer {} inside buyer {}'s report",
                entry.i, buyer
            )));
        }
        if entry.j >= n || entry.p >= n || entry.q >= n || entry.theta >= m {
            return Err(ScenarioError::Semantic(
                "report externality index out of range".into(),
            ));
        }
        if entry.p == buyer || entry.q == entry.j {
            return Err(ScenarioError::Semantic(
                "report externality must have p != i and q != j".into(),
            ));
        }
        externalities_by_state[entry.theta].set(
            entry.j,
            entry.p,
            entry.q,
            entry.value.to_scalar()?,
        );
    }
    Ok(StageTwoReport {
        valuations_by_state,
        externalities_by_state,
    })
}

impl ReportsFile {
    pub fn reports<S: Scalar>(
        &self,
        problem: &AssignmentProblem<S>,
    ) -> Result<Vec<StageTwoReport<S>>, ScenarioError> {
        if self.reports.len() != problem.n() {
            return Err(ScenarioError::Semantic(format!(
                "need {} reports, got {}",
                problem.n(),
                self.reports.len()
            )));
        }
        self.reports
            .iter()
            .enumerate()
            .map(|(buyer, raw)| convert_report(problem, buyer, &raw.w, &raw.d))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use num_rational::BigRational;

    const MINIMAL: &str = r#"{
      "problem": {
        "n": 2,
        "states": ["s1", "s2"],
        "signal_sets": [["x1", "x2"], ["x1", "x2"]],
        "u": [[[5, 5], [2, 2]], [[4, 4], [3, 3]]],
        "v": [[[0, 0], [0, 0]], [[0, 0], [0, 0]]],
        "c": [
          {"i": 0, "j": 0, "p": 1, "q": 1, "theta": 0, "value": 1},
          {"i": 0, "j": 0, "p": 1, "q": 1, "theta": 1, "value": 1}
        ],
        "prior": {
          "type": "dense",
          "table": [[0.32, 0.08, 0.08, 0.02], [0.08, 0.12, 0.12, 0.18]]
        },
        "M": 5
      }
    }"#;

    #[test]
    fn minimal_scenario_parses_and_validates() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        let problem = scenario.problem::<f64>().unwrap();
        assert_eq!(problem.n(), 2);
        assert_eq!(problem.valuation(0, 0, 0), &5.0);
        assert_eq!(problem.externality(0, 0, 1, 1, 0), &1.0);
        // Same instance exactly in rational mode.
        let rational = scenario.problem::<BigRational>().unwrap();
        assert_eq!(rational.valuation(0, 0, 0), &BigRational::from_int(5));
    }

    #[test]
    fn unknown_keys_rejected() {
        let text = MINIMAL.replace("\"n\": 2,", "\"n\": 2, \"bogus\": 1,");
        let err = parse_scenario(&text).unwrap_err();
        assert!(matches!(err, ScenarioError::Schema { .. }), "{err}");
    }

    #[test]
    fn unnormalized_prior_rejected_with_rule_name() {
        let text = MINIMAL.replace("0.18", "0.17");
        let scenario = parse_scenario(&text).unwrap();
        let err = scenario.problem::<f64>().unwrap_err();
        match err {
            ScenarioError::Validation { summary, .. } => {
                assert!(summary.contains("prior-normalized"), "{summary}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn negative_externality_rejected() {
        let text = MINIMAL.replace("\"theta\": 0, \"value\": 1", "\"theta\": 0, \"value\": -1");
        let scenario = parse_scenario(&text).unwrap();
        let err = scenario.problem::<f64>().unwrap_err();
        match err {
            ScenarioError::Validation { summary, .. } => {
                assert!(summary.contains("tensor-nonnegative"), "{summary}");
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn canonical_form_round_trips() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        let canonical = scenario.canonical_json();
        let reparsed = parse_scenario(&canonical).unwrap();
        assert_eq!(scenario.raw(), reparsed.raw());
        // Canonicalizing again is a fixed point.
        assert_eq!(canonical, reparsed.canonical_json());
    }

    #[test]
    fn fraction_literals_parse_exactly() {
        let text = MINIMAL.replace("0.32", "\"8/25\"");
        let scenario = parse_scenario(&text).unwrap();
        let problem = scenario.problem::<BigRational>().unwrap();
        let flat = problem.profile_flat(&[0, 0]).unwrap();
        assert_eq!(problem.joint_prob(0, flat), BigRational::ratio(8, 25));
    }

    #[test]
    fn generator_produces_valid_identical_instances() {
        let text = r#"{
          "generator": {"n": 3, "m": 2, "signal_sizes": [2, 2, 2],
                         "M": 1, "seed": 11, "externality_density": 0.5}
        }"#;
        let scenario = parse_scenario(text).unwrap();
        let float = scenario.problem::<f64>().unwrap();
        let rational = scenario.problem::<BigRational>().unwrap();
        assert!(validate_problem(&float).pass());
        for i in 0..3 {
            for j in 0..3 {
                for t in 0..2 {
                    assert_eq!(
                        *float.valuation(i, j, t),
                        crate::num::Scalar::approx_f64(rational.valuation(i, j, t)),
                    );
                }
            }
        }
    }

    #[test]
    fn both_problem_and_generator_rejected() {
        let text = MINIMAL.replace(
            "\"problem\": {",
            "\"generator\": {\"n\": 2, \"m\": 2, \"signal_sizes\": [2, 2], \"M\": 1, \"seed\": 1, \"externality_density\": 0.0}, \"problem\": {",
        );
        assert!(matches!(
            parse_scenario(&text),
            Err(ScenarioError::Semantic(_))
        ));
    }

    #[test]
    fn parse_error_carries_position() {
        let err = parse_scenario("{ not json").unwrap_err();
        assert!(matches!(err, ScenarioError::Parse { line: 1, .. }));
    }

    #[test]
    fn strategies_file_maps_labels() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        let problem = scenario.problem::<f64>().unwrap();
        let text = r#"{
          "strategies": [
            {"alpha": {"type": "map", "map": {"x1": "x2"}}, "beta": {"type": "zero"}},
            {"alpha": {"type": "truthful"}, "beta": {"type": "truthful"}}
          ]
        }"#;
        let file = parse_strategies(text).unwrap();
        let strategies = file.strategies(&problem).unwrap();
        use crate::game::Strategy;
        assert_eq!(strategies[0].stage1(0), 1);
        assert_eq!(strategies[0].stage1(1), 1);
        assert_eq!(strategies[1].stage1(0), 0);
    }

    #[test]
    fn reports_file_round_trips_truthful() {
        let scenario = parse_scenario(MINIMAL).unwrap();
        let problem = scenario.problem::<f64>().unwrap();
        let text = r#"{
          "reports": [
            {"w": [[5, 2], [5, 2]],
             "d": [{"i": 0, "j": 0, "p": 1, "q": 1, "theta": 0, "value": 1},
                    {"i": 0, "j": 0, "p": 1, "q": 1, "theta": 1, "value": 1}]},
            {"w": [[4, 3], [4, 3]]}
          ]
        }"#;
        let file = parse_reports(text).unwrap();
        let reports = file.reports(&problem).unwrap();
        let truthful = StageTwoReport::truthful(&problem, 0);
        assert_eq!(reports[0].valuations_by_state, truthful.valuations_by_state);
    }

    #[test]
    fn family_file_parses() {
        let text = r#"{
          "lambda": [0.5, 0.5],
          "q": [[0.8, 0.2], [0.4, 0.6]],
          "M": 1,
          "seed": 7,
          "k": 1
        }"#;
        let file = parse_family(text).unwrap();
        let family = file.family::<f64>().unwrap();
        assert_eq!(family.alphabet(), 2);
        let problem = family.build_replica(3).unwrap();
        assert!(validate_problem(&problem).pass());
    }
}
