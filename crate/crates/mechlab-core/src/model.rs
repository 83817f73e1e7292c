//! Problem instances, matchings, and the per-buyer assignment payoff.

use serde::Serialize;
use thiserror::Error;

use crate::num::{l1_distance, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MechError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid index: {0}")]
    InvalidIndex(String),
    #[error("unknown signal label `{label}` for buyer {buyer}")]
    InvalidSignalLabel { buyer: usize, label: String },
    #[error("unknown state label `{0}`")]
    InvalidStateLabel(String),
    #[error("enumeration infeasible for n = {n} (limit {limit})")]
    EnumerationTooLarge { n: usize, limit: usize },
    #[error("posted posterior is not attained by any opponent profile")]
    PosteriorNotAttained,
    #[error("calibration failure: {0}")]
    CalibrationFailure(String),
    #[error("malformed report: {0}")]
    MalformedReport(String),
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
}

/// One sparse externality entry `c[i][j][p][q][theta]`, `p != i`, `q != j`.
#[derive(Debug, Clone)]
pub struct ExternalityEntry<S> {
    pub buyer: usize,
    pub seller: usize,
    pub other_buyer: usize,
    pub other_seller: usize,
    pub state: usize,
    pub value: S,
}

/// Joint prior over states and signal profiles.
///
/// The dense table covers arbitrary correlation; the conditionally
/// independent form stores `(lambda, q)` and evaluates the product-mixture
/// lazily, which keeps large replica instances tractable.
#[derive(Debug, Clone)]
pub enum Prior<S> {
    /// `table[b_flat * m + theta]`, signal profiles in row-major order
    /// (buyer 1's signal most significant).
    Dense(Vec<S>),
    /// `P(theta, b) = lambda(theta) * prod_i q[theta][b_i]`; requires all
    /// signal sets to share one alphabet.
    CondIndependent { lambda: Vec<S>, q: Vec<Vec<S>> },
}

/// A full assignment-problem instance. Immutable after construction; all
/// operations take `&self`, so instances can be shared across workers freely.
#[derive(Debug, Clone)]
pub struct AssignmentProblem<S> {
    n: usize,
    states: Vec<String>,
    signal_sets: Vec<Vec<String>>,
    /// `u[(i*n + j)*m + theta]`
    u: Vec<S>,
    v: Vec<S>,
    /// `c[(((i*n + j)*n + p)*n + q)*m + theta]`, zero whenever `p == i` or `q == j`.
    c: Vec<S>,
    prior: Prior<S>,
    m_bound: S,
    /// Strides for flattening signal profiles, buyer 0 most significant.
    strides: Vec<usize>,
    profile_count: usize,
}

impl<S: Scalar> AssignmentProblem<S> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        states: Vec<String>,
        signal_sets: Vec<Vec<String>>,
        u: Vec<Vec<Vec<S>>>,
        v: Vec<Vec<Vec<S>>>,
        externalities: Vec<ExternalityEntry<S>>,
        prior: Prior<S>,
        m_bound: S,
    ) -> Result<Self, MechError> {
        let n = signal_sets.len();
        let m = states.len();
        if n == 0 || m == 0 {
            return Err(MechError::InvalidProblem(
                "need at least one buyer and one state".into(),
            ));
        }
        if signal_sets.iter().any(|s| s.is_empty()) {
            return Err(MechError::InvalidProblem("empty signal set".into()));
        }
        let check_tensor = |t: &Vec<Vec<Vec<S>>>, name: &str| -> Result<(), MechError> {
            if t.len() != n
                || t.iter()
                    .any(|r| r.len() != n || r.iter().any(|c| c.len() != m))
            {
                return Err(MechError::DimensionMismatch(format!(
                    "{name} must be {n}x{n}x{m}"
                )));
            }
            Ok(())
        };
        check_tensor(&u, "u")?;
        check_tensor(&v, "v")?;
        let flatten =
            |t: Vec<Vec<Vec<S>>>| -> Vec<S> { t.into_iter().flatten().flatten().collect() };
        let mut c = vec![S::zero(); n * n * n * n * m];
        for e in &externalities {
            if e.buyer >= n || e.seller >= n || e.other_buyer >= n || e.other_seller >= n {
                return Err(MechError::InvalidIndex(format!(
                    "externality entry ({}, {}, {}, {})",
                    e.buyer + 1,
                    e.seller + 1,
                    e.other_buyer + 1,
                    e.other_seller + 1
                )));
            }
            if e.state >= m {
                return Err(MechError::InvalidIndex(format!(
                    "externality state {}",
                    e.state + 1
                )));
            }
            if e.other_buyer == e.buyer || e.other_seller == e.seller {
                return Err(MechError::InvalidProblem(format!(
                    "externality entry ({}, {}, {}, {}) must have p != i and q != j",
                    e.buyer + 1,
                    e.seller + 1,
                    e.other_buyer + 1,
                    e.other_seller + 1
                )));
            }
            let idx =
                (((e.buyer * n + e.seller) * n + e.other_buyer) * n + e.other_seller) * m + e.state;
            c[idx] = e.value.clone();
        }
        let mut strides = vec![1usize; n];
        for i in (0..n.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * signal_sets[i + 1].len();
        }
        let profile_count = strides[0] * signal_sets[0].len();
        match &prior {
            Prior::Dense(table) => {
                if table.len() != profile_count * m {
                    return Err(MechError::DimensionMismatch(format!(
                        "dense prior must have {} entries, got {}",
                        profile_count * m,
                        table.len()
                    )));
                }
            }
            Prior::CondIndependent { lambda, q } => {
                if lambda.len() != m || q.len() != m {
                    return Err(MechError::DimensionMismatch(
                        "conditionally independent prior must give lambda and q per state".into(),
                    ));
                }
                let x = signal_sets[0].len();
                if signal_sets.iter().any(|s| s.len() != x) {
                    return Err(MechError::InvalidProblem(
                        "conditionally independent prior requires a common signal alphabet".into(),
                    ));
                }
                if q.iter().any(|row| row.len() != x) {
                    return Err(MechError::DimensionMismatch(
                        "q rows must match the signal alphabet".into(),
                    ));
                }
            }
        }
        Ok(AssignmentProblem {
            n,
            states,
            signal_sets,
            u: flatten(u),
            v: flatten(v),
            c,
            prior,
            m_bound,
            strides,
            profile_count,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn state_count(&self) -> usize {
        self.states.len()
    }

    pub fn states(&self) -> &[String] {
        &self.states
    }

    pub fn signal_sets(&self) -> &[Vec<String>] {
        &self.signal_sets
    }

    pub fn signal_size(&self, buyer: usize) -> usize {
        self.signal_sets[buyer].len()
    }

    pub fn m_bound(&self) -> &S {
        &self.m_bound
    }

    pub fn prior(&self) -> &Prior<S> {
        &self.prior
    }

    pub fn valuation(&self, i: usize, j: usize, theta: usize) -> &S {
        &self.u[(i * self.n + j) * self.states.len() + theta]
    }

    pub fn seller_cost(&self, i: usize, j: usize, theta: usize) -> &S {
        &self.v[(i * self.n + j) * self.states.len() + theta]
    }

    pub fn externality(&self, i: usize, j: usize, p: usize, q: usize, theta: usize) -> &S {
        debug_assert!(p != i && q != j, "externality read on excluded diagonal");
        &self.c[(((i * self.n + j) * self.n + p) * self.n + q) * self.states.len() + theta]
    }

    pub fn state_index(&self, label: &str) -> Result<usize, MechError> {
        self.states
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| MechError::InvalidStateLabel(label.to_string()))
    }

    pub fn signal_index(&self, buyer: usize, label: &str) -> Result<usize, MechError> {
        self.signal_sets[buyer]
            .iter()
            .position(|s| s == label)
            .ok_or_else(|| MechError::InvalidSignalLabel {
                buyer,
                label: label.to_string(),
            })
    }

    // --- signal-profile indexing ---

    pub fn profile_count(&self) -> usize {
        self.profile_count
    }

    pub fn profile_flat(&self, profile: &[usize]) -> Result<usize, MechError> {
        if profile.len() != self.n {
            return Err(MechError::DimensionMismatch(format!(
                "signal profile must have {} entries",
                self.n
            )));
        }
        let mut flat = 0;
        for (i, &b) in profile.iter().enumerate() {
            if b >= self.signal_sets[i].len() {
                return Err(MechError::InvalidIndex(format!(
                    "signal {} for buyer {}",
                    b + 1,
                    i + 1
                )));
            }
            flat += b * self.strides[i];
        }
        Ok(flat)
    }

    pub fn profile_of_flat(&self, mut flat: usize) -> Vec<usize> {
        let mut profile = vec![0; self.n];
        for i in 0..self.n {
            profile[i] = flat / self.strides[i];
            flat %= self.strides[i];
        }
        profile
    }

    /// Number of opponent signal profiles `|B_{-i}|`.
    pub fn opponent_count(&self, buyer: usize) -> usize {
        self.profile_count / self.signal_sets[buyer].len()
    }

    /// Decodes an opponent-profile index into per-opponent signals (buyers in
    /// increasing order, skipping `buyer`).
    pub fn opponent_profile(&self, buyer: usize, mut flat: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.n - 1);
        for i in (0..self.n).rev() {
            if i == buyer {
                continue;
            }
            let size = self.signal_sets[i].len();
            out.push(flat % size);
            flat /= size;
        }
        out.reverse();
        out
    }

    /// Combines buyer `buyer`'s signal with an opponent-profile index into a
    /// full profile flat index.
    pub fn compose_profile(&self, buyer: usize, own: usize, opp_flat: usize) -> usize {
        let opp = self.opponent_profile(buyer, opp_flat);
        let mut flat = own * self.strides[buyer];
        let mut k = 0;
        for i in 0..self.n {
            if i == buyer {
                continue;
            }
            flat += opp[k] * self.strides[i];
            k += 1;
        }
        flat
    }

    /// Joint prior mass `P(theta, b)`.
    pub fn joint_prob(&self, theta: usize, profile_flat: usize) -> S {
        match &self.prior {
            Prior::Dense(table) => table[profile_flat * self.states.len() + theta].clone(),
            Prior::CondIndependent { lambda, q } => {
                let profile = self.profile_of_flat(profile_flat);
                let mut p = lambda[theta].clone();
                for &b in &profile {
                    p = p * q[theta][b].clone();
                }
                p
            }
        }
    }
}

// --- matchings ---

/// A feasible partial matching: each buyer holds at most one seller and each
/// seller serves at most one buyer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Matching {
    seller_of: Vec<Option<usize>>,
}

impl Matching {
    pub fn empty(n: usize) -> Self {
        Matching {
            seller_of: vec![None; n],
        }
    }

    pub fn from_pairs(n: usize, pairs: &[(usize, usize)]) -> Result<Self, MechError> {
        let mut m = Matching::empty(n);
        let mut seller_used = vec![false; n];
        for &(i, j) in pairs {
            if i >= n || j >= n {
                return Err(MechError::InvalidIndex(format!(
                    "pair ({}, {})",
                    i + 1,
                    j + 1
                )));
            }
            if m.seller_of[i].is_some() || seller_used[j] {
                return Err(MechError::InvalidProblem(format!(
                    "pair ({}, {}) violates the matching constraints",
                    i + 1,
                    j + 1
                )));
            }
            m.seller_of[i] = Some(j);
            seller_used[j] = true;
        }
        Ok(m)
    }

    pub fn n(&self) -> usize {
        self.seller_of.len()
    }

    pub fn seller_of(&self, buyer: usize) -> Option<usize> {
        self.seller_of[buyer]
    }

    pub fn is_matched(&self, buyer: usize) -> bool {
        self.seller_of[buyer].is_some()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.seller_of
            .iter()
            .enumerate()
            .filter_map(|(i, j)| j.map(|j| (i, j)))
    }

    pub fn matched_count(&self) -> usize {
        self.seller_of.iter().filter(|j| j.is_some()).count()
    }

    pub(crate) fn set(&mut self, buyer: usize, seller: Option<usize>) {
        self.seller_of[buyer] = seller;
    }

    /// Compares the flattened 0/1 arrays in row-major lexicographic order.
    /// An all-zero row sorts first; within a row, a later 1 sorts earlier.
    pub fn lex_cmp(&self, other: &Matching) -> std::cmp::Ordering {
        debug_assert_eq!(self.n(), other.n());
        let n = self.n();
        let key = |slot: Option<usize>| match slot {
            None => 0,
            Some(j) => n - j,
        };
        for i in 0..n {
            let ord = key(self.seller_of[i]).cmp(&key(other.seller_of[i]));
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        std::cmp::Ordering::Equal
    }
}

// --- per-buyer tensors and the payoff ---

/// Externality table `d[j][p][q]` for one buyer; the owner's own row (`p`
/// equal to the owner) and the matched seller's column (`q == j`) are never
/// read.
#[derive(Debug, Clone)]
pub struct ExtTable<S> {
    n: usize,
    data: Vec<S>,
}

impl<S: Scalar> ExtTable<S> {
    pub fn zeros(n: usize) -> Self {
        ExtTable {
            n,
            data: vec![S::zero(); n * n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn get(&self, j: usize, p: usize, q: usize) -> &S {
        &self.data[(j * self.n + p) * self.n + q]
    }

    pub fn set(&mut self, j: usize, p: usize, q: usize, value: S) {
        self.data[(j * self.n + p) * self.n + q] = value;
    }

    pub fn map(&self, f: impl Fn(&S) -> S) -> Self {
        ExtTable {
            n: self.n,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn entries(&self) -> impl Iterator<Item = &S> {
        self.data.iter()
    }
}

/// The `(w_i, d_i, kappa_i)` triple a single buyer brings to the assignment
/// objective: a valuation vector, an externality table, and seller costs.
#[derive(Debug, Clone)]
pub struct BuyerTensors<S> {
    pub valuations: Vec<S>,
    pub externalities: ExtTable<S>,
    pub seller_costs: Vec<S>,
}

impl<S: Scalar> BuyerTensors<S> {
    pub fn zeros(n: usize) -> Self {
        BuyerTensors {
            valuations: vec![S::zero(); n],
            externalities: ExtTable::zeros(n),
            seller_costs: vec![S::zero(); n],
        }
    }

    pub fn n(&self) -> usize {
        self.valuations.len()
    }
}

/// Per-buyer tensors for the whole market, indexed by buyer.
pub type TensorProfile<S> = Vec<BuyerTensors<S>>;

/// Buyer `buyer`'s payoff under matching `z`:
/// the sum over matched pairs `(buyer, j)` of
/// `w_ij - sum_{p != buyer, q != j, (p,q) matched} d_ij^{pq} - kappa_ij`.
/// An unmatched buyer earns exactly zero.
pub fn payoff_g<S: Scalar>(
    z: &Matching,
    buyer: usize,
    tensors: &BuyerTensors<S>,
) -> Result<S, MechError> {
    let n = z.n();
    if buyer >= n {
        return Err(MechError::InvalidIndex(format!("buyer {}", buyer + 1)));
    }
    if tensors.n() != n || tensors.externalities.n() != n || tensors.seller_costs.len() != n {
        return Err(MechError::DimensionMismatch(format!(
            "buyer tensors must be sized for n = {n}"
        )));
    }
    let Some(j) = z.seller_of(buyer) else {
        return Ok(S::zero());
    };
    let mut value = tensors.valuations[j].clone() - tensors.seller_costs[j].clone();
    for (p, q) in z.pairs() {
        if p == buyer || q == j {
            continue;
        }
        value = value - tensors.externalities.get(j, p, q).clone();
    }
    Ok(value)
}

/// Total objective `sum_i g_i(z)` evaluated canonically (buyers in order).
pub fn total_payoff<S: Scalar>(z: &Matching, tensors: &TensorProfile<S>) -> Result<S, MechError> {
    let mut total = S::zero();
    for (i, t) in tensors.iter().enumerate() {
        total = total + payoff_g(z, i, t)?;
    }
    Ok(total)
}

// --- validation ---

pub const PROBABILITY_TOL: f64 = 1e-12;
pub const DISTINCT_CONDITIONAL_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Serialize)]
pub struct Violation {
    pub rule: String,
    pub location: String,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks the model assumptions: bounded nonnegative tensors, a full-support
/// prior, and pairwise-distinct conditional signal marginals (1-norm distance
/// above [`DISTINCT_CONDITIONAL_TOL`]). Signal sets must have at least two
/// elements, otherwise the distinctness assumption is unsatisfiable.
pub fn validate_problem<S: Scalar>(problem: &AssignmentProblem<S>) -> ValidationReport {
    let mut violations = Vec::new();
    let n = problem.n();
    let m = problem.state_count();
    let m_bound = problem.m_bound();

    if m_bound.is_negative() || m_bound.is_zero() {
        violations.push(Violation {
            rule: "bound-positive".into(),
            location: "M".into(),
            detail: format!("M = {} must be positive", m_bound.approx_f64()),
        });
    }

    for (i, set) in problem.signal_sets().iter().enumerate() {
        if set.len() < 2 {
            violations.push(Violation {
                rule: "signal-set-size".into(),
                location: format!("buyer {}", i + 1),
                detail: "each buyer needs at least two signals".into(),
            });
        }
    }

    let mut check_entry = |name: &str, loc: String, value: &S| {
        if value.approx_f64() < -PROBABILITY_TOL {
            violations.push(Violation {
                rule: "tensor-nonnegative".into(),
                location: format!("{name}{loc}"),
                detail: format!("entry {} is negative", value.approx_f64()),
            });
        } else if value.approx_f64() > m_bound.approx_f64() + PROBABILITY_TOL {
            violations.push(Violation {
                rule: "tensor-bounded".into(),
                location: format!("{name}{loc}"),
                detail: format!(
                    "entry {} exceeds M = {}",
                    value.approx_f64(),
                    m_bound.approx_f64()
                ),
            });
        }
    };
    for i in 0..n {
        for j in 0..n {
            for t in 0..m {
                check_entry(
                    "u",
                    format!("[{}][{}][{}]", i + 1, j + 1, t + 1),
                    problem.valuation(i, j, t),
                );
                check_entry(
                    "v",
                    format!("[{}][{}][{}]", i + 1, j + 1, t + 1),
                    problem.seller_cost(i, j, t),
                );
                for p in 0..n {
                    for q in 0..n {
                        if p == i || q == j {
                            continue;
                        }
                        check_entry(
                            "c",
                            format!("[{}][{}][{}][{}][{}]", i + 1, j + 1, p + 1, q + 1, t + 1),
                            problem.externality(i, j, p, q, t),
                        );
                    }
                }
            }
        }
    }

    match problem.prior() {
        Prior::Dense(table) => {
            let mut total = S::zero();
            for (idx, entry) in table.iter().enumerate() {
                if entry.approx_f64() <= PROBABILITY_TOL {
                    let profile = problem.profile_of_flat(idx / m);
                    violations.push(Violation {
                        rule: "full-support".into(),
                        location: format!(
                            "prior[theta {}][profile {:?}]",
                            idx % m + 1,
                            profile.iter().map(|b| b + 1).collect::<Vec<_>>()
                        ),
                        detail: "full support violated".into(),
                    });
                }
                total = total + entry.clone();
            }
            if (total.approx_f64() - 1.0).abs() > PROBABILITY_TOL {
                violations.push(Violation {
                    rule: "prior-normalized".into(),
                    location: "prior".into(),
                    detail: format!("prior not normalized (sums to {})", total.approx_f64()),
                });
            }
        }
        Prior::CondIndependent { lambda, q } => {
            let mut check_dist = |name: String, dist: &[S]| {
                let mut total = S::zero();
                for (k, entry) in dist.iter().enumerate() {
                    if entry.approx_f64() <= PROBABILITY_TOL {
                        violations.push(Violation {
                            rule: "full-support".into(),
                            location: format!("{name}[{}]", k + 1),
                            detail: "full support violated".into(),
                        });
                    }
                    total = total + entry.clone();
                }
                if (total.approx_f64() - 1.0).abs() > PROBABILITY_TOL {
                    violations.push(Violation {
                        rule: "prior-normalized".into(),
                        location: name.clone(),
                        detail: format!("distribution sums to {}", total.approx_f64()),
                    });
                }
            };
            check_dist("lambda".into(), lambda);
            for (t, row) in q.iter().enumerate() {
                check_dist(format!("q[theta {}]", t + 1), row);
            }
        }
    }

    // Distinct conditional marginals. For the implicit product-form prior the
    // pairwise marginal distinguishes signals whenever the full conditional
    // does, and stays cheap at any n.
    if violations
        .iter()
        .all(|v| v.rule != "full-support" && v.rule != "prior-normalized")
    {
        match problem.prior() {
            Prior::Dense(_) => {
                for i in 0..n {
                    let si = problem.signal_size(i);
                    let marginals: Vec<Vec<S>> = (0..si)
                        .map(|b| crate::prob::signal_marginal(problem, i, b).expect("valid index"))
                        .collect();
                    for a in 0..si {
                        for b in a + 1..si {
                            let dist = l1_distance(&marginals[a], &marginals[b]);
                            if dist.approx_f64() <= DISTINCT_CONDITIONAL_TOL {
                                violations.push(Violation {
                                    rule: "distinct-conditionals".into(),
                                    location: format!(
                                        "buyer {}: signals {} and {}",
                                        i + 1,
                                        a + 1,
                                        b + 1
                                    ),
                                    detail: format!(
                                        "conditionals coincide (1-norm distance {})",
                                        dist.approx_f64()
                                    ),
                                });
                            }
                        }
                    }
                }
            }
            Prior::CondIndependent { lambda, q } => {
                let x = problem.signal_size(0);
                for a in 0..x {
                    for b in a + 1..x {
                        let pa = crate::prob::pairwise_marginal(lambda, q, a);
                        let pb = crate::prob::pairwise_marginal(lambda, q, b);
                        let dist = l1_distance(&pa, &pb);
                        if dist.approx_f64() <= DISTINCT_CONDITIONAL_TOL {
                            violations.push(Violation {
                                rule: "distinct-conditionals".into(),
                                location: format!("signals {} and {}", a + 1, b + 1),
                                detail: format!(
                                    "conditionals coincide (pairwise marginal distance {})",
                                    dist.approx_f64()
                                ),
                            });
                        }
                    }
                }
            }
        }
    }

    ValidationReport { violations }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn simple_tensors(n: usize, w: Vec<f64>, kappa: Vec<f64>) -> BuyerTensors<f64> {
        BuyerTensors {
            valuations: w,
            externalities: ExtTable::zeros(n),
            seller_costs: kappa,
        }
    }

    #[test]
    fn payoff_single_pair() {
        let z = Matching::from_pairs(1, &[(0, 0)]).unwrap();
        let t = simple_tensors(1, vec![5.0], vec![2.0]);
        assert_eq!(payoff_g(&z, 0, &t).unwrap(), 3.0);
    }

    #[test]
    fn payoff_unmatched_is_zero() {
        let z = Matching::from_pairs(2, &[(1, 0)]).unwrap();
        let mut t = simple_tensors(2, vec![9.0, 9.0], vec![1.0, 1.0]);
        t.externalities.set(0, 1, 1, 100.0);
        assert_eq!(payoff_g(&z, 0, &t).unwrap(), 0.0);
    }

    #[test]
    fn payoff_with_externality() {
        // Diagonal matching, buyer 0 suffers d_{0,0}^{1,1} = 1.
        let z = Matching::from_pairs(2, &[(0, 0), (1, 1)]).unwrap();
        let mut t = simple_tensors(2, vec![5.0, 2.0], vec![0.0, 0.0]);
        t.externalities.set(0, 1, 1, 1.0);
        assert_eq!(payoff_g(&z, 0, &t).unwrap(), 4.0);
    }

    #[test]
    fn payoff_dimension_mismatch() {
        let z = Matching::from_pairs(2, &[(0, 0)]).unwrap();
        let t = simple_tensors(1, vec![1.0], vec![0.0]);
        assert!(matches!(
            payoff_g(&z, 0, &t),
            Err(MechError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn matching_rejects_conflicts() {
        assert!(Matching::from_pairs(2, &[(0, 0), (1, 0)]).is_err());
        assert!(Matching::from_pairs(2, &[(0, 0), (0, 1)]).is_err());
    }

    #[test]
    fn lex_order_prefers_zero_rows_then_later_sellers() {
        let empty = Matching::empty(2);
        let late = Matching::from_pairs(2, &[(0, 1)]).unwrap();
        let early = Matching::from_pairs(2, &[(0, 0)]).unwrap();
        assert_eq!(empty.lex_cmp(&late), std::cmp::Ordering::Less);
        assert_eq!(late.lex_cmp(&early), std::cmp::Ordering::Less);
    }

    #[test]
    fn profile_indexing_round_trips() {
        let p = crate::testutil::two_buyer_binary_problem::<f64>();
        for flat in 0..p.profile_count() {
            let profile = p.profile_of_flat(flat);
            assert_eq!(p.profile_flat(&profile).unwrap(), flat);
        }
        // compose(i, own, opp) agrees with direct flattening.
        for buyer in 0..2 {
            for own in 0..2 {
                for opp in 0..p.opponent_count(buyer) {
                    let flat = p.compose_profile(buyer, own, opp);
                    let profile = p.profile_of_flat(flat);
                    assert_eq!(profile[buyer], own);
                }
            }
        }
    }

    #[test]
    fn validation_passes_on_good_instance() {
        let p = crate::testutil::two_buyer_binary_problem::<f64>();
        let report = validate_problem(&p);
        assert!(
            report.pass(),
            "unexpected violations: {:?}",
            report.violations
        );
    }

    #[test]
    fn validation_flags_zero_prior_entry() {
        let mut table = vec![0.125f64; 8];
        table[3] = 0.0;
        table[4] = 0.25;
        let p = crate::testutil::dense_problem_with_prior(table);
        let report = validate_problem(&p);
        assert!(report.violations.iter().any(|v| v.rule == "full-support"));
    }

    #[test]
    fn validation_flags_coinciding_conditionals() {
        // Signals independent of everything: all conditionals equal.
        let table = vec![0.125f64; 8];
        let p = crate::testutil::dense_problem_with_prior(table);
        let report = validate_problem(&p);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "distinct-conditionals"));
    }

    #[test]
    fn validation_flags_single_buyer() {
        let p = crate::testutil::single_buyer_problem();
        let report = validate_problem(&p);
        assert!(report
            .violations
            .iter()
            .any(|v| v.rule == "distinct-conditionals"));
    }

    #[test]
    fn externality_diagonal_rejected() {
        let bad = ExternalityEntry {
            buyer: 0,
            seller: 0,
            other_buyer: 0,
            other_seller: 1,
            state: 0,
            value: 1.0f64,
        };
        let err = AssignmentProblem::new(
            vec!["s1".into(), "s2".into()],
            vec![
                vec!["x1".into(), "x2".into()],
                vec!["x1".into(), "x2".into()],
            ],
            vec![vec![vec![0.0; 2]; 2]; 2],
            vec![vec![vec![0.0; 2]; 2]; 2],
            vec![bad],
            Prior::Dense(vec![0.125; 8]),
            1.0,
        );
        assert!(err.is_err());
    }
}
