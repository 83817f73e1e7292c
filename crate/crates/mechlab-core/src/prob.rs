//! Posteriors, conditional signal marginals, expected tensors, posterior
//! partitions, and second-stage beliefs.

use crate::model::{
    AssignmentProblem, BuyerTensors, ExtTable, MechError, TensorProfile, PROBABILITY_TOL,
};
use crate::num::{l1_distance, sum, Scalar};

/// Probability vector over the state space.
#[derive(Debug, Clone, PartialEq)]
pub struct StateDistribution<S> {
    probs: Vec<S>,
}

impl<S: Scalar> StateDistribution<S> {
    pub fn new(probs: Vec<S>) -> Result<Self, MechError> {
        if probs.iter().any(|p| p.approx_f64() < -PROBABILITY_TOL) {
            return Err(MechError::InvalidProblem(
                "state distribution has a negative entry".into(),
            ));
        }
        let total = sum(&probs);
        if (total.approx_f64() - 1.0).abs() > PROBABILITY_TOL {
            return Err(MechError::InvalidProblem(format!(
                "state distribution sums to {}",
                total.approx_f64()
            )));
        }
        Ok(StateDistribution { probs })
    }

    pub fn point_mass(m: usize, state: usize) -> Self {
        let mut probs = vec![S::zero(); m];
        probs[state] = S::one();
        StateDistribution { probs }
    }

    pub(crate) fn from_normalized(probs: Vec<S>) -> Self {
        StateDistribution { probs }
    }

    pub fn probs(&self) -> &[S] {
        &self.probs
    }

    pub fn get(&self, theta: usize) -> &S {
        &self.probs[theta]
    }

    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }

    pub fn l1_distance(&self, other: &Self) -> S {
        l1_distance(&self.probs, &other.probs)
    }
}

/// Posterior over states given a full signal profile (flat index).
/// Well-defined for full-support priors.
pub fn posterior_flat<S: Scalar>(
    problem: &AssignmentProblem<S>,
    profile_flat: usize,
) -> StateDistribution<S> {
    let m = problem.state_count();
    let mut probs: Vec<S> = (0..m)
        .map(|t| problem.joint_prob(t, profile_flat))
        .collect();
    let total = sum(&probs);
    debug_assert!(!total.is_zero(), "full-support prior required");
    for p in probs.iter_mut() {
        *p = p.clone() / total.clone();
    }
    StateDistribution::from_normalized(probs)
}

/// Posterior over states given a signal profile.
pub fn posterior<S: Scalar>(
    problem: &AssignmentProblem<S>,
    profile: &[usize],
) -> Result<StateDistribution<S>, MechError> {
    let flat = problem.profile_flat(profile)?;
    Ok(posterior_flat(problem, flat))
}

/// Conditional distribution of opponents' signals given buyer `i` observed
/// `b_i`, indexed by opponent-profile flat index.
pub fn signal_marginal<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    signal: usize,
) -> Result<Vec<S>, MechError> {
    if buyer >= problem.n() || signal >= problem.signal_size(buyer) {
        return Err(MechError::InvalidIndex(format!(
            "buyer {} signal {}",
            buyer + 1,
            signal + 1
        )));
    }
    let m = problem.state_count();
    let opp_count = problem.opponent_count(buyer);
    let mut joint = Vec::with_capacity(opp_count);
    for opp in 0..opp_count {
        let flat = problem.compose_profile(buyer, signal, opp);
        let mut mass = S::zero();
        for t in 0..m {
            mass = mass + problem.joint_prob(t, flat);
        }
        joint.push(mass);
    }
    let total = sum(&joint);
    debug_assert!(!total.is_zero(), "full-support prior required");
    for p in joint.iter_mut() {
        *p = p.clone() / total.clone();
    }
    Ok(joint)
}

/// `P(b_i)` for buyer `i`.
pub fn own_signal_prob<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    signal: usize,
) -> S {
    let m = problem.state_count();
    let mut mass = S::zero();
    for opp in 0..problem.opponent_count(buyer) {
        let flat = problem.compose_profile(buyer, signal, opp);
        for t in 0..m {
            mass = mass + problem.joint_prob(t, flat);
        }
    }
    mass
}

/// Pairwise signal marginal `P_hat(. | x)` of a conditionally independent
/// prior: the distribution of one opponent's signal given own signal `x`.
pub fn pairwise_marginal<S: Scalar>(lambda: &[S], q: &[Vec<S>], x: usize) -> Vec<S> {
    let alphabet = q[0].len();
    let mut out = vec![S::zero(); alphabet];
    let mut norm = S::zero();
    for (t, lam) in lambda.iter().enumerate() {
        let w = lam.clone() * q[t][x].clone();
        norm = norm + w.clone();
        for (y, slot) in out.iter_mut().enumerate() {
            *slot = slot.clone() + w.clone() * q[t][y].clone();
        }
    }
    for slot in out.iter_mut() {
        *slot = slot.clone() / norm.clone();
    }
    out
}

/// Expected tensors under a posterior: `w_i(pi) = sum_theta u_i(theta) pi(theta)`
/// and analogously for externalities and seller costs.
pub fn expect_tensors<S: Scalar>(
    problem: &AssignmentProblem<S>,
    pi: &StateDistribution<S>,
) -> TensorProfile<S> {
    let n = problem.n();
    let m = problem.state_count();
    debug_assert_eq!(pi.len(), m);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let mut tensors = BuyerTensors::zeros(n);
        for j in 0..n {
            let mut w = S::zero();
            let mut kappa = S::zero();
            for t in 0..m {
                w = w + problem.valuation(i, j, t).clone() * pi.get(t).clone();
                kappa = kappa + problem.seller_cost(i, j, t).clone() * pi.get(t).clone();
            }
            tensors.valuations[j] = w;
            tensors.seller_costs[j] = kappa;
            for p in 0..n {
                for q in 0..n {
                    if p == i || q == j {
                        continue;
                    }
                    let mut d = S::zero();
                    for t in 0..m {
                        d = d + problem.externality(i, j, p, q, t).clone() * pi.get(t).clone();
                    }
                    tensors.externalities.set(j, p, q, d);
                }
            }
        }
        out.push(tensors);
    }
    out
}

/// Expectation of an arbitrary per-state externality table.
pub fn expect_ext_table<S: Scalar>(
    tables: &[ExtTable<S>],
    pi: &StateDistribution<S>,
) -> ExtTable<S> {
    let n = tables[0].n();
    let mut out = ExtTable::zeros(n);
    for j in 0..n {
        for p in 0..n {
            for q in 0..n {
                let mut acc = S::zero();
                for (t, table) in tables.iter().enumerate() {
                    acc = acc + table.get(j, p, q).clone() * pi.get(t).clone();
                }
                out.set(j, p, q, acc);
            }
        }
    }
    out
}

// --- posterior partitions ---

/// Equality tolerance for grouping posteriors: exact in rational mode,
/// 1e-12 in 1-norm for floats.
fn grouping_tol<S: Scalar>() -> f64 {
    if S::EXACT {
        0.0
    } else {
        1e-12
    }
}

#[derive(Debug, Clone)]
pub struct PartitionClass<S> {
    pub representative: StateDistribution<S>,
    /// Opponent-profile flat indices, ascending.
    pub members: Vec<usize>,
}

/// The partition of opponent profiles by the posterior they induce together
/// with the conditioning report.
#[derive(Debug, Clone)]
pub struct PosteriorPartition<S> {
    pub owner: usize,
    pub signal: usize,
    pub classes: Vec<PartitionClass<S>>,
}

impl<S: Scalar> PosteriorPartition<S> {
    /// Index of the class containing the given opponent profile.
    pub fn class_of_member(&self, opp_flat: usize) -> Option<usize> {
        self.classes
            .iter()
            .position(|c| c.members.binary_search(&opp_flat).is_ok())
    }

    /// Index of the class whose representative matches `pi`.
    pub fn class_of_distribution(&self, pi: &StateDistribution<S>) -> Option<usize> {
        let tol = grouping_tol::<S>();
        self.classes
            .iter()
            .position(|c| c.representative.l1_distance(pi).approx_f64() <= tol)
    }
}

/// Groups opponent profiles by the posterior induced together with report
/// `r_i`. Profiles are sorted by canonicalized posterior vector and grouped
/// within tolerance; classes are then ordered by their smallest member, with
/// that member's posterior as representative.
pub fn posterior_partition<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    report: usize,
) -> PosteriorPartition<S> {
    let opp_count = problem.opponent_count(buyer);
    let posteriors: Vec<StateDistribution<S>> = (0..opp_count)
        .map(|opp| posterior_flat(problem, problem.compose_profile(buyer, report, opp)))
        .collect();
    let mut order: Vec<usize> = (0..opp_count).collect();
    order.sort_by(|&a, &b| {
        for (x, y) in posteriors[a].probs().iter().zip(posteriors[b].probs()) {
            let ord = x.total_cmp(y);
            if ord != std::cmp::Ordering::Equal {
                return ord;
            }
        }
        a.cmp(&b)
    });
    let tol = grouping_tol::<S>();
    let mut classes: Vec<PartitionClass<S>> = Vec::new();
    for idx in order {
        match classes.last_mut() {
            Some(class)
                if class
                    .representative
                    .l1_distance(&posteriors[idx])
                    .approx_f64()
                    <= tol =>
            {
                class.members.push(idx);
            }
            _ => classes.push(PartitionClass {
                representative: posteriors[idx].clone(),
                members: vec![idx],
            }),
        }
    }
    for class in classes.iter_mut() {
        class.members.sort_unstable();
        class.representative = posteriors[class.members[0]].clone();
    }
    classes.sort_by_key(|c| c.members[0]);
    PosteriorPartition {
        owner: buyer,
        signal: report,
        classes,
    }
}

/// All partitions of one problem, computed once up front. Read-only afterwards,
/// so it can be shared across verification workers.
#[derive(Debug, Clone)]
pub struct PartitionSet<S> {
    per_buyer: Vec<Vec<PosteriorPartition<S>>>,
}

impl<S: Scalar> PartitionSet<S> {
    pub fn build(problem: &AssignmentProblem<S>) -> Self {
        let per_buyer = (0..problem.n())
            .map(|i| {
                (0..problem.signal_size(i))
                    .map(|r| posterior_partition(problem, i, r))
                    .collect()
            })
            .collect();
        PartitionSet { per_buyer }
    }

    pub fn get(&self, buyer: usize, report: usize) -> &PosteriorPartition<S> {
        &self.per_buyer[buyer][report]
    }
}

// --- beliefs ---

/// Belief table over `(theta, b_{-i})` at one second-stage information set.
#[derive(Debug, Clone)]
pub struct BeliefTable<S> {
    m: usize,
    /// `entries[opp_flat * m + theta]`, zero off the support.
    entries: Vec<S>,
    /// Opponent profiles carrying positive mass, ascending.
    pub support: Vec<usize>,
}

impl<S: Scalar> BeliefTable<S> {
    pub fn get(&self, theta: usize, opp_flat: usize) -> &S {
        &self.entries[opp_flat * self.m + theta]
    }

    /// Marginal probability of one opponent profile.
    pub fn opponent_mass(&self, opp_flat: usize) -> S {
        let mut acc = S::zero();
        for t in 0..self.m {
            acc = acc + self.get(t, opp_flat).clone();
        }
        acc
    }

    pub fn total_mass(&self) -> S {
        sum(&self.entries)
    }

    /// Posterior over states conditional on one supported opponent profile.
    pub fn state_conditional(&self, opp_flat: usize) -> StateDistribution<S> {
        let mass = self.opponent_mass(opp_flat);
        let probs = (0..self.m)
            .map(|t| self.get(t, opp_flat).clone() / mass.clone())
            .collect();
        StateDistribution::from_normalized(probs)
    }
}

/// Updated beliefs at information set `(r_i, pi, b_i)`: Bayes over the event
/// that the posted posterior equals `pi`, i.e.
/// `mu(theta, b_{-i}) = P(theta | b_{-i}, b_i) P(b_{-i} | b_i) / Z` on the
/// event and zero elsewhere.
pub fn equilibrium_beliefs<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    report: usize,
    pi: &StateDistribution<S>,
    observed: usize,
) -> Result<BeliefTable<S>, MechError> {
    let partition = posterior_partition(problem, buyer, report);
    equilibrium_beliefs_in(problem, &partition, pi, observed)
}

/// Same as [`equilibrium_beliefs`] with a precomputed partition.
pub fn equilibrium_beliefs_in<S: Scalar>(
    problem: &AssignmentProblem<S>,
    partition: &PosteriorPartition<S>,
    pi: &StateDistribution<S>,
    observed: usize,
) -> Result<BeliefTable<S>, MechError> {
    let class_idx = partition
        .class_of_distribution(pi)
        .ok_or(MechError::PosteriorNotAttained)?;
    Ok(class_beliefs(problem, partition, class_idx, observed))
}

/// Beliefs at the information set `(r_i, class representative, b_i)`.
pub fn class_beliefs<S: Scalar>(
    problem: &AssignmentProblem<S>,
    partition: &PosteriorPartition<S>,
    class_idx: usize,
    observed: usize,
) -> BeliefTable<S> {
    let buyer = partition.owner;
    let m = problem.state_count();
    let class = &partition.classes[class_idx];
    let marginal = signal_marginal(problem, buyer, observed).expect("validated indices");
    let mut mass_on_event = S::zero();
    for &opp in &class.members {
        mass_on_event = mass_on_event + marginal[opp].clone();
    }
    debug_assert!(
        !mass_on_event.is_zero(),
        "full support keeps every class reachable"
    );
    let mut entries = vec![S::zero(); problem.opponent_count(buyer) * m];
    for &opp in &class.members {
        let flat = problem.compose_profile(buyer, observed, opp);
        let state_post = posterior_flat(problem, flat);
        let weight = marginal[opp].clone() / mass_on_event.clone();
        for t in 0..m {
            entries[opp * m + t] = state_post.get(t).clone() * weight.clone();
        }
    }
    BeliefTable {
        m,
        entries,
        support: class.members.clone(),
    }
}

/// Beliefs at every second-stage information set of one buyer, indexed by
/// `(report, class, observed signal)`.
#[derive(Debug)]
pub struct BeliefSystem<S> {
    pub owner: usize,
    /// `tables[report][class][observed]`
    pub tables: Vec<Vec<Vec<BeliefTable<S>>>>,
}

impl<S: Scalar> BeliefSystem<S> {
    pub fn build(problem: &AssignmentProblem<S>, buyer: usize) -> Self {
        let signal_count = problem.signal_size(buyer);
        let mut tables = Vec::with_capacity(signal_count);
        for report in 0..signal_count {
            let partition = posterior_partition(problem, buyer, report);
            let mut per_class = Vec::with_capacity(partition.classes.len());
            for class_idx in 0..partition.classes.len() {
                let per_observed = (0..signal_count)
                    .map(|observed| class_beliefs(problem, &partition, class_idx, observed))
                    .collect();
                per_class.push(per_observed);
            }
            tables.push(per_class);
        }
        BeliefSystem {
            owner: buyer,
            tables,
        }
    }
}
