//! Stage-1 rewards built from spherical scoring rules, the incentive gap
//! they generate against signal misreports, the Lipschitz deviation bound,
//! and calibration of the reward scale.

use crate::model::{AssignmentProblem, MechError};
use crate::num::{l1_distance, l2_norm, max_scalar, Scalar};
use crate::prob::{pairwise_marginal, posterior_flat, signal_marginal};
use crate::replica::ReplicaFamily;

/// Default floor for the calibrated scale on degenerate families where no
/// deviation moves any posterior.
pub const DELTA_FLOOR_NUM: i64 = 1;
pub const DELTA_FLOOR_DEN: u64 = 1_000_000;

#[derive(Debug, Clone)]
pub enum RewardKind<S> {
    /// `xi_i(b) = delta * P_{-i}(b_{-i} | b_i) / ||P_{-i}(. | b_i)||_2`
    SphericalDelta { delta: S },
    /// `xi_i(b) = n^{-(k+2)} * P_hat(b_{succ(i)} | b_i) / ||P_hat(. | b_i)||_2`
    /// where `succ` cycles through the buyers.
    NeighborSpherical { k: u32 },
}

/// A reward system with its full table `xi_i(b)` materialized.
#[derive(Debug, Clone)]
pub struct RewardSystem<S> {
    pub kind: RewardKind<S>,
    /// `table[i][b_flat]`
    table: Vec<Vec<S>>,
}

impl<S: Scalar> RewardSystem<S> {
    /// Spherical rewards at scale `delta` for an arbitrary problem.
    pub fn spherical(problem: &AssignmentProblem<S>, delta: S) -> Self {
        let n = problem.n();
        let mut table = vec![vec![S::zero(); problem.profile_count()]; n];
        for i in 0..n {
            for b_i in 0..problem.signal_size(i) {
                let marginal = signal_marginal(problem, i, b_i).expect("valid index");
                let norm = l2_norm(&marginal);
                for (opp, mass) in marginal.iter().enumerate() {
                    let flat = problem.compose_profile(i, b_i, opp);
                    table[i][flat] = delta.clone() * mass.clone() / norm.clone();
                }
            }
        }
        RewardSystem {
            kind: RewardKind::SphericalDelta { delta },
            table,
        }
    }

    /// Neighbor-based spherical rewards for a replica instance: buyer `i` is
    /// scored on buyer `i+1`'s signal (buyer `n` on buyer 1's), scaled by
    /// `n^{-(k+2)}`.
    pub fn neighbor_spherical(
        family: &ReplicaFamily<S>,
        problem: &AssignmentProblem<S>,
        k: u32,
    ) -> Self {
        let n = problem.n();
        let scale = family.reward_scale(n, k);
        let per_signal = family.neighbor_scores();
        let mut table = vec![vec![S::zero(); problem.profile_count()]; n];
        for (flat, row) in (0..problem.profile_count()).map(|f| (f, problem.profile_of_flat(f))) {
            for i in 0..n {
                let succ = (i + 1) % n;
                table[i][flat] = scale.clone() * per_signal[row[i]][row[succ]].clone();
            }
        }
        RewardSystem {
            kind: RewardKind::NeighborSpherical { k },
            table,
        }
    }

    /// Zero rewards; useful for demonstrating stage-1 honesty failures.
    pub fn zero(problem: &AssignmentProblem<S>) -> Self {
        RewardSystem {
            kind: RewardKind::SphericalDelta { delta: S::zero() },
            table: vec![vec![S::zero(); problem.profile_count()]; problem.n()],
        }
    }

    pub fn reward(&self, buyer: usize, profile_flat: usize) -> &S {
        &self.table[buyer][profile_flat]
    }

    pub fn rewards_at(&self, profile_flat: usize) -> Vec<S> {
        self.table
            .iter()
            .map(|row| row[profile_flat].clone())
            .collect()
    }
}

/// The spherical reward paid to buyer `i` at reported profile `b`.
pub fn spherical_reward<S: Scalar>(
    problem: &AssignmentProblem<S>,
    delta: &S,
    buyer: usize,
    profile: &[usize],
) -> Result<S, MechError> {
    let flat = problem.profile_flat(profile)?;
    let own = profile[buyer];
    let marginal = signal_marginal(problem, buyer, own)?;
    let norm = l2_norm(&marginal);
    // Recover the opponent index by matching the composed profile.
    let opp = (0..problem.opponent_count(buyer))
        .find(|&o| problem.compose_profile(buyer, own, o) == flat)
        .expect("profile decomposes");
    Ok(delta.clone() * marginal[opp].clone() / norm.clone())
}

/// Expected reward advantage of reporting the observed signal `b_i` over
/// `r_i`, at unit scale:
/// `sum_{b_{-i}} [xi(b_{-i}, b_i) - xi(b_{-i}, r_i)] P_{-i}(b_{-i} | b_i)`.
/// Strictly positive for `r_i != b_i` whenever the conditional signal
/// marginals are distinct, and exactly zero for `r_i = b_i`.
pub fn incentive_gap<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    observed: usize,
    report: usize,
) -> Result<S, MechError> {
    if observed == report {
        return Ok(S::zero());
    }
    let truthful = signal_marginal(problem, buyer, observed)?;
    let lied = signal_marginal(problem, buyer, report)?;
    let norm_truth = l2_norm(&truthful);
    let norm_lie = l2_norm(&lied);
    let mut gap = S::zero();
    for (opp, mass) in truthful.iter().enumerate() {
        let score_truth = truthful[opp].clone() / norm_truth.clone();
        let score_lie = lied[opp].clone() / norm_lie.clone();
        gap = gap + (score_truth - score_lie) * mass.clone();
    }
    Ok(gap)
}

/// The proof's Lipschitz bound on what a coordinated stage-1 deviation can
/// gain in stage 2:
/// `(2+n)(2n+1) M sum_{b_{-i}} ||rho(b_{-i}, b_i) - rho(b_{-i}, r_i)||_1 P_{-i}(b_{-i} | b_i)`.
pub fn deviation_bound<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    observed: usize,
    report: usize,
) -> Result<S, MechError> {
    let n = problem.n() as i64;
    let truthful = signal_marginal(problem, buyer, observed)?;
    let mut weighted_distance = S::zero();
    for (opp, mass) in truthful.iter().enumerate() {
        let post_truth = posterior_flat(problem, problem.compose_profile(buyer, observed, opp));
        let post_lie = posterior_flat(problem, problem.compose_profile(buyer, report, opp));
        let dist = l1_distance(post_truth.probs(), post_lie.probs());
        weighted_distance = weighted_distance + dist * mass.clone();
    }
    let constant = S::from_int((2 + n) * (2 * n + 1)) * problem.m_bound().clone();
    Ok(constant * weighted_distance)
}

/// Result of calibrating the reward scale.
#[derive(Debug, Clone)]
pub struct Calibration<S> {
    pub delta: S,
    /// `(buyer, observed, report)` achieving the binding ratio, if any
    /// deviation bound was positive.
    pub binding: Option<(usize, usize, usize)>,
    pub gap_at_binding: S,
    pub bound_at_binding: S,
}

/// Chooses `delta` so that `delta * gap > bound` strictly for every signal
/// misreport, inflating the minimal certified scale by `margin`. Returns the
/// floor scale when no deviation moves any posterior. Fails when some gap is
/// nonpositive (the distinct-conditionals assumption is violated).
pub fn calibrate_delta<S: Scalar>(
    problem: &AssignmentProblem<S>,
    margin: &S,
) -> Result<Calibration<S>, MechError> {
    let mut best_ratio: Option<S> = None;
    let mut binding = None;
    let mut gap_at_binding = S::zero();
    let mut bound_at_binding = S::zero();
    for i in 0..problem.n() {
        for b_i in 0..problem.signal_size(i) {
            for r_i in 0..problem.signal_size(i) {
                if r_i == b_i {
                    continue;
                }
                let gap = incentive_gap(problem, i, b_i, r_i)?;
                let bound = deviation_bound(problem, i, b_i, r_i)?;
                if gap.is_zero() || gap.is_negative() {
                    return Err(MechError::CalibrationFailure(format!(
                        "incentive gap for buyer {} reporting {} instead of {} is {}",
                        i + 1,
                        r_i + 1,
                        b_i + 1,
                        gap.approx_f64()
                    )));
                }
                if bound.is_zero() {
                    continue;
                }
                let ratio = bound.clone() / gap.clone();
                let replace = match &best_ratio {
                    None => true,
                    Some(best) => ratio.total_cmp(best) == std::cmp::Ordering::Greater,
                };
                if replace {
                    best_ratio = Some(ratio);
                    binding = Some((i, b_i, r_i));
                    gap_at_binding = gap;
                    bound_at_binding = bound;
                }
            }
        }
    }
    let delta = match &best_ratio {
        Some(ratio) => (S::one() + margin.clone()) * ratio.clone(),
        None => S::ratio(DELTA_FLOOR_NUM, DELTA_FLOOR_DEN),
    };
    Ok(Calibration {
        delta,
        binding,
        gap_at_binding,
        bound_at_binding,
    })
}

/// Family-level gap lower-bound constant `|X|^{-5/2} / (4 (|X| - 1))` for the
/// pairwise spherical score in the replica setting.
pub fn pairwise_gap_constant(alphabet: usize) -> f64 {
    (alphabet as f64).powf(-2.5) / (4.0 * (alphabet as f64 - 1.0))
}

/// Pairwise spherical score gap
/// `sum_x [Phat(x|b)/||Phat(.|b)|| - Phat(x|r)/||Phat(.|r)||] Phat(x|b)`
/// for a conditionally independent family.
pub fn pairwise_gap<S: Scalar>(lambda: &[S], q: &[Vec<S>], observed: usize, report: usize) -> S {
    let truthful = pairwise_marginal(lambda, q, observed);
    let lied = pairwise_marginal(lambda, q, report);
    let norm_truth = l2_norm(&truthful);
    let norm_lie = l2_norm(&lied);
    let mut gap = S::zero();
    for (x, mass) in truthful.iter().enumerate() {
        gap = gap
            + (truthful[x].clone() / norm_truth.clone() - lied[x].clone() / norm_lie.clone())
                * mass.clone();
    }
    gap
}

/// `max(value, floor)` helper used by callers that clamp reported scales.
pub fn clamp_at_least<S: Scalar>(value: S, floor: S) -> S {
    max_scalar(value, floor)
}
