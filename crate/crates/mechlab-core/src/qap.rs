//! Exact solver for the quadratic assignment objective
//! `max_{z in Z} sum_i g_i(z; w_i, d_i, kappa_i)`, plus the restricted variant
//! leaving one buyer unmatched and a lexicographic brute-force enumerator.

use crate::model::{payoff_g, Matching, MechError, TensorProfile};
use crate::num::{max_scalar, Scalar};

/// Largest `n` for which full enumeration of `Z` is allowed
/// (`sum_k k! C(n,k)^2` stays below ~1.5M).
pub const ENUMERATION_LIMIT: usize = 8;

/// A certified maximizer of the assignment objective.
#[derive(Debug, Clone)]
pub struct QapSolution<S> {
    pub matching: Matching,
    pub value: S,
    pub per_buyer: Vec<S>,
}

/// Lazily yields every feasible matching exactly once, in ascending
/// lexicographic order of the flattened 0/1 array.
pub struct MatchingEnumerator {
    n: usize,
    excluded: Option<usize>,
    /// Option cursor per level: 0 = unmatched, k >= 1 = seller `n - k`.
    cursor: Vec<usize>,
    z: Matching,
    used: Vec<bool>,
    primed: bool,
    done: bool,
}

impl MatchingEnumerator {
    fn new(n: usize, excluded: Option<usize>) -> Self {
        MatchingEnumerator {
            n,
            excluded,
            cursor: vec![0; n],
            z: Matching::empty(n),
            used: vec![false; n],
            primed: false,
            done: n == 0,
        }
    }

    fn apply(&mut self, level: usize, opt: usize) {
        if opt == 0 {
            self.z.set(level, None);
        } else {
            let j = self.n - opt;
            self.z.set(level, Some(j));
            self.used[j] = true;
        }
        self.cursor[level] = opt;
    }

    fn undo(&mut self, level: usize) {
        if let Some(j) = self.z.seller_of(level) {
            self.used[j] = false;
            self.z.set(level, None);
        }
    }

    fn first_valid(&self, level: usize, from: usize) -> Option<usize> {
        if from == 0 {
            return Some(0);
        }
        if self.excluded == Some(level) {
            return None;
        }
        (from..=self.n).find(|&opt| !self.used[self.n - opt])
    }
}

impl Iterator for MatchingEnumerator {
    type Item = Matching;

    fn next(&mut self) -> Option<Matching> {
        if self.done {
            return None;
        }
        if !self.primed {
            for level in 0..self.n {
                self.apply(level, 0);
            }
            self.primed = true;
            return Some(self.z.clone());
        }
        let mut level = self.n;
        loop {
            if level == 0 {
                self.done = true;
                return None;
            }
            level -= 1;
            self.undo(level);
            if let Some(opt) = self.first_valid(level, self.cursor[level] + 1) {
                self.apply(level, opt);
                for l in level + 1..self.n {
                    self.apply(l, 0);
                }
                return Some(self.z.clone());
            }
        }
    }
}

/// All feasible matchings of `n` buyers and sellers, lexicographic order.
pub fn enumerate_matchings(n: usize) -> Result<MatchingEnumerator, MechError> {
    if n > ENUMERATION_LIMIT {
        return Err(MechError::EnumerationTooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(MatchingEnumerator::new(n, None))
}

/// Matchings leaving `excluded` unmatched, lexicographic order.
pub fn enumerate_matchings_excluding(
    n: usize,
    excluded: usize,
) -> Result<MatchingEnumerator, MechError> {
    if n > ENUMERATION_LIMIT {
        return Err(MechError::EnumerationTooLarge {
            n,
            limit: ENUMERATION_LIMIT,
        });
    }
    if excluded >= n {
        return Err(MechError::InvalidIndex(format!("buyer {}", excluded + 1)));
    }
    Ok(MatchingEnumerator::new(n, Some(excluded)))
}

struct Search<'a, S> {
    tensors: &'a TensorProfile<S>,
    n: usize,
    excluded: Option<usize>,
    /// `suffix[i]`: admissible bound on what buyers `i..n` can still add.
    /// Externalities only subtract, so `max_j (w_ij - kappa_ij)^+` per buyer
    /// is safe to use.
    suffix: Vec<S>,
    slack: S,
    z: Matching,
    used: Vec<bool>,
    best_value: Option<S>,
    best: Option<Matching>,
}

impl<'a, S: Scalar> Search<'a, S> {
    fn run(tensors: &'a TensorProfile<S>, excluded: Option<usize>) -> (Matching, S) {
        let n = tensors.len();
        let mut suffix = vec![S::zero(); n + 1];
        for i in (0..n).rev() {
            let mut ub = S::zero();
            if excluded != Some(i) {
                for j in 0..n {
                    let gain =
                        tensors[i].valuations[j].clone() - tensors[i].seller_costs[j].clone();
                    ub = max_scalar(ub, max_scalar(gain, S::zero()));
                }
            }
            suffix[i] = suffix[i + 1].clone() + ub;
        }
        let slack = if S::EXACT {
            S::zero()
        } else {
            S::ratio(1, 1_000_000_000)
        };
        let mut search = Search {
            tensors,
            n,
            excluded,
            suffix,
            slack,
            z: Matching::empty(n),
            used: vec![false; n],
            best_value: None,
            best: None,
        };
        search.descend(0, S::zero());
        (
            search
                .best
                .expect("search visits at least the empty matching"),
            search.best_value.expect("value recorded with matching"),
        )
    }

    fn descend(&mut self, level: usize, current: S) {
        if level == self.n {
            let better = match &self.best_value {
                None => true,
                Some(best) => match current.total_cmp(best) {
                    std::cmp::Ordering::Greater => true,
                    std::cmp::Ordering::Equal => {
                        let incumbent = self.best.as_ref().expect("value implies matching");
                        self.z.lex_cmp(incumbent) == std::cmp::Ordering::Less
                    }
                    std::cmp::Ordering::Less => false,
                },
            };
            if better {
                self.best_value = Some(current);
                self.best = Some(self.z.clone());
            }
            return;
        }
        if let Some(best) = &self.best_value {
            let bound = current.clone() + self.suffix[level].clone();
            if bound < best.clone() - self.slack.clone() {
                return;
            }
        }
        // Unmatched branch first, then sellers from last to first: completes
        // in ascending lexicographic order of the flattened array.
        self.descend(level + 1, current.clone());
        if self.excluded == Some(level) {
            return;
        }
        for j in (0..self.n).rev() {
            if self.used[j] {
                continue;
            }
            let mut delta = self.tensors[level].valuations[j].clone()
                - self.tensors[level].seller_costs[j].clone();
            for (p, q) in self.z.pairs() {
                // Feasibility guarantees p != level and q != j here.
                delta = delta
                    - self.tensors[level].externalities.get(j, p, q).clone()
                    - self.tensors[p].externalities.get(q, level, j).clone();
            }
            self.z.set(level, Some(j));
            self.used[j] = true;
            self.descend(level + 1, current.clone() + delta);
            self.used[j] = false;
            self.z.set(level, None);
        }
    }
}

fn check_dims<S: Scalar>(tensors: &TensorProfile<S>) -> Result<usize, MechError> {
    let n = tensors.len();
    if n == 0 {
        return Err(MechError::DimensionMismatch("empty tensor profile".into()));
    }
    for t in tensors {
        if t.n() != n || t.externalities.n() != n || t.seller_costs.len() != n {
            return Err(MechError::DimensionMismatch(format!(
                "buyer tensors must be sized for n = {n}"
            )));
        }
    }
    Ok(n)
}

fn finish<S: Scalar>(tensors: &TensorProfile<S>, matching: Matching) -> QapSolution<S> {
    let per_buyer: Vec<S> = (0..tensors.len())
        .map(|i| payoff_g(&matching, i, &tensors[i]).expect("dimensions checked"))
        .collect();
    let mut value = S::zero();
    for p in &per_buyer {
        value = value + p.clone();
    }
    QapSolution {
        matching,
        value,
        per_buyer,
    }
}

/// Maximizes total surplus over all feasible matchings. Ties are broken by
/// the lexicographically smallest flattened matching; exact in rational mode.
pub fn solve_qap<S: Scalar>(tensors: &TensorProfile<S>) -> Result<QapSolution<S>, MechError> {
    check_dims(tensors)?;
    let (matching, incremental) = Search::run(tensors, None);
    let solution = finish(tensors, matching);
    if S::EXACT {
        debug_assert_eq!(solution.value, incremental);
    }
    Ok(solution)
}

/// Maximizes total surplus over matchings that leave `excluded` unmatched.
pub fn solve_qap_excluding<S: Scalar>(
    tensors: &TensorProfile<S>,
    excluded: usize,
) -> Result<QapSolution<S>, MechError> {
    let n = check_dims(tensors)?;
    if excluded >= n {
        return Err(MechError::InvalidIndex(format!("buyer {}", excluded + 1)));
    }
    let (matching, incremental) = Search::run(tensors, Some(excluded));
    let solution = finish(tensors, matching);
    if S::EXACT {
        debug_assert_eq!(solution.value, incremental);
    }
    Ok(solution)
}
