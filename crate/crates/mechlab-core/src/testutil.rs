//! Small hand-checkable fixtures shared by unit, property, and acceptance
//! tests.

use crate::model::{AssignmentProblem, ExternalityEntry, Prior};
use crate::num::Scalar;

/// Two buyers, two sellers, two states, binary signals.
///
/// Prior: states equally likely, each buyer independently sees signal 1 with
/// probability 0.8 in state 1 and 0.4 in state 2 (materialized densely).
/// Valuations are state-independent `[[5, 2], [4, 3]]`, seller costs zero,
/// and buyer 1 suffers externality 1 from the (2, 2) pair when holding
/// seller 1.
pub fn two_buyer_binary_problem<S: Scalar>() -> AssignmentProblem<S> {
    let r = |n: i64, d: u64| S::ratio(n, d);
    // P(theta, b) over profiles (x1x1, x1x2, x2x1, x2x2).
    let table = vec![
        r(32, 100),
        r(8, 100),
        r(8, 100),
        r(12, 100),
        r(8, 100),
        r(12, 100),
        r(2, 100),
        r(18, 100),
    ];
    let w = [[5i64, 2], [4, 3]];
    let u = (0..2)
        .map(|i| {
            (0..2)
                .map(|j| vec![S::from_int(w[i][j]), S::from_int(w[i][j])])
                .collect()
        })
        .collect();
    let v = vec![vec![vec![S::zero(); 2]; 2]; 2];
    let c = (0..2)
        .map(|theta| ExternalityEntry {
            buyer: 0,
            seller: 0,
            other_buyer: 1,
            other_seller: 1,
            state: theta,
            value: S::one(),
        })
        .collect();
    AssignmentProblem::new(
        vec!["s1".into(), "s2".into()],
        vec![
            vec!["x1".into(), "x2".into()],
            vec!["x1".into(), "x2".into()],
        ],
        u,
        v,
        c,
        Prior::Dense(table),
        S::from_int(5),
    )
    .expect("fixture is well-formed")
}

/// n = 2 binary instance with zero tensors and an arbitrary dense prior
/// (given as `table[b_flat * 2 + theta]`, 8 entries).
pub fn dense_problem_with_prior(table: Vec<f64>) -> AssignmentProblem<f64> {
    AssignmentProblem::new(
        vec!["s1".into(), "s2".into()],
        vec![
            vec!["x1".into(), "x2".into()],
            vec!["x1".into(), "x2".into()],
        ],
        vec![vec![vec![0.0; 2]; 2]; 2],
        vec![vec![vec![0.0; 2]; 2]; 2],
        vec![],
        Prior::Dense(table),
        1.0,
    )
    .expect("fixture is well-formed")
}

/// Single buyer with two signals; the empty opponent space makes the
/// distinct-conditionals assumption unsatisfiable.
pub fn single_buyer_problem() -> AssignmentProblem<f64> {
    AssignmentProblem::new(
        vec!["s1".into(), "s2".into()],
        vec![vec!["x1".into(), "x2".into()]],
        vec![vec![vec![1.0, 1.0]]],
        vec![vec![vec![0.5, 0.5]]],
        vec![],
        Prior::Dense(vec![0.3, 0.2, 0.2, 0.3]),
        1.0,
    )
    .expect("fixture is well-formed")
}

/// Three buyers: buyers 1 and 2 carry the informative binary signal from the
/// two-buyer fixture, buyer 3's signal is pure noise. This yields two-member
/// posterior-partition classes for buyer 1.
pub fn three_buyer_noisy_problem<S: Scalar>() -> AssignmentProblem<S> {
    let r = |n: i64, d: u64| S::ratio(n, d);
    let lambda = [r(1, 2), r(1, 2)];
    let q1 = [[r(4, 5), r(1, 5)], [r(2, 5), r(3, 5)]];
    // Dense table over (b1, b2, b3), buyer 3 uniform.
    let mut table = Vec::with_capacity(16);
    for b1 in 0..2 {
        for b2 in 0..2 {
            for _b3 in 0..2 {
                for theta in 0..2usize {
                    let p = lambda[theta].clone()
                        * q1[theta][b1].clone()
                        * q1[theta][b2].clone()
                        * r(1, 2);
                    table.push(p);
                }
            }
        }
    }
    let u = vec![vec![vec![S::one(); 2]; 3]; 3];
    let v = vec![vec![vec![S::zero(); 2]; 3]; 3];
    AssignmentProblem::new(
        vec!["s1".into(), "s2".into()],
        vec![
            vec!["x1".into(), "x2".into()],
            vec!["x1".into(), "x2".into()],
            vec!["x1".into(), "x2".into()],
        ],
        u,
        v,
        vec![],
        Prior::Dense(table),
        S::one(),
    )
    .expect("fixture is well-formed")
}
