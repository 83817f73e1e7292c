//! Efficient outcome and VCG transfers, plus the stage-2 settlement that
//! prices every match at the posted posterior.

use crate::model::{
    AssignmentProblem, BuyerTensors, ExtTable, MechError, TensorProfile, PROBABILITY_TOL,
};
use crate::num::Scalar;
use crate::prob::{expect_ext_table, StateDistribution};
use crate::qap::{solve_qap, solve_qap_excluding, QapSolution};

/// Outcome, transfers, and mechanism-view nets for one report profile.
///
/// `buyer_net[i] = g_i(outcome) + transfers[i]` evaluated at the reported
/// tensors; it is nonnegative for any reports, and equals the true net under
/// truthful reporting.
#[derive(Debug, Clone)]
pub struct VcgResult<S> {
    pub outcome: QapSolution<S>,
    pub transfers: Vec<S>,
    pub buyer_net: Vec<S>,
}

/// The surplus-maximizing assignment for the reported tensors.
pub fn efficient_outcome<S: Scalar>(
    tensors: &TensorProfile<S>,
) -> Result<QapSolution<S>, MechError> {
    solve_qap(tensors)
}

/// The transfer charged to buyer `i`: what the others obtain at the chosen
/// outcome minus what they could obtain with `i` removed. Always nonpositive.
pub fn vcg_transfer<S: Scalar>(tensors: &TensorProfile<S>, buyer: usize) -> Result<S, MechError> {
    let outcome = solve_qap(tensors)?;
    transfer_for(tensors, &outcome, buyer)
}

fn transfer_for<S: Scalar>(
    tensors: &TensorProfile<S>,
    outcome: &QapSolution<S>,
    buyer: usize,
) -> Result<S, MechError> {
    let mut others_at_outcome = S::zero();
    for (k, g) in outcome.per_buyer.iter().enumerate() {
        if k != buyer {
            others_at_outcome = others_at_outcome + g.clone();
        }
    }
    let restricted = solve_qap_excluding(tensors, buyer)?;
    // Buyer `buyer` is unmatched in the restricted optimum, so its total
    // already equals the others' payoff.
    Ok(others_at_outcome - restricted.value)
}

/// Transfers for every buyer, all referred to the same tie-broken outcome.
pub fn vcg_transfers<S: Scalar>(tensors: &TensorProfile<S>) -> Result<VcgResult<S>, MechError> {
    let outcome = solve_qap(tensors)?;
    let n = tensors.len();
    let mut transfers = Vec::with_capacity(n);
    let mut buyer_net = Vec::with_capacity(n);
    for i in 0..n {
        let x = transfer_for(tensors, &outcome, i)?;
        buyer_net.push(outcome.per_buyer[i].clone() + x.clone());
        transfers.push(x);
    }
    Ok(VcgResult {
        outcome,
        transfers,
        buyer_net,
    })
}

/// One buyer's claimed valuation and externality functions, per state.
#[derive(Debug, Clone)]
pub struct StageTwoReport<S> {
    /// `valuations_by_state[theta][j]`
    pub valuations_by_state: Vec<Vec<S>>,
    /// `externalities_by_state[theta]`
    pub externalities_by_state: Vec<ExtTable<S>>,
}

impl<S: Scalar> StageTwoReport<S> {
    /// The honest report: the buyer's own `(u_i(theta), c_i(theta))` tables.
    pub fn truthful(problem: &AssignmentProblem<S>, buyer: usize) -> Self {
        let n = problem.n();
        let m = problem.state_count();
        let valuations_by_state = (0..m)
            .map(|t| {
                (0..n)
                    .map(|j| problem.valuation(buyer, j, t).clone())
                    .collect()
            })
            .collect();
        let externalities_by_state = (0..m)
            .map(|t| {
                let mut table = ExtTable::zeros(n);
                for j in 0..n {
                    for p in 0..n {
                        for q in 0..n {
                            if p == buyer || q == j {
                                continue;
                            }
                            table.set(j, p, q, problem.externality(buyer, j, p, q, t).clone());
                        }
                    }
                }
                table
            })
            .collect();
        StageTwoReport {
            valuations_by_state,
            externalities_by_state,
        }
    }

    fn check(&self, n: usize, m: usize) -> Result<(), MechError> {
        if self.valuations_by_state.len() != m
            || self.externalities_by_state.len() != m
            || self.valuations_by_state.iter().any(|w| w.len() != n)
            || self.externalities_by_state.iter().any(|d| d.n() != n)
        {
            return Err(MechError::MalformedReport(format!(
                "report must give {m} state slices of dimension {n}"
            )));
        }
        for table in &self.externalities_by_state {
            for entry in table.entries() {
                if entry.approx_f64() < -PROBABILITY_TOL {
                    return Err(MechError::MalformedReport(
                        "reported externalities must be nonnegative".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Expected report under the posted posterior.
    pub fn expect(&self, pi: &StateDistribution<S>) -> (Vec<S>, ExtTable<S>) {
        let n = self.valuations_by_state[0].len();
        let mut w = vec![S::zero(); n];
        for (t, slice) in self.valuations_by_state.iter().enumerate() {
            for (j, value) in slice.iter().enumerate() {
                w[j] = w[j].clone() + value.clone() * pi.get(t).clone();
            }
        }
        let d = expect_ext_table(&self.externalities_by_state, pi);
        (w, d)
    }
}

/// Mechanism-view tensors for a report profile at the posted posterior:
/// claimed `(w_k(pi), d_k(pi))` plus the known seller costs `v_k(pi)`.
pub fn reported_tensors<S: Scalar>(
    problem: &AssignmentProblem<S>,
    pi: &StateDistribution<S>,
    reports: &[StageTwoReport<S>],
) -> Result<TensorProfile<S>, MechError> {
    let n = problem.n();
    let m = problem.state_count();
    if reports.len() != n {
        return Err(MechError::MalformedReport(format!(
            "need {n} reports, got {}",
            reports.len()
        )));
    }
    let mut tensors = Vec::with_capacity(n);
    for (i, report) in reports.iter().enumerate() {
        report.check(n, m)?;
        let (valuations, externalities) = report.expect(pi);
        let mut seller_costs = vec![S::zero(); n];
        for (j, slot) in seller_costs.iter_mut().enumerate() {
            for t in 0..m {
                *slot = slot.clone() + problem.seller_cost(i, j, t).clone() * pi.get(t).clone();
            }
        }
        tensors.push(BuyerTensors {
            valuations,
            externalities,
            seller_costs,
        });
    }
    Ok(tensors)
}

/// Full stage-2 settlement at the posted posterior.
#[derive(Debug, Clone)]
pub struct Settlement<S> {
    pub vcg: VcgResult<S>,
    /// Payment received by each seller: `v_ij(pi)` when matched with buyer i.
    pub seller_payments: Vec<S>,
    /// The mechanism-view tensors the outcome was computed from.
    pub tensors: TensorProfile<S>,
}

/// Computes the social outcome and transfers from the reported functions,
/// priced at the posted posterior; matched buyers pay their seller's expected
/// cost at that same posterior.
pub fn stage2_settle<S: Scalar>(
    problem: &AssignmentProblem<S>,
    pi: &StateDistribution<S>,
    reports: &[StageTwoReport<S>],
) -> Result<Settlement<S>, MechError> {
    let tensors = reported_tensors(problem, pi, reports)?;
    let vcg = vcg_transfers(&tensors)?;
    let mut seller_payments = vec![S::zero(); problem.n()];
    for (i, j) in vcg.outcome.matching.pairs() {
        seller_payments[j] = tensors[i].seller_costs[j].clone();
    }
    Ok(Settlement {
        vcg,
        seller_payments,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Matching;
    use crate::prob::expect_tensors;
    use crate::rng::Rng;
    use crate::testutil::two_buyer_binary_problem;

    fn plain_tensors(w: &[Vec<f64>]) -> TensorProfile<f64> {
        let n = w.len();
        w.iter()
            .map(|row| BuyerTensors {
                valuations: row.clone(),
                externalities: ExtTable::zeros(n),
                seller_costs: vec![0.0; n],
            })
            .collect()
    }

    #[test]
    fn single_buyer_pays_nothing() {
        let t = plain_tensors(&[vec![5.0]]);
        assert_eq!(vcg_transfer(&t, 0).unwrap(), 0.0);
    }

    #[test]
    fn transfers_match_hand_enumeration() {
        let t = plain_tensors(&[vec![5.0, 2.0], vec![4.0, 3.0]]);
        let result = vcg_transfers(&t).unwrap();
        assert_eq!(result.transfers, vec![-1.0, 0.0]);
        assert_eq!(result.buyer_net, vec![4.0, 3.0]);
    }

    #[test]
    fn transfers_with_externality() {
        let mut t = plain_tensors(&[vec![5.0, 2.0], vec![4.0, 3.0]]);
        t[0].externalities.set(0, 1, 1, 1.0);
        let result = vcg_transfers(&t).unwrap();
        assert_eq!(result.outcome.matching.seller_of(0), Some(0));
        assert_eq!(result.transfers[0], -1.0);
        assert_eq!(result.buyer_net[0], 3.0);
    }

    #[test]
    fn transfers_nonpositive_nets_nonnegative_on_random_instances() {
        let mut rng = Rng::new(5);
        for trial in 0..40 {
            let n = 2 + trial % 3;
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..n).map(|_| rng.next_f64() * 3.0).collect())
                .collect();
            let mut tensors = plain_tensors(&rows);
            for i in 0..n {
                for j in 0..n {
                    tensors[i].seller_costs[j] = rng.next_f64();
                    for p in 0..n {
                        for q in 0..n {
                            if p != i && q != j && rng.next_f64() < 0.3 {
                                tensors[i].externalities.set(j, p, q, rng.next_f64());
                            }
                        }
                    }
                }
            }
            let result = vcg_transfers(&tensors).unwrap();
            for i in 0..n {
                assert!(result.transfers[i] <= 1e-9, "positive transfer");
                assert!(result.buyer_net[i] >= -1e-9, "negative net");
            }
        }
    }

    #[test]
    fn value_invariant_under_buyer_relabeling() {
        let t = plain_tensors(&[vec![5.0, 2.0], vec![4.0, 3.0]]);
        let swapped = vec![t[1].clone(), t[0].clone()];
        let a = solve_qap(&t).unwrap();
        let b = solve_qap(&swapped).unwrap();
        assert_eq!(a.value, b.value);
        // The matching permutes with the buyers (up to tie-breaking).
        assert_eq!(b.matching.seller_of(0), Some(1));
        assert_eq!(b.matching.seller_of(1), Some(0));
    }

    #[test]
    fn settle_point_mass_equals_state_slice() {
        let p = two_buyer_binary_problem::<f64>();
        let reports: Vec<StageTwoReport<f64>> =
            (0..2).map(|i| StageTwoReport::truthful(&p, i)).collect();
        let pi = StateDistribution::point_mass(2, 0);
        let settlement = stage2_settle(&p, &pi, &reports).unwrap();
        // State slice: w = [[5,2],[4,3]], d_{1,1}^{2,2} = 1, v = 0. Buyer 2's
        // presence costs buyer 1 one unit of externality, so both pay 1.
        assert_eq!(settlement.vcg.outcome.value, 7.0);
        assert_eq!(settlement.vcg.transfers, vec![-1.0, -1.0]);
        assert_eq!(settlement.seller_payments, vec![0.0, 0.0]);
    }

    #[test]
    fn settle_truthful_matches_expected_tensors() {
        let p = two_buyer_binary_problem::<f64>();
        let reports: Vec<StageTwoReport<f64>> =
            (0..2).map(|i| StageTwoReport::truthful(&p, i)).collect();
        let pi = StateDistribution::new(vec![0.25, 0.75]).unwrap();
        let settlement = stage2_settle(&p, &pi, &reports).unwrap();
        let direct = vcg_transfers(&expect_tensors(&p, &pi)).unwrap();
        assert_eq!(settlement.vcg.outcome.value, direct.outcome.value);
        assert_eq!(settlement.vcg.transfers, direct.transfers);
    }

    #[test]
    fn settle_zero_reports_gives_empty_matching() {
        let p = two_buyer_binary_problem::<f64>();
        let zero = StageTwoReport {
            valuations_by_state: vec![vec![0.0; 2]; 2],
            externalities_by_state: vec![ExtTable::zeros(2), ExtTable::zeros(2)],
        };
        let pi = StateDistribution::new(vec![0.5, 0.5]).unwrap();
        let settlement = stage2_settle(&p, &pi, &[zero.clone(), zero]).unwrap();
        assert_eq!(settlement.vcg.outcome.matching, Matching::empty(2));
        assert_eq!(settlement.vcg.transfers, vec![0.0, 0.0]);
    }

    #[test]
    fn settle_rejects_malformed_reports() {
        let p = two_buyer_binary_problem::<f64>();
        let bad = StageTwoReport {
            valuations_by_state: vec![vec![0.0; 2]],
            externalities_by_state: vec![ExtTable::zeros(2)],
        };
        let pi = StateDistribution::new(vec![0.5, 0.5]).unwrap();
        let truthful = StageTwoReport::truthful(&p, 1);
        assert!(matches!(
            stage2_settle(&p, &pi, &[bad, truthful]),
            Err(MechError::MalformedReport(_))
        ));
    }

    #[test]
    fn settle_rejects_negative_externality_report() {
        let p = two_buyer_binary_problem::<f64>();
        let mut report = StageTwoReport::truthful(&p, 0);
        report.externalities_by_state[0].set(0, 1, 1, -0.5);
        let pi = StateDistribution::new(vec![0.5, 0.5]).unwrap();
        let other = StageTwoReport::truthful(&p, 1);
        assert!(matches!(
            stage2_settle(&p, &pi, &[report, other]),
            Err(MechError::MalformedReport(_))
        ));
    }
}
