#![allow(clippy::needless_range_loop)]

//! Property-based invariants over randomized instances.

use mechlab_core::model::{payoff_g, BuyerTensors, ExtTable, Matching, Prior, TensorProfile};
use mechlab_core::prob::{posterior_flat, signal_marginal, StateDistribution};
use mechlab_core::qap::{enumerate_matchings, solve_qap, solve_qap_excluding};
use mechlab_core::scenario::{generate_problem, RawGenerator, RawNum};
use mechlab_core::testutil::two_buyer_binary_problem;
use mechlab_core::vcg::vcg_transfers;
use mechlab_core::AssignmentProblem;
use proptest::prelude::*;

fn arb_matching(n: usize) -> impl Strategy<Value = Matching> {
    proptest::collection::vec(proptest::option::of(0..n), n).prop_map(move |slots| {
        let mut used = vec![false; n];
        let mut pairs = Vec::new();
        for (i, slot) in slots.into_iter().enumerate() {
            if let Some(j) = slot {
                if !used[j] {
                    used[j] = true;
                    pairs.push((i, j));
                }
            }
        }
        Matching::from_pairs(n, &pairs).unwrap()
    })
}

fn arb_tensors(n: usize, m_bound: f64) -> impl Strategy<Value = TensorProfile<f64>> {
    let buyer = (
        proptest::collection::vec(0.0..m_bound, n),
        proptest::collection::vec(0.0..m_bound, n),
        proptest::collection::vec(0.0..m_bound, n * n * n),
    )
        .prop_map(move |(valuations, seller_costs, ext)| {
            let mut externalities = ExtTable::zeros(n);
            let mut it = ext.into_iter();
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        externalities.set(j, p, q, it.next().unwrap());
                    }
                }
            }
            BuyerTensors {
                valuations,
                externalities,
                seller_costs,
            }
        });
    proptest::collection::vec(buyer, n)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// |g_i| <= (2 + n) M for tensors bounded by M.
    #[test]
    fn payoff_stays_within_global_bound(
        z in arb_matching(4),
        tensors in arb_tensors(4, 2.0),
    ) {
        for (i, t) in tensors.iter().enumerate() {
            let g = payoff_g(&z, i, t).unwrap();
            prop_assert!(g.abs() <= (2.0 + 4.0) * 2.0 + 1e-9);
        }
    }

    /// g_i is linear in (w_i, kappa_i) holding the matching fixed.
    #[test]
    fn payoff_linear_in_valuations_and_costs(
        z in arb_matching(3),
        tensors in arb_tensors(3, 1.0),
        scale in 0.0f64..3.0,
    ) {
        for (i, t) in tensors.iter().enumerate() {
            let base = payoff_g(&z, i, t).unwrap();
            let mut scaled = t.clone();
            for w in scaled.valuations.iter_mut() {
                *w *= scale;
            }
            for k in scaled.seller_costs.iter_mut() {
                *k *= scale;
            }
            let mut ext_part = t.clone();
            ext_part.valuations = vec![0.0; 3];
            ext_part.seller_costs = vec![0.0; 3];
            let ext_only = payoff_g(&z, i, &ext_part).unwrap();
            let got = payoff_g(&z, i, &scaled).unwrap();
            // g(scale*w, d, scale*k) = scale*(g(w,0,k)) + g(0,d,0)
            let expected = scale * (base - ext_only) + ext_only;
            prop_assert!((got - expected).abs() < 1e-9);
        }
    }

    /// The solver value dominates every enumerated matching and the
    /// restricted optimum never beats the unrestricted one.
    #[test]
    fn solver_dominates_enumeration(tensors in arb_tensors(3, 1.0)) {
        let sol = solve_qap(&tensors).unwrap();
        for z in enumerate_matchings(3).unwrap() {
            let mut total = 0.0;
            for i in 0..3 {
                total += payoff_g(&z, i, &tensors[i]).unwrap();
            }
            prop_assert!(sol.value >= total - 1e-9);
        }
        for i in 0..3 {
            let restricted = solve_qap_excluding(&tensors, i).unwrap();
            prop_assert!(restricted.value <= sol.value + 1e-12);
            prop_assert_eq!(restricted.per_buyer[i], 0.0);
        }
    }

    /// VCG transfers are nonpositive and mechanism-view nets nonnegative,
    /// for arbitrary (not just truthful) report tensors.
    #[test]
    fn vcg_sign_properties(tensors in arb_tensors(3, 1.5)) {
        let result = vcg_transfers(&tensors).unwrap();
        for i in 0..3 {
            prop_assert!(result.transfers[i] <= 1e-9);
            prop_assert!(result.buyer_net[i] >= -1e-9);
        }
    }
}

fn seeded_problem(seed: u64, n: usize, m: usize) -> AssignmentProblem<f64> {
    let spec = RawGenerator {
        n,
        m,
        signal_sizes: vec![2; n],
        m_bound: RawNum::from_f64(1.0),
        seed,
        externality_density: 0.5,
    };
    generate_problem(&spec).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// Law of total probability: mixing profile posteriors by the conditional
    /// signal marginal recovers the per-signal posterior.
    #[test]
    fn marginal_posterior_consistency(seed in 0u64..5000, buyer in 0usize..2, signal in 0usize..2) {
        let p = seeded_problem(seed, 2, 3);
        let marginal = signal_marginal(&p, buyer, signal).unwrap();
        let m = p.state_count();
        let mut mixed = vec![0.0; m];
        for (opp, mass) in marginal.iter().enumerate() {
            let flat = p.compose_profile(buyer, signal, opp);
            let post = posterior_flat(&p, flat);
            for t in 0..m {
                mixed[t] += post.get(t) * mass;
            }
        }
        let mut own = vec![0.0; m];
        let mut norm = 0.0;
        for opp in 0..p.opponent_count(buyer) {
            let flat = p.compose_profile(buyer, signal, opp);
            for t in 0..m {
                own[t] += p.joint_prob(t, flat);
                norm += p.joint_prob(t, flat);
            }
        }
        for t in 0..m {
            prop_assert!((mixed[t] - own[t] / norm).abs() < 1e-10);
        }
    }

    /// Posterior partitions are invariant under relabeling opponent signals:
    /// the multiset of class sizes is unchanged and representatives map to
    /// each other.
    #[test]
    fn partition_invariant_under_relabeling(seed in 0u64..2000) {
        let p = seeded_problem(seed, 2, 2);
        let part = mechlab_core::posterior_partition(&p, 0, 0);
        // Relabel buyer 1's signals by swapping them in the prior table.
        let mut table = Vec::new();
        if let Prior::Dense(t) = p.prior() {
            table = t.clone();
        }
        let m = p.state_count();
        // Profiles: (b0, b1) flat = b0*2 + b1; swap b1 labels.
        for b0 in 0..2 {
            for t in 0..m {
                table.swap((b0 * 2) * m + t, (b0 * 2 + 1) * m + t);
            }
        }
        let relabeled = AssignmentProblem::new(
            p.states().to_vec(),
            p.signal_sets().to_vec(),
            vec![vec![vec![0.0; m]; 2]; 2],
            vec![vec![vec![0.0; m]; 2]; 2],
            vec![],
            Prior::Dense(table),
            1.0,
        )
        .unwrap();
        let relabeled_part = mechlab_core::posterior_partition(&relabeled, 0, 0);
        let mut sizes_a: Vec<usize> = part.classes.iter().map(|c| c.members.len()).collect();
        let mut sizes_b: Vec<usize> =
            relabeled_part.classes.iter().map(|c| c.members.len()).collect();
        sizes_a.sort_unstable();
        sizes_b.sort_unstable();
        prop_assert_eq!(sizes_a, sizes_b);
        for class in &part.classes {
            let found = relabeled_part
                .classes
                .iter()
                .any(|c| c.representative.l1_distance(&class.representative) < 1e-12);
            prop_assert!(found, "representative lost under relabeling");
        }
    }

    /// Expected tensors are convex combinations: entries stay within [0, M].
    #[test]
    fn expected_tensors_bounded(seed in 0u64..2000, w0 in 0.01f64..0.99) {
        let p = seeded_problem(seed, 3, 2);
        let pi = StateDistribution::new(vec![w0, 1.0 - w0]).unwrap();
        let tensors = mechlab_core::expect_tensors(&p, &pi);
        for t in &tensors {
            for w in &t.valuations {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(w));
            }
            for k in &t.seller_costs {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(k));
            }
            for d in t.externalities.entries() {
                prop_assert!((-1e-12..=1.0 + 1e-12).contains(d));
            }
        }
    }
}

#[test]
fn beliefs_are_probability_tables_on_seeded_instances() {
    for seed in 0..10u64 {
        let p = seeded_problem(seed, 3, 2);
        for buyer in 0..3 {
            let system = mechlab_core::BeliefSystem::build(&p, buyer);
            for (report, per_class) in system.tables.iter().enumerate() {
                for tables in per_class {
                    for table in tables {
                        let total = table.total_mass();
                        assert!(
                            (total - 1.0).abs() < 1e-10,
                            "belief table mass {total} at report {report}"
                        );
                        for &opp in &table.support {
                            assert!(table.opponent_mass(opp) > 0.0);
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn two_buyer_fixture_partition_counts() {
    let p = two_buyer_binary_problem::<f64>();
    for buyer in 0..2 {
        for report in 0..2 {
            let part = mechlab_core::posterior_partition(&p, buyer, report);
            let total: usize = part.classes.iter().map(|c| c.members.len()).sum();
            assert_eq!(total, p.opponent_count(buyer));
        }
    }
}
