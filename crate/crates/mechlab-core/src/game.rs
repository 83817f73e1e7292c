//! Extensive-form simulation of the two-stage game and the verification
//! harnesses for its incentive properties.
//!
//! Stage 1: buyers observe signals and report them; the mechanism pays the
//! scoring-rule rewards and posts the posterior induced by the reports.
//! Stage 2: buyers report valuation-externality functions; the mechanism
//! settles with VCG transfers at the posted posterior.

use crate::model::{
    payoff_g, AssignmentProblem, BuyerTensors, ExtTable, Matching, MechError, TensorProfile,
};
use crate::num::Scalar;
use crate::parallel::par_map_indexed;
use crate::prob::{
    class_beliefs, posterior_flat, signal_marginal, PartitionSet, StateDistribution,
};
use crate::qap::{solve_qap, solve_qap_excluding};
use crate::rng::Rng;
use crate::scoring::{deviation_bound, RewardSystem};
use crate::vcg::{stage2_settle, StageTwoReport};

// --- strategies ---

/// A behavior strategy: a stage-1 report rule and a stage-2 report rule over
/// information sets `(reported signal, posted posterior, observed signal)`.
pub trait Strategy<S: Scalar> {
    fn stage1(&self, observed: usize) -> usize;
    fn stage2(
        &self,
        problem: &AssignmentProblem<S>,
        buyer: usize,
        report: usize,
        posted: &StateDistribution<S>,
        observed: usize,
    ) -> StageTwoReport<S>;
}

#[derive(Debug, Clone)]
pub enum Stage1Rule {
    Truthful,
    /// `map[observed] = reported`
    Map(Vec<usize>),
}

/// Stage-2 rules used by simulations and verification batteries. All of them
/// report a fixed per-state function, independent of the posted posterior.
#[derive(Debug, Clone)]
pub enum Stage2Rule<S> {
    Truthful,
    Zero,
    /// Truthful tables rescaled.
    Scale {
        valuation_factor: S,
        externality_factor: S,
    },
    /// Truthful tables with sellers relabeled by `perm`.
    PermuteSellers(Vec<usize>),
    /// A constant explicit report.
    Table(StageTwoReport<S>),
}

#[derive(Debug, Clone)]
pub struct BuyerStrategy<S> {
    pub stage1: Stage1Rule,
    pub stage2: Stage2Rule<S>,
}

impl<S: Scalar> BuyerStrategy<S> {
    pub fn truthful() -> Self {
        BuyerStrategy {
            stage1: Stage1Rule::Truthful,
            stage2: Stage2Rule::Truthful,
        }
    }
}

impl<S: Scalar> Strategy<S> for BuyerStrategy<S> {
    fn stage1(&self, observed: usize) -> usize {
        match &self.stage1 {
            Stage1Rule::Truthful => observed,
            Stage1Rule::Map(map) => map[observed],
        }
    }

    fn stage2(
        &self,
        problem: &AssignmentProblem<S>,
        buyer: usize,
        _report: usize,
        _posted: &StateDistribution<S>,
        _observed: usize,
    ) -> StageTwoReport<S> {
        materialize_stage2(&self.stage2, problem, buyer)
    }
}

impl<S: Scalar, T: Strategy<S>> Strategy<S> for &T {
    fn stage1(&self, observed: usize) -> usize {
        (*self).stage1(observed)
    }

    fn stage2(
        &self,
        problem: &AssignmentProblem<S>,
        buyer: usize,
        report: usize,
        posted: &StateDistribution<S>,
        observed: usize,
    ) -> StageTwoReport<S> {
        (*self).stage2(problem, buyer, report, posted, observed)
    }
}

fn materialize_stage2<S: Scalar>(
    rule: &Stage2Rule<S>,
    problem: &AssignmentProblem<S>,
    buyer: usize,
) -> StageTwoReport<S> {
    match rule {
        Stage2Rule::Truthful => StageTwoReport::truthful(problem, buyer),
        Stage2Rule::Zero => {
            let n = problem.n();
            let m = problem.state_count();
            StageTwoReport {
                valuations_by_state: vec![vec![S::zero(); n]; m],
                externalities_by_state: vec![ExtTable::zeros(n); m],
            }
        }
        Stage2Rule::Scale {
            valuation_factor,
            externality_factor,
        } => {
            let truthful = StageTwoReport::truthful(problem, buyer);
            StageTwoReport {
                valuations_by_state: truthful
                    .valuations_by_state
                    .iter()
                    .map(|row| {
                        row.iter()
                            .map(|w| w.clone() * valuation_factor.clone())
                            .collect()
                    })
                    .collect(),
                externalities_by_state: truthful
                    .externalities_by_state
                    .iter()
                    .map(|table| table.map(|d| d.clone() * externality_factor.clone()))
                    .collect(),
            }
        }
        Stage2Rule::PermuteSellers(perm) => {
            let truthful = StageTwoReport::truthful(problem, buyer);
            let n = problem.n();
            let m = problem.state_count();
            let mut valuations_by_state = vec![vec![S::zero(); n]; m];
            let mut externalities_by_state = vec![ExtTable::zeros(n); m];
            for t in 0..m {
                for j in 0..n {
                    valuations_by_state[t][j] = truthful.valuations_by_state[t][perm[j]].clone();
                    for p in 0..n {
                        for q in 0..n {
                            if p == buyer || q == j {
                                continue;
                            }
                            externalities_by_state[t].set(
                                j,
                                p,
                                q,
                                truthful.externalities_by_state[t]
                                    .get(perm[j], p, perm[q])
                                    .clone(),
                            );
                        }
                    }
                }
            }
            StageTwoReport {
                valuations_by_state,
                externalities_by_state,
            }
        }
        Stage2Rule::Table(report) => report.clone(),
    }
}

// --- the mechanism run ---

/// Complete trace of one play of the game, with the money accounts needed to
/// check conservation.
#[derive(Debug, Clone)]
pub struct MechanismRun<S> {
    pub true_signals: Vec<usize>,
    pub reports: Vec<usize>,
    pub posted: StateDistribution<S>,
    pub stage2_reports: Vec<StageTwoReport<S>>,
    pub matching: Matching,
    pub transfers: Vec<S>,
    pub rewards: Vec<S>,
    pub seller_payments: Vec<S>,
    /// Expected payoff per buyer before the state resolves:
    /// `g_i(matching; u_i(rho(b)), c_i(rho(b)), v_i(rho(r))) + x_i + xi_i(r)`.
    pub buyer_payoffs: Vec<S>,
    /// Total match value at the true posterior, gross of seller payments:
    /// `sum_i g_i(matching; u_i(rho(b)), c_i(rho(b)), 0)`.
    pub gross_value: S,
    /// `sum_i x_i + sum_i xi_i`.
    pub net_payment: S,
}

impl<S: Scalar> MechanismRun<S> {
    /// Conservation of money: buyers' payoffs plus sellers' receipts plus the
    /// stage-2 revenue equals the gross match value plus the reward outlay.
    /// Returns the imbalance (exactly zero in rational mode).
    pub fn accounting_imbalance(&self) -> S {
        let mut lhs = S::zero();
        for p in &self.buyer_payoffs {
            lhs = lhs + p.clone();
        }
        for r in &self.seller_payments {
            lhs = lhs + r.clone();
        }
        for x in &self.transfers {
            lhs = lhs - x.clone();
        }
        let mut rhs = self.gross_value.clone();
        for xi in &self.rewards {
            rhs = rhs + xi.clone();
        }
        lhs - rhs
    }
}

/// `(u_i(pi), c_i(pi))` for one buyer, with an explicit seller-cost slot.
fn truthful_tensors_at<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    pi: &StateDistribution<S>,
    seller_costs: Vec<S>,
) -> BuyerTensors<S> {
    let n = problem.n();
    let m = problem.state_count();
    let mut tensors = BuyerTensors::zeros(n);
    tensors.seller_costs = seller_costs;
    for j in 0..n {
        let mut w = S::zero();
        for t in 0..m {
            w = w + problem.valuation(buyer, j, t).clone() * pi.get(t).clone();
        }
        tensors.valuations[j] = w;
        for p in 0..n {
            for q in 0..n {
                if p == buyer || q == j {
                    continue;
                }
                let mut d = S::zero();
                for t in 0..m {
                    d = d + problem.externality(buyer, j, p, q, t).clone() * pi.get(t).clone();
                }
                tensors.externalities.set(j, p, q, d);
            }
        }
    }
    tensors
}

/// `v_i(pi)` for one buyer.
fn expected_prices<S: Scalar>(
    problem: &AssignmentProblem<S>,
    buyer: usize,
    pi: &StateDistribution<S>,
) -> Vec<S> {
    let m = problem.state_count();
    (0..problem.n())
        .map(|j| {
            let mut v = S::zero();
            for t in 0..m {
                v = v + problem.seller_cost(buyer, j, t).clone() * pi.get(t).clone();
            }
            v
        })
        .collect()
}

/// Plays both stages of the game for the realized signal profile.
pub fn play<S: Scalar, T: Strategy<S>>(
    problem: &AssignmentProblem<S>,
    rewards: &RewardSystem<S>,
    strategies: &[T],
    true_signals: &[usize],
) -> Result<MechanismRun<S>, MechError> {
    let n = problem.n();
    if strategies.len() != n {
        return Err(MechError::DimensionMismatch(format!(
            "need {n} strategies, got {}",
            strategies.len()
        )));
    }
    let true_flat = problem.profile_flat(true_signals)?;
    let reports: Vec<usize> = (0..n)
        .map(|i| strategies[i].stage1(true_signals[i]))
        .collect();
    let report_flat = problem.profile_flat(&reports)?;
    let posted = posterior_flat(problem, report_flat);
    let stage2_reports: Vec<StageTwoReport<S>> = (0..n)
        .map(|i| strategies[i].stage2(problem, i, reports[i], &posted, true_signals[i]))
        .collect();
    let settlement = stage2_settle(problem, &posted, &stage2_reports)?;
    let reward_vec = rewards.rewards_at(report_flat);

    let true_posterior = posterior_flat(problem, true_flat);
    let matching = settlement.vcg.outcome.matching.clone();
    let mut buyer_payoffs = Vec::with_capacity(n);
    let mut gross_value = S::zero();
    for i in 0..n {
        // True valuation and externality at the true posterior; settlement
        // prices at the posted posterior.
        let tensors = truthful_tensors_at(
            problem,
            i,
            &true_posterior,
            settlement.tensors[i].seller_costs.clone(),
        );
        let net_of_prices = payoff_g(&matching, i, &tensors)?;
        let mut gross_tensors = tensors.clone();
        gross_tensors.seller_costs = vec![S::zero(); n];
        gross_value = gross_value + payoff_g(&matching, i, &gross_tensors)?;
        buyer_payoffs
            .push(net_of_prices + settlement.vcg.transfers[i].clone() + reward_vec[i].clone());
    }
    let mut net_payment = S::zero();
    for x in &settlement.vcg.transfers {
        net_payment = net_payment + x.clone();
    }
    for xi in &reward_vec {
        net_payment = net_payment + xi.clone();
    }
    let run = MechanismRun {
        true_signals: true_signals.to_vec(),
        reports,
        posted,
        stage2_reports,
        matching,
        transfers: settlement.vcg.transfers,
        rewards: reward_vec,
        seller_payments: settlement.seller_payments,
        buyer_payoffs,
        gross_value,
        net_payment,
    };
    debug_assert!(
        run.accounting_imbalance().abs().approx_f64() < 1e-9,
        "money leaked from the ledger"
    );
    Ok(run)
}

/// Revenue split of one run.
#[derive(Debug, Clone)]
pub struct BudgetReport<S> {
    pub vcg_revenue: S,
    pub reward_outlay: S,
    pub net: S,
}

pub fn budget_report<S: Scalar>(run: &MechanismRun<S>) -> BudgetReport<S> {
    let mut revenue = S::zero();
    for x in &run.transfers {
        revenue = revenue - x.clone();
    }
    let mut outlay = S::zero();
    for xi in &run.rewards {
        outlay = outlay + xi.clone();
    }
    BudgetReport {
        vcg_revenue: revenue,
        reward_outlay: outlay,
        net: run.net_payment.clone(),
    }
}

// --- misreport candidates ---

/// Deterministic battery of stage-2 misreports around a truthful expectation:
/// rescalings, seller permutations, zeroed and inflated externalities, and
/// seeded random tables. Produces exactly `count` candidates.
pub fn misreport_candidates<S: Scalar>(
    truthful_valuations: &[S],
    truthful_externalities: &ExtTable<S>,
    m_bound: &S,
    count: usize,
    rng: &mut Rng,
) -> Vec<(Vec<S>, ExtTable<S>)> {
    let n = truthful_valuations.len();
    let mut out: Vec<(Vec<S>, ExtTable<S>)> = Vec::with_capacity(count);
    let scale_w = |f: S| -> Vec<S> {
        truthful_valuations
            .iter()
            .map(|w| w.clone() * f.clone())
            .collect()
    };
    for f in [S::zero(), S::ratio(1, 2), S::from_int(2)] {
        out.push((scale_w(f), truthful_externalities.clone()));
    }
    out.push((truthful_valuations.to_vec(), ExtTable::zeros(n)));
    out.push((
        truthful_valuations.to_vec(),
        truthful_externalities.map(|d| d.clone() * S::from_int(2)),
    ));
    out.push((
        truthful_valuations.to_vec(),
        truthful_externalities.map(|_| m_bound.clone()),
    ));
    for _ in 0..3usize.min(count.saturating_sub(out.len())) {
        let perm = rng.permutation(n);
        let permuted: Vec<S> = (0..n)
            .map(|j| truthful_valuations[perm[j]].clone())
            .collect();
        out.push((permuted, truthful_externalities.clone()));
    }
    while out.len() < count {
        if rng.next_below(2) == 0 {
            // Perturb the truthful report.
            let w: Vec<S> = truthful_valuations
                .iter()
                .map(|w| {
                    let noise =
                        (rng.next_unit::<S>() * S::from_int(2) - S::one()) * m_bound.clone();
                    w.clone() + noise
                })
                .collect();
            let factor = rng.next_unit::<S>() * S::from_int(2);
            out.push((
                w,
                truthful_externalities.map(|d| d.clone() * factor.clone()),
            ));
        } else {
            // Fresh random tables.
            let w: Vec<S> = (0..n)
                .map(|_| rng.next_unit::<S>() * S::from_int(2) * m_bound.clone())
                .collect();
            let mut table = ExtTable::zeros(n);
            for j in 0..n {
                for p in 0..n {
                    for q in 0..n {
                        let draw: S = rng.next_unit();
                        table.set(j, p, q, draw * m_bound.clone());
                    }
                }
            }
            out.push((w, table));
        }
    }
    out.truncate(count);
    out
}

// --- batteries ---

/// Opponent strategy battery for the verification harnesses.
#[derive(Debug, Clone)]
pub struct Battery<S> {
    /// Opponent profiles; the focal buyer's entry is ignored.
    pub opponent_profiles: Vec<Vec<BuyerStrategy<S>>>,
    /// Misreports (stage-2 verification) or deviation candidates (stage-1
    /// search) evaluated per cell.
    pub candidates_per_cell: usize,
    pub seed: u64,
}

impl<S: Scalar> Battery<S> {
    /// Profiles for stage-2 dominance checks: truthful plus non-truthful
    /// transformations; random reports may exceed the valuation bound.
    pub fn stage2(
        problem: &AssignmentProblem<S>,
        seed: u64,
        profiles: usize,
        candidates: usize,
    ) -> Self {
        Battery {
            opponent_profiles: Self::profiles(problem, seed, profiles, false),
            candidates_per_cell: candidates,
            seed,
        }
    }

    /// Profiles for stage-1 honesty checks: opponents report signals
    /// truthfully and use per-state stage-2 tables bounded by `M`, the
    /// hypothesis under which the deviation bound is valid.
    pub fn stage1(
        problem: &AssignmentProblem<S>,
        seed: u64,
        profiles: usize,
        candidates: usize,
    ) -> Self {
        Battery {
            opponent_profiles: Self::profiles(problem, seed, profiles, true),
            candidates_per_cell: candidates,
            seed,
        }
    }

    fn profiles(
        problem: &AssignmentProblem<S>,
        seed: u64,
        profiles: usize,
        bounded: bool,
    ) -> Vec<Vec<BuyerStrategy<S>>> {
        let n = problem.n();
        let root = Rng::new(seed);
        let mut out = Vec::with_capacity(profiles);
        for p in 0..profiles {
            let mut rng = root.fork("battery-profile", p as u64);
            let profile: Vec<BuyerStrategy<S>> = (0..n)
                .map(|buyer| {
                    let stage2 = match p {
                        0 => Stage2Rule::Truthful,
                        1 => Stage2Rule::Zero,
                        2 => Stage2Rule::Scale {
                            valuation_factor: S::ratio(1, 2),
                            externality_factor: S::ratio(1, 2),
                        },
                        3 => Stage2Rule::PermuteSellers(rng.permutation(n)),
                        _ => {
                            Stage2Rule::Table(Self::random_table(problem, buyer, bounded, &mut rng))
                        }
                    };
                    BuyerStrategy {
                        stage1: Stage1Rule::Truthful,
                        stage2,
                    }
                })
                .collect();
            out.push(profile);
        }
        out
    }

    fn random_table(
        problem: &AssignmentProblem<S>,
        buyer: usize,
        bounded: bool,
        rng: &mut Rng,
    ) -> StageTwoReport<S> {
        let n = problem.n();
        let m = problem.state_count();
        let cap = if bounded { S::one() } else { S::from_int(2) };
        let valuations_by_state = (0..m)
            .map(|_| {
                (0..n)
                    .map(|_| rng.next_unit::<S>() * cap.clone() * problem.m_bound().clone())
                    .collect()
            })
            .collect();
        let externalities_by_state = (0..m)
            .map(|_| {
                let mut table = ExtTable::zeros(n);
                for j in 0..n {
                    for p in 0..n {
                        for q in 0..n {
                            if p == buyer || q == j {
                                continue;
                            }
                            let draw: S = rng.next_unit();
                            table.set(j, p, q, draw * problem.m_bound().clone());
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
}

// --- shared cell machinery ---

/// One opponent configuration inside a verification cell.
struct Member<S> {
    /// Probability weight attached to this opponent profile.
    weight: S,
    /// Mechanism tensors with the focal buyer's slot zeroed (filled per
    /// candidate).
    tensors: TensorProfile<S>,
    /// Tensors the focal buyer's realized payoff is valued at.
    value_tensors: BuyerTensors<S>,
}

struct Cell<S> {
    buyer: usize,
    prices: Vec<S>,
    members: Vec<Member<S>>,
}

impl<S: Scalar> Cell<S> {
    /// Expected `g_i + x_i` when the focal buyer reports `(w, d)`.
    fn eval(&self, w: &[S], d: &ExtTable<S>) -> S {
        let mut total = S::zero();
        for member in &self.members {
            let mut tensors = member.tensors.clone();
            tensors[self.buyer] = BuyerTensors {
                valuations: w.to_vec(),
                externalities: d.clone(),
                seller_costs: self.prices.clone(),
            };
            let outcome = solve_qap(&tensors).expect("dimensions fixed");
            let restricted = solve_qap_excluding(&tensors, self.buyer).expect("dimensions fixed");
            let mut others = S::zero();
            for (k, g) in outcome.per_buyer.iter().enumerate() {
                if k != self.buyer {
                    others = others + g.clone();
                }
            }
            let transfer = others - restricted.value;
            let g = payoff_g(&outcome.matching, self.buyer, &member.value_tensors)
                .expect("dimensions fixed");
            total = total + member.weight.clone() * (g + transfer);
        }
        total
    }

    /// Best value over the candidate grid followed by coordinate-wise local
    /// improvement on the valuation vector and a global externality rescale.
    fn maximize(&self, candidates: &[(Vec<S>, ExtTable<S>)], m_bound: &S) -> S {
        let mut best_value: Option<S> = None;
        let mut best: Option<(Vec<S>, ExtTable<S>)> = None;
        for (w, d) in candidates {
            let value = self.eval(w, d);
            if best_value
                .as_ref()
                .is_none_or(|b| value.total_cmp(b) == std::cmp::Ordering::Greater)
            {
                best_value = Some(value);
                best = Some((w.clone(), d.clone()));
            }
        }
        let (mut w, d) = best.expect("at least one candidate");
        let mut value = best_value.expect("at least one candidate");
        for step_den in [2i64, 8] {
            let step = m_bound.clone() / S::from_int(step_den);
            for j in 0..w.len() {
                for sign in [1i64, -1] {
                    let mut trial = w.clone();
                    trial[j] = trial[j].clone() + S::from_int(sign) * step.clone();
                    let trial_value = self.eval(&trial, &d);
                    if trial_value.total_cmp(&value) == std::cmp::Ordering::Greater {
                        value = trial_value;
                        w = trial;
                    }
                }
            }
        }
        for factor in [S::zero(), S::ratio(1, 2), S::from_int(2)] {
            let scaled = d.map(|x| x.clone() * factor.clone());
            let trial_value = self.eval(&w, &scaled);
            if trial_value.total_cmp(&value) == std::cmp::Ordering::Greater {
                value = trial_value;
            }
        }
        value
    }
}

/// Opponent mechanism tensors at a posted posterior: each opponent's rule is
/// materialized at its own information set and expected at the posterior.
fn opponent_tensors<S: Scalar>(
    problem: &AssignmentProblem<S>,
    focal: usize,
    opponent_signals: &[usize],
    posted: &StateDistribution<S>,
    profile: &[BuyerStrategy<S>],
) -> TensorProfile<S> {
    let n = problem.n();
    let mut tensors = Vec::with_capacity(n);
    let mut k = 0;
    for j in 0..n {
        if j == focal {
            tensors.push(BuyerTensors::zeros(n));
            continue;
        }
        // Opponents report signals truthfully here, so their second-stage
        // information set is (b_j, posted, b_j).
        let signal = opponent_signals[k];
        k += 1;
        let report = profile[j].stage2(problem, j, signal, posted, signal);
        let (valuations, externalities) = report.expect(posted);
        tensors.push(BuyerTensors {
            valuations,
            externalities,
            seller_costs: expected_prices(problem, j, posted),
        });
    }
    tensors
}

// --- stage-2 dominance verification ---

pub const DOMINANCE_TOL: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct DominanceViolation {
    pub buyer: usize,
    pub observed: usize,
    pub class_index: usize,
    pub opponent_profile: usize,
    pub candidate: usize,
    pub margin: f64,
}

#[derive(Debug, Clone)]
pub struct StageTwoDominanceReport {
    pub cells_checked: usize,
    pub candidates_checked: usize,
    pub min_margin: f64,
    pub violations: Vec<DominanceViolation>,
}

impl StageTwoDominanceReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks that truthful stage-2 reporting is a best response at every on-path
/// second-stage information set, under the equilibrium beliefs, against every
/// battery opponent profile and misreport candidate.
pub fn verify_stage2_dominance<S: Scalar>(
    problem: &AssignmentProblem<S>,
    battery: &Battery<S>,
) -> StageTwoDominanceReport {
    let partitions = PartitionSet::build(problem);
    let root = Rng::new(battery.seed);
    // Cell coordinates: (buyer, observed signal, class, opponent profile).
    let mut coords = Vec::new();
    for i in 0..problem.n() {
        for b_i in 0..problem.signal_size(i) {
            let partition = partitions.get(i, b_i);
            for class_idx in 0..partition.classes.len() {
                for profile_idx in 0..battery.opponent_profiles.len() {
                    coords.push((i, b_i, class_idx, profile_idx));
                }
            }
        }
    }
    let results = par_map_indexed(coords.len(), |cell_idx| {
        let (i, b_i, class_idx, profile_idx) = coords[cell_idx];
        let partition = partitions.get(i, b_i);
        let class = &partition.classes[class_idx];
        let posted = class.representative.clone();
        let beliefs = class_beliefs(problem, partition, class_idx, b_i);
        let profile = &battery.opponent_profiles[profile_idx];
        let members = class
            .members
            .iter()
            .map(|&opp| {
                let opp_signals = problem.opponent_profile(i, opp);
                let tensors = opponent_tensors(problem, i, &opp_signals, &posted, profile);
                // Within the class the true posterior equals the posted one.
                let value_tensors =
                    truthful_tensors_at(problem, i, &posted, expected_prices(problem, i, &posted));
                Member {
                    weight: beliefs.opponent_mass(opp),
                    tensors,
                    value_tensors,
                }
            })
            .collect();
        let cell = Cell {
            buyer: i,
            prices: expected_prices(problem, i, &posted),
            members,
        };
        let truthful_own = truthful_tensors_at(problem, i, &posted, cell.prices.clone());
        let truthful_value = cell.eval(&truthful_own.valuations, &truthful_own.externalities);
        let mut rng = root.fork("stage2-candidates", cell_idx as u64);
        let candidates = misreport_candidates(
            &truthful_own.valuations,
            &truthful_own.externalities,
            problem.m_bound(),
            battery.candidates_per_cell,
            &mut rng,
        );
        let mut min_margin = f64::INFINITY;
        let mut violations = Vec::new();
        for (cand_idx, (w, d)) in candidates.iter().enumerate() {
            let value = cell.eval(w, d);
            let margin = (truthful_value.clone() - value).approx_f64();
            if margin < min_margin {
                min_margin = margin;
            }
            if margin < -DOMINANCE_TOL {
                violations.push(DominanceViolation {
                    buyer: i,
                    observed: b_i,
                    class_index: class_idx,
                    opponent_profile: profile_idx,
                    candidate: cand_idx,
                    margin,
                });
            }
        }
        (min_margin, violations, candidates.len())
    });
    let mut report = StageTwoDominanceReport {
        cells_checked: coords.len(),
        candidates_checked: 0,
        min_margin: f64::INFINITY,
        violations: Vec::new(),
    };
    for (min_margin, violations, count) in results {
        report.min_margin = report.min_margin.min(min_margin);
        report.violations.extend(violations);
        report.candidates_checked += count;
    }
    report
}

// --- stage-1 honesty verification ---

#[derive(Debug, Clone)]
pub struct HonestyCell {
    pub buyer: usize,
    pub observed: usize,
    pub report: usize,
    pub opponent_profile: usize,
    pub truthful_value: f64,
    pub best_deviation_value: f64,
    /// Truthful expected payoff minus the best coordinated deviation found.
    pub empirical_margin: f64,
    /// `reward gap - deviation bound`: the proof-side sufficient margin.
    pub analytic_margin: f64,
}

#[derive(Debug, Clone)]
pub struct StageOneHonestyReport {
    pub cells: Vec<HonestyCell>,
    pub min_empirical_margin: f64,
    pub min_analytic_margin: f64,
    pub violations: usize,
}

impl StageOneHonestyReport {
    pub fn pass(&self) -> bool {
        self.violations == 0
    }
}

/// Checks that honest stage-1 reporting beats every coordinated deviation
/// (misreport the signal, then optimize the stage-2 report per posted
/// posterior) against each battery opponent profile. Opponents report signals
/// truthfully; their stage-2 tables are arbitrary battery choices.
pub fn verify_stage1_honesty<S: Scalar>(
    problem: &AssignmentProblem<S>,
    rewards: &RewardSystem<S>,
    battery: &Battery<S>,
) -> StageOneHonestyReport {
    let partitions = PartitionSet::build(problem);
    let root = Rng::new(battery.seed);
    let mut coords = Vec::new();
    for i in 0..problem.n() {
        for b_i in 0..problem.signal_size(i) {
            for r_i in 0..problem.signal_size(i) {
                if r_i == b_i {
                    continue;
                }
                for profile_idx in 0..battery.opponent_profiles.len() {
                    coords.push((i, b_i, r_i, profile_idx));
                }
            }
        }
    }
    let cells = par_map_indexed(coords.len(), |cell_idx| {
        let (i, b_i, r_i, profile_idx) = coords[cell_idx];
        let profile = &battery.opponent_profiles[profile_idx];
        let marginal = signal_marginal(problem, i, b_i).expect("validated indices");

        // Truthful expected payoff: per opponent realization, posted = true
        // posterior, buyer i truthful in both stages.
        let mut truthful_value = S::zero();
        for (opp, mass) in marginal.iter().enumerate() {
            let flat = problem.compose_profile(i, b_i, opp);
            let posted = posterior_flat(problem, flat);
            let opp_signals = problem.opponent_profile(i, opp);
            let tensors = opponent_tensors(problem, i, &opp_signals, &posted, profile);
            let prices = expected_prices(problem, i, &posted);
            let own = truthful_tensors_at(problem, i, &posted, prices.clone());
            let cell = Cell {
                buyer: i,
                prices,
                members: vec![Member {
                    weight: mass.clone(),
                    tensors,
                    value_tensors: own.clone(),
                }],
            };
            truthful_value = truthful_value + cell.eval(&own.valuations, &own.externalities);
            let reward = rewards.reward(i, flat).clone();
            truthful_value = truthful_value + mass.clone() * reward;
        }

        // Deviation: report r_i, then per posted-posterior class pick the
        // best stage-2 report from the candidate grid plus local search.
        let partition = partitions.get(i, r_i);
        let mut deviation_value = S::zero();
        for (class_idx, class) in partition.classes.iter().enumerate() {
            let posted = class.representative.clone();
            let prices = expected_prices(problem, i, &posted);
            let members: Vec<Member<S>> = class
                .members
                .iter()
                .map(|&opp| {
                    let opp_signals = problem.opponent_profile(i, opp);
                    let tensors = opponent_tensors(problem, i, &opp_signals, &posted, profile);
                    let true_posterior =
                        posterior_flat(problem, problem.compose_profile(i, b_i, opp));
                    Member {
                        weight: marginal[opp].clone(),
                        tensors,
                        value_tensors: truthful_tensors_at(
                            problem,
                            i,
                            &true_posterior,
                            prices.clone(),
                        ),
                    }
                })
                .collect();
            let cell = Cell {
                buyer: i,
                prices: prices.clone(),
                members,
            };
            let own_at_posted = truthful_tensors_at(problem, i, &posted, prices);
            let mut rng = root
                .fork("stage1-candidates", cell_idx as u64)
                .fork("class", class_idx as u64);
            let mut candidates = misreport_candidates(
                &own_at_posted.valuations,
                &own_at_posted.externalities,
                problem.m_bound(),
                battery.candidates_per_cell,
                &mut rng,
            );
            // The truthful-at-posted report is the natural first guess.
            candidates.insert(
                0,
                (
                    own_at_posted.valuations.clone(),
                    own_at_posted.externalities.clone(),
                ),
            );
            deviation_value = deviation_value + cell.maximize(&candidates, problem.m_bound());
        }
        for (opp, mass) in marginal.iter().enumerate() {
            let lied_flat = problem.compose_profile(i, r_i, opp);
            deviation_value = deviation_value + mass.clone() * rewards.reward(i, lied_flat).clone();
        }

        // Analytic sufficient margin: reward gap minus the Lipschitz bound.
        let mut reward_gap = S::zero();
        for (opp, mass) in marginal.iter().enumerate() {
            let honest = rewards
                .reward(i, problem.compose_profile(i, b_i, opp))
                .clone();
            let lied = rewards
                .reward(i, problem.compose_profile(i, r_i, opp))
                .clone();
            reward_gap = reward_gap + mass.clone() * (honest - lied);
        }
        let bound = deviation_bound(problem, i, b_i, r_i).expect("validated indices");
        let analytic_margin = (reward_gap - bound).approx_f64();

        HonestyCell {
            buyer: i,
            observed: b_i,
            report: r_i,
            opponent_profile: profile_idx,
            truthful_value: truthful_value.approx_f64(),
            best_deviation_value: deviation_value.approx_f64(),
            empirical_margin: (truthful_value - deviation_value).approx_f64(),
            analytic_margin,
        }
    });
    let mut min_empirical_margin = f64::INFINITY;
    let mut min_analytic_margin = f64::INFINITY;
    let mut violations = 0;
    for cell in &cells {
        min_empirical_margin = min_empirical_margin.min(cell.empirical_margin);
        min_analytic_margin = min_analytic_margin.min(cell.analytic_margin);
        if cell.empirical_margin <= 0.0 {
            violations += 1;
        }
    }
    StageOneHonestyReport {
        cells,
        min_empirical_margin,
        min_analytic_margin,
        violations,
    }
}
