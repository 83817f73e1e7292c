//! Laboratory for a two-stage assignment mechanism with interdependent
//! valuations and externalities.
//!
//! The crate computes outcome-efficient assignments under posterior beliefs,
//! VCG transfers with their incentive and rationality guarantees, calibrated
//! first-stage scoring-rule rewards, and simulates the resulting two-stage
//! game. A replica-economy module studies how the mechanism's budget deficit
//! behaves as the market grows.
//!
//! Every computation is generic over the [`num::Scalar`] backend: `f64` for
//! speed, [`num_rational::BigRational`] for exact arithmetic and
//! deterministic tie-breaking.

#![allow(clippy::needless_range_loop)]

pub mod game;
pub mod model;
pub mod num;
pub mod parallel;
pub mod prob;
pub mod qap;
pub mod replica;
pub mod rng;
pub mod scenario;
pub mod scoring;
pub mod testutil;
pub mod vcg;

pub use game::{
    budget_report, play, verify_stage1_honesty, verify_stage2_dominance, Battery, BudgetReport,
    BuyerStrategy, MechanismRun, Strategy,
};
pub use model::{
    payoff_g, validate_problem, AssignmentProblem, BuyerTensors, ExtTable, Matching, MechError,
    Prior, TensorProfile, ValidationReport,
};
pub use num::Scalar;
pub use prob::{
    equilibrium_beliefs, expect_tensors, posterior, posterior_partition, signal_marginal,
    BeliefSystem, PosteriorPartition, StateDistribution,
};
pub use qap::{enumerate_matchings, solve_qap, solve_qap_excluding, QapSolution};
pub use replica::{IcThresholdReport, ReplicaFamily};
pub use scenario::{load_scenario, parse_scenario, Scenario, ScenarioError};
pub use scoring::{
    calibrate_delta, deviation_bound, incentive_gap, spherical_reward, Calibration, RewardSystem,
};
pub use vcg::{
    efficient_outcome, stage2_settle, vcg_transfer, vcg_transfers, Settlement, StageTwoReport,
    VcgResult,
};
