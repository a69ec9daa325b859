//! Tabular robust reinforcement learning with alpha-reward-preserving attacks.
//!
//! The crate covers finite MDPs and gridworlds, nominal and robust value
//! iteration, an entropic optimal-transport adversary, preserving robust value
//! iteration over per-pair radii, magnitude sampling for adaptive adversarial
//! training, structural property checks, and scenario I/O.

// negated comparisons are how parameter checks reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod export;
pub mod magnitude;
pub mod mdp;
pub mod preserving;
pub mod properties;
pub mod runner;
pub mod scenario;
pub mod sinkhorn;
pub mod solvers;
pub mod tables;
pub mod training;

pub use error::{Error, Result};
pub use magnitude::{
    expected_q_over_magnitudes, find_eta_star, sample_magnitude, MagnitudeGrid, SamplerConfig,
};
pub use mdp::{
    build_gridworld, Cell, GoalCell, GridObservation, GridWorld, GridWorldSpec, Move, TabularMdp,
};
pub use preserving::{
    compute_thresholds, preserving_rvi, PreservationThresholds, PreservingConfig, RadiusField,
    StepSchedule,
};
pub use properties::{
    check_preference_condition, check_structure_preservation, DestroyAdversary, PreferenceReport,
    Reversal, StructureReport,
};
pub use runner::{run_scenario, RunOptions, RunSummary};
pub use scenario::{load_scenario, ScenarioConfig, SolverKind};
pub use sinkhorn::{
    make_rvi_adversary, sinkhorn_marginal, sinkhorn_worst_case, CostMatrix, RadiusAdversary,
    RadiusMap, SinkhornAdversary, SinkhornFamily, SinkhornParams, TransportPlan,
};
pub use solvers::{
    apply_robust_operator, robust_bellman_backup, robust_value_iteration, value_iteration,
    Adversary, NominalAdversary, SolverOptions, SolverReport,
};
pub use tables::{greedy_policy, greedy_rollout, GreedyPolicy, QTable, ValueTable};
