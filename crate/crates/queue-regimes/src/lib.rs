//! Strategic queueing regimes for the observable M/M/1 system with linear
//! waiting costs: state-space exploration and universal-optimality checks,
//! the socially optimal admission threshold via gambler's-ruin solves,
//! equilibrium verification for the tagged customer's stopping problem, and
//! seeded Monte Carlo simulation with a coupled marginal-surplus estimator.

pub mod analysis;
pub mod equilibrium;
pub mod model;
pub mod optimum;
pub mod regimes;
pub mod sim;

pub use analysis::{
    ancestor_max_count, build_state_graph, check_universal_optimality, is_maximal, to_dot,
    AnalysisError, MaximalityVerdict, OptimalityReport, OptimalityVerdict, StateGraph, Witness,
    DEFAULT_NODE_CAP, DEFAULT_N_MAX,
};
pub use equilibrium::{
    build_tagged_chain, optimal_stopping_value, policy_value, verify_mpe, EqVerdict,
    EquilibriumError, EquilibriumReport, NeverRenege, Profile, RandomProfile, TaggedChain,
    TaggedState, ThresholdProfile,
};
pub use model::{
    ParamError, Params, Position, QueueState, Regime, RegimeError, RenegeSet, Tracked,
};
pub use optimum::{
    individual_threshold, naor_threshold, ruin_quantities, surplus, surplus_curve,
    threshold_welfare, OptimumError, Threshold,
};
pub use regimes::{
    all_builtins, builtin, fcfs, lcfs_np, lcfs_pr, load_table, priority_slots, score_regime,
    TableError, TableRegime, BUILTIN_NAMES,
};
pub use sim::{
    coupled_dn_estimate, coupled_dn_estimate_seq, run_sim, run_sim_seq, CoupledEstimate,
    DurationMode, SimConfig, SimError, SimStats,
};
