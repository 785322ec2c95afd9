//! Doubly-nonparametric bandits: reward learning over a pair of
//! infinite-dimensional (here truncated) function spaces linked by a known
//! linear evaluation map.
//!
//! The crate provides the full experimental stack: spectral representations
//! ([`spectral`]), reward/policy environments and query oracles ([`env`]),
//! passive query design ([`design`]), ridge estimation and plug-in policy
//! selection ([`estimate`]), exact risk decompositions and theoretical rates
//! ([`risk`]), sequential baselines ([`baselines`]), a kernel multi-armed
//! bandit reduction ([`kmab`]), and batch experiment drivers
//! ([`experiments`]).

pub mod baselines;
pub mod config;
pub mod design;
pub mod env;
pub mod error;
pub mod estimate;
pub mod experiments;
pub mod kmab;
pub mod risk;
pub mod spectral;

pub use baselines::{
    explore_then_commit, gp_ucb_run, passive_explorer, random_query_baseline, RegretTrace,
};
pub use config::{parse_seeds, ExperimentConfig, ExperimentKind};
pub use design::{
    choose_params, design_queries, fit_decay_exponent, match_to_policy_set, DesignParams,
    MatchOutcome, QueryPlan,
};
pub use env::{
    evaluate, excess_risk, optimal_policy, oracle_query, sample_policy_on_sphere, sample_reward,
    Oracle, Policy, PolicySet, RewardFunction,
};
pub use error::{Error, Result};
pub use experiments::{
    bounds_table, compare_baselines, dim_sweep, kmab_regret, log_log_fit, run_experiment,
    scaling_experiment, ExperimentSummary, SlopeFit,
};
pub use estimate::{plugin_policy, ridge_estimate, run_pipeline, RidgeEstimate, LAMBDA_FLOOR};
pub use kmab::{
    build_cover, build_cover_with_budget, cover_suboptimality_check, embed_problem, kernel_eval,
    kmab_experiment, lipschitz_constant, probe_points, refine_cover, synth_function, Cover,
    EmbeddedInstance, KernelFamily, KernelSpec, KmabReport, SynthFunction,
};
pub use risk::{
    exact_risk_decomposition, gp_ucb_rate, information_gain, power_law_rate, rate_exponent,
    risk_bound_general, risk_bound_unit_ball, InformationGain, RateCase, RiskReport,
};
pub use spectral::{
    adjoint, align_bases, boundedness_value, build_power_law_spectrum, whiten, Directions,
    LinearMap, Spectrum, WhitenedDecomposition,
};
