//! Variance-optimal survey mechanisms for buying verifiable data from
//! strategic agents under an expected budget.
//!
//! The pipeline: a cost prior ([`cost_model`]) is mapped to virtual costs,
//! an optimal allocation rule is computed in optimization space
//! ([`moment_design`], [`regression_design`]), truthful payments and a posted
//! menu are derived ([`mechanism`]), and the result is certified as a
//! zero-sum equilibrium ([`game_verify`]) and checked by simulation
//! ([`simulate`]).

pub mod artifact;
pub mod cost_model;
pub mod error;
pub mod game_verify;
pub mod mechanism;
pub mod moment_design;
pub mod par;
pub mod regression_design;
pub mod simulate;

pub use artifact::{Check, DesignArtifact, Space, VerificationReport};
pub use cost_model::{
    check_regular, discretize, virtual_cost_continuous, virtual_costs_discrete,
    ContinuousCostDistribution, CostPrior, DiscreteCostDistribution, VirtualCostDistribution,
};
pub use error::{Result, SurveyError};
pub use game_verify::{
    best_response_adversary, best_response_alloc, brute_force_minimax, variance,
    verify_equilibrium, worst_case_variance, EquilibriumCertificate,
};
pub use mechanism::{
    build_menu, check_ic_ir, check_ic_ir_with_tol, design_mechanism, expected_budget, payment_continuous,
    payments_discrete, IcIrReport, MechanismDesign, Menu, MenuItem, PaymentRule, Violation,
};
pub use moment_design::{
    b_fun, design_moment_continuous, design_moment_discrete, design_moment_multi, q_fun, r_fun, AllocationRule,
    ContinuousDesign, DesignCase, MomentDesign,
};
pub use regression_design::{
    adversary_knapsack, brute_force_regression, design_regression, regression_objective,
    KnapsackAdversary, RegressionDesign, RegressionInstance,
};
pub use simulate::{
    ht_estimate, ht_estimate_multi, monte_carlo, run_survey, wls_estimate, DataModel,
    Observation, RepRecord, SimulationConfig, SimulationReport, SurveyPlan, SurveySample,
};
