//! Confidence intervals for simulation outputs under input uncertainty.
//!
//! Input models are known only through finite samples. The empirical
//! likelihood methods reweight those samples within a divergence ball,
//! computing the extreme weightings from an estimated influence function and
//! then simulating under them. Percentile bootstrap and delta-method
//! baselines, the queue and activity-network models used in coverage studies,
//! and the experiment harness live here as well.
//!
//! Randomness is keyed by [`sampling::StreamKey`], so every result is a pure
//! function of its inputs and master seed, regardless of thread count. The
//! `parallel` feature (on by default) runs replications on the rayon pool;
//! without it everything runs sequentially with identical output.

pub mod ci_methods;
pub mod data;
pub mod el_solver;
pub mod error;
pub mod experiments;
pub mod influence;
pub mod io;
pub mod models;
pub mod par;
pub mod sampling;
pub mod stats;

pub use ci_methods::{
    bel, delta_method, eel, fel, linearized_el, percentile_bootstrap, run_pipeline,
    run_pipeline_keyed, ElPipelineState,
};
pub use data::{
    validate, BudgetPlan, ConfidenceInterval, ElSolution, FnModel, InputDataset, Inputs, Method,
    PerformanceModel, ProbabilityWeights, Sample,
};
pub use el_solver::{solve_weights, SolverConfig, UncertaintySetSpec};
pub use error::{Error, Result, SolverError};
pub use influence::{estimate_influence, input_variance, InfluenceEstimate};
pub use sampling::StreamKey;
