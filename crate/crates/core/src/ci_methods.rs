//! Confidence-interval constructions.
//!
//! The empirical-likelihood variants share one pipeline: influence estimation
//! under the empirical distributions, the weight optimization on the
//! estimated influence, and two independent batches of replications under the
//! minimizing and maximizing weights. BEL, EEL and FEL are pure functions of
//! the resulting [`ElPipelineState`], so intervals computed from the same
//! state are directly comparable (and nested). The linearized variant needs
//! only the first two stages ([`ElCore`]).

use rand::Rng;
use serde::Serialize;

use crate::data::{
    validate, ConfidenceInterval, Diagnostics, ElSolution, InputDataset, Method, PerformanceModel,
};
use crate::el_solver::solve_weights;
use crate::error::{Error, Result};
use crate::influence::{estimate_influence, input_variance, InfluenceEstimate};
use crate::par;
use crate::sampling::{mean_and_variance, simulate_with, StreamKey, WeightedSampler};
use crate::stats::two_sided_z;

/// Influence estimate, optimal weights and input-variance estimate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElCore {
    pub influence: InfluenceEstimate,
    pub solution: ElSolution,
    pub sigma_i2: f64,
    pub alpha: f64,
}

/// Mean and variance (divisor `R2 - 1`) of one batch of replications.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BatchStats {
    pub mean: f64,
    pub variance: f64,
    pub r2: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElPipelineState {
    pub core: ElCore,
    pub step3_min: BatchStats,
    pub step3_max: BatchStats,
}

/// Key for the influence stage of a pipeline with `R1` replications.
pub fn influence_key(dataset_key: &StreamKey, r1: usize) -> StreamKey {
    dataset_key.child("el", r1 as u64).child("step1", 0)
}

/// Key for one side (0 = min, 1 = max) of the evaluation batches.
pub fn batch_key(dataset_key: &StreamKey, r1: usize, r2: usize, side: u64) -> StreamKey {
    dataset_key
        .child("el", r1 as u64)
        .child("step3_r2", r2 as u64)
        .child("side", side)
}

/// Influence estimation and weight optimization.
pub fn run_core(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    alpha: f64,
    r1: usize,
    dataset_key: &StreamKey,
) -> Result<ElCore> {
    let influence = estimate_influence(model, dataset, r1, &influence_key(dataset_key, r1))?;
    let solution = solve_weights(&influence.g_hats, alpha)?;
    let sigma_i2 = input_variance(&influence, dataset);
    Ok(ElCore {
        influence,
        solution,
        sigma_i2,
        alpha,
    })
}

/// Runs the two evaluation batches of `R2` replications on top of `core`.
pub fn run_batches(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    core: &ElCore,
    r2: usize,
    dataset_key: &StreamKey,
) -> Result<ElPipelineState> {
    if r2 < 2 {
        return Err(Error::InvalidArgument(format!(
            "R2 = {r2} must be at least 2"
        )));
    }
    let r1 = core.influence.r1;
    let batch = |weights, side| -> Result<BatchStats> {
        let sampler = WeightedSampler::new(weights)?;
        let outputs = simulate_with(
            model,
            dataset,
            &sampler,
            r2,
            &batch_key(dataset_key, r1, r2, side),
        )?;
        let (mean, variance) = mean_and_variance(&outputs);
        Ok(BatchStats { mean, variance, r2 })
    };
    let step3_min = batch(&core.solution.w_min, 0)?;
    let step3_max = batch(&core.solution.w_max, 1)?;
    Ok(ElPipelineState {
        core: core.clone(),
        step3_min,
        step3_max,
    })
}

pub fn run_pipeline_keyed(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    alpha: f64,
    r1: usize,
    r2: usize,
    dataset_key: &StreamKey,
) -> Result<ElPipelineState> {
    validate(dataset, model)?;
    if r2 < 2 {
        return Err(Error::InvalidArgument(format!(
            "R2 = {r2} must be at least 2"
        )));
    }
    let core = run_core(model, dataset, alpha, r1, dataset_key)?;
    run_batches(model, dataset, &core, r2, dataset_key)
}

pub fn run_pipeline(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    alpha: f64,
    r1: usize,
    r2: usize,
    seed: u64,
) -> Result<ElPipelineState> {
    run_pipeline_keyed(model, dataset, alpha, r1, r2, &StreamKey::new(seed))
}

fn el_diagnostics(state: &ElPipelineState) -> Diagnostics {
    let core = &state.core;
    Diagnostics {
        z_hat: Some(core.influence.z_hat),
        sigma_hat: Some(core.influence.sigma2_hat.sqrt()),
        sigma_i_hat: Some(core.sigma_i2.sqrt()),
        r1: Some(core.influence.r1),
        r2: Some(state.step3_min.r2),
        ..Diagnostics::default()
    }
}

/// `[Z_min, Z_max]`.
pub fn bel(state: &ElPipelineState) -> ConfidenceInterval {
    ConfidenceInterval::from_raw(
        state.step3_min.mean,
        state.step3_max.mean,
        1.0 - state.core.alpha,
        Method::Bel,
        el_diagnostics(state),
    )
}

/// Endpoints widened by `z * sigma / sqrt(R2)` of their own batch.
pub fn eel(state: &ElPipelineState, alpha: f64) -> Result<ConfidenceInterval> {
    let z = two_sided_z(alpha)?;
    let (lo, hi) = (&state.step3_min, &state.step3_max);
    let lower = lo.mean - z * (lo.variance / lo.r2 as f64).sqrt();
    let upper = hi.mean + z * (hi.variance / hi.r2 as f64).sqrt();
    Ok(ConfidenceInterval::from_raw(
        lower,
        upper,
        1.0 - alpha,
        Method::Eel,
        el_diagnostics(state),
    ))
}

/// Endpoints widened by `z * (sqrt(sigma_I^2 + sigma^2 / R2) - sigma_I)`, which
/// accounts for the evaluation noise already absorbed by the input-variance
/// part of the interval width.
pub fn fel(state: &ElPipelineState, alpha: f64) -> Result<ConfidenceInterval> {
    let z = two_sided_z(alpha)?;
    let s_i2 = state.core.sigma_i2;
    let s_i = s_i2.sqrt();
    let adjust = |b: &BatchStats| z * ((s_i2 + b.variance / b.r2 as f64).sqrt() - s_i);
    let lower = state.step3_min.mean - adjust(&state.step3_min);
    let upper = state.step3_max.mean + adjust(&state.step3_max);
    Ok(ConfidenceInterval::from_raw(
        lower,
        upper,
        1.0 - alpha,
        Method::Fel,
        el_diagnostics(state),
    ))
}

/// `Z + sum_ij G_ij w_ij` at the minimizing and maximizing weights: the
/// evaluation batches replaced by the linear approximation.
pub fn linearized_el(core: &ElCore) -> ConfidenceInterval {
    let z_hat = core.influence.z_hat;
    let diagnostics = Diagnostics {
        z_hat: Some(z_hat),
        sigma_hat: Some(core.influence.sigma2_hat.sqrt()),
        sigma_i_hat: Some(core.sigma_i2.sqrt()),
        r1: Some(core.influence.r1),
        ..Diagnostics::default()
    };
    ConfidenceInterval::from_raw(
        z_hat + core.solution.obj_min,
        z_hat + core.solution.obj_max,
        1.0 - core.alpha,
        Method::Lel,
        diagnostics,
    )
}

pub const RANK_RULE: &str = "nearest rank round(q*(B+1)), clamped to [1, B]";

/// 1-based order-statistic ranks for the percentile bootstrap.
pub fn bootstrap_ranks(b: usize, alpha: f64) -> Result<(usize, usize)> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} outside (0, 1)"
        )));
    }
    let ranks = |b: usize| {
        let rank = |q: f64| ((q * (b + 1) as f64).round() as usize).clamp(1, b.max(1));
        (rank(alpha / 2.0), rank(1.0 - alpha / 2.0))
    };
    let usable = |b: usize| {
        let (lo, hi) = ranks(b);
        b >= 3 && lo < hi
    };
    if !usable(b) {
        let min_b = (3..)
            .find(|&c| usable(c))
            .expect("large enough B separates the ranks");
        return Err(Error::BootstrapTooSmall { b, alpha, min_b });
    }
    Ok(ranks(b))
}

/// Percentile bootstrap: `B` resamples of every input model, each evaluated
/// by the mean of `R_b` replications.
pub fn percentile_bootstrap(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    alpha: f64,
    b: usize,
    rb: usize,
    key: &StreamKey,
) -> Result<ConfidenceInterval> {
    validate(dataset, model)?;
    let (k_lo, k_hi) = bootstrap_ranks(b, alpha)?;
    if rb == 0 {
        return Err(Error::InvalidArgument("R_b must be at least 1".into()));
    }
    let sizes = dataset.sizes();

    let means: Vec<f64> = par::map_coarse(b, |l| {
        // a resample with replacement is the empirical distribution with
        // count weights on the original support
        let mut rng = key.child("resample", l as u64).stream();
        let counts: Vec<Vec<f64>> = sizes
            .iter()
            .map(|&n| {
                let mut c = vec![0.0; n];
                for _ in 0..n {
                    c[rng.random_range(0..n)] += 1.0;
                }
                c
            })
            .collect();
        let sampler = WeightedSampler::from_slices(&counts)?;
        let outputs = simulate_with(model, dataset, &sampler, rb, &key.child("boot", l as u64))?;
        Ok(outputs.iter().sum::<f64>() / rb as f64)
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let mut sorted = means;
    sorted.sort_by(f64::total_cmp);
    let diagnostics = Diagnostics {
        b: Some(b),
        rb: Some(rb),
        ranks: Some((k_lo, k_hi)),
        rank_rule: Some(RANK_RULE),
        ..Diagnostics::default()
    };
    Ok(ConfidenceInterval::from_raw(
        sorted[k_lo - 1],
        sorted[k_hi - 1],
        1.0 - alpha,
        Method::Boot,
        diagnostics,
    ))
}

/// Normal-approximation interval `Z +- z sqrt(sigma^2 / R_d + sigma_I^2)` from a
/// single influence-estimation pass of `R_d` replications. The input-variance
/// term is floored at zero.
pub fn delta_method(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    alpha: f64,
    rd: usize,
    key: &StreamKey,
) -> Result<ConfidenceInterval> {
    let z = two_sided_z(alpha)?;
    if rd < 2 {
        return Err(Error::InvalidArgument(format!(
            "R_d = {rd} must be at least 2"
        )));
    }
    let est = estimate_influence(model, dataset, rd, key)?;
    let sigma_i2 = input_variance(&est, dataset);
    let half = z * (est.sigma2_hat / rd as f64 + sigma_i2).sqrt();
    let diagnostics = Diagnostics {
        z_hat: Some(est.z_hat),
        sigma_hat: Some(est.sigma2_hat.sqrt()),
        sigma_i_hat: Some(sigma_i2.sqrt()),
        rd: Some(rd),
        ..Diagnostics::default()
    };
    Ok(ConfidenceInterval::from_raw(
        est.z_hat - half,
        est.z_hat + half,
        1.0 - alpha,
        Method::Delta,
        diagnostics,
    ))
}
