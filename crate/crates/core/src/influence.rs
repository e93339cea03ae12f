//! Monte Carlo estimation of the empirical influence function.
//!
//! Replications are run under the uniform (empirical) input distributions.
//! The influence of data point `j` of model `i` is the sample covariance,
//! with divisor `R1`, between the output and the centred occurrence count
//! `n_i * c_ij - T_i` of that point among the model's `T_i` draws.

use serde::Serialize;

use crate::data::{validate, InputDataset, PerformanceModel};
use crate::error::{Error, Result};
use crate::par;
use crate::sampling::{evaluate_checked, ReplicationDraw, StreamKey, WeightedSampler};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfluenceEstimate {
    /// Per model, the estimated influence at each observation.
    pub g_hats: Vec<Vec<f64>>,
    /// Mean output under the empirical distributions.
    pub z_hat: f64,
    /// Output variance, divisor `R1 - 1`.
    pub sigma2_hat: f64,
    pub r1: usize,
    pub run_lengths: Vec<usize>,
}

struct Replication {
    output: f64,
    indices: Vec<Vec<u32>>,
}

/// Step 1: `R1` replications under uniform weights, stream `key / ("rep", r)`.
pub fn estimate_influence(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    r1: usize,
    key: &StreamKey,
) -> Result<InfluenceEstimate> {
    validate(dataset, model)?;
    if r1 < 2 {
        return Err(Error::InvalidArgument(format!(
            "R1 = {r1} must be at least 2"
        )));
    }
    let sizes = dataset.sizes();
    let run_lengths = model.run_lengths().to_vec();
    let sampler = WeightedSampler::uniform(&sizes);

    let reps: Vec<Replication> = par::map_indexed(r1, |r| {
        let mut rng = key.child("rep", r as u64).stream();
        let mut draw = ReplicationDraw::with_run_lengths(&run_lengths);
        sampler.draw_into(&run_lengths, &mut rng, &mut draw);
        let output = evaluate_checked(model, dataset, &draw, r)?;
        Ok(Replication {
            output,
            indices: draw.indices,
        })
    })
    .into_iter()
    .collect::<Result<_>>()?;

    let r1f = r1 as f64;
    let z_hat = reps.iter().map(|rep| rep.output).sum::<f64>() / r1f;
    let centred_sum: f64 = reps.iter().map(|rep| rep.output - z_hat).sum();
    let sigma2_hat = reps
        .iter()
        .map(|rep| (rep.output - z_hat).powi(2))
        .sum::<f64>()
        / (r1f - 1.0);

    // sum_r (h_r - Z) * c_ijr, accumulated in replication order
    let mut weighted_counts: Vec<Vec<f64>> = sizes.iter().map(|&n| vec![0.0; n]).collect();
    for rep in &reps {
        let dev = rep.output - z_hat;
        for (acc, idx) in weighted_counts.iter_mut().zip(&rep.indices) {
            for &j in idx {
                acc[j as usize] += dev;
            }
        }
    }

    let g_hats = weighted_counts
        .into_iter()
        .zip(sizes.iter().zip(&run_lengths))
        .map(|(acc, (&n, &t))| {
            let nf = n as f64;
            let tf = t as f64;
            acc.into_iter()
                .map(|s| (nf * s - tf * centred_sum) / r1f)
                .collect()
        })
        .collect();

    Ok(InfluenceEstimate {
        g_hats,
        z_hat,
        sigma2_hat,
        r1,
        run_lengths,
    })
}

/// Input-induced variance estimate with bias correction and positive part:
/// `max{ sum_i (1/n_i) [ sum_j G_ij^2 / n_i - n_i T_i sigma^2 / R1 ], 0 }`.
pub fn input_variance(est: &InfluenceEstimate, dataset: &InputDataset) -> f64 {
    let r1 = est.r1 as f64;
    let total: f64 = est
        .g_hats
        .iter()
        .zip(dataset.sizes())
        .zip(&est.run_lengths)
        .map(|((g, n), &t)| {
            let n = n as f64;
            let second_moment = g.iter().map(|x| x * x).sum::<f64>() / n;
            (second_moment - n * t as f64 * est.sigma2_hat / r1) / n
        })
        .sum();
    total.max(0.0)
}
