//! Reproducible random streams and weighted resampling from the data support.
//!
//! Every unit of random work (a replication, a bootstrap resample, a dataset
//! draw) gets its own stream derived from a [`StreamKey`]. Streams are never
//! shared between work items, which makes results independent of how work is
//! scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{validate, InputDataset, Inputs, PerformanceModel, ProbabilityWeights};
use crate::error::{Error, Result};
use crate::par;

/// Generator behind every stream.
pub type SimRng = ChaCha8Rng;

/// Master seed plus an ordered path of `(tag, index)` labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StreamKey {
    master_seed: u64,
    labels: Vec<(String, u64)>,
    digest: u64,
}

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325u64, |h, &b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

impl StreamKey {
    pub fn new(master_seed: u64) -> Self {
        Self {
            master_seed,
            labels: Vec::new(),
            digest: splitmix64(master_seed),
        }
    }

    pub fn from_labels(master_seed: u64, labels: &[(&str, u64)]) -> Self {
        labels
            .iter()
            .fold(Self::new(master_seed), |k, (tag, idx)| k.child(tag, *idx))
    }

    /// Key one level below `self`.
    pub fn child(&self, tag: &str, index: u64) -> Self {
        let mut labels = self.labels.clone();
        labels.push((tag.to_owned(), index));
        let digest = splitmix64(splitmix64(self.digest ^ fnv1a(tag.as_bytes())) ^ index);
        Self {
            master_seed: self.master_seed,
            labels,
            digest,
        }
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn labels(&self) -> &[(String, u64)] {
        &self.labels
    }

    pub fn digest(&self) -> u64 {
        self.digest
    }

    /// The random stream for this key.
    pub fn stream(&self) -> SimRng {
        derive_stream(self)
    }
}

/// Deterministic generator for `key`; distinct label paths give unrelated seeds.
pub fn derive_stream(key: &StreamKey) -> SimRng {
    let mut seed = [0u8; 32];
    let mut state = key.digest;
    for chunk in seed.chunks_exact_mut(8) {
        state = splitmix64(state);
        chunk.copy_from_slice(&state.to_le_bytes());
    }
    SimRng::from_seed(seed)
}

/// Per model, `T_i` drawn indices (0-based) into sample `i`.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ReplicationDraw {
    pub indices: Vec<Vec<u32>>,
}

impl ReplicationDraw {
    pub fn with_run_lengths(run_lengths: &[usize]) -> Self {
        Self {
            indices: run_lengths.iter().map(|&t| Vec::with_capacity(t)).collect(),
        }
    }
}

/// Index `j` with `cum[j-1] <= u * total < cum[j]`.
#[inline]
pub fn inverse_cdf(cumulative: &[f64], u: f64) -> usize {
    let total = *cumulative.last().expect("non-empty cumulative weights");
    let target = u * total;
    cumulative
        .partition_point(|&c| c <= target)
        .min(cumulative.len() - 1)
}

/// Cumulative weight tables for inverse-CDF sampling, one per input model.
#[derive(Debug, Clone)]
pub struct WeightedSampler {
    cumulative: Vec<Vec<f64>>,
}

impl WeightedSampler {
    pub fn new(weights: &ProbabilityWeights) -> Result<Self> {
        Self::from_slices(weights.as_slices())
    }

    /// Accepts unnormalised non-negative weights (for instance bootstrap counts).
    pub fn from_slices(weights: &[Vec<f64>]) -> Result<Self> {
        let cumulative = weights
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut acc = 0.0;
                let cum: Vec<f64> = w
                    .iter()
                    .map(|&x| {
                        acc += x;
                        acc
                    })
                    .collect();
                if !(acc > 0.0 && acc.is_finite()) {
                    return Err(Error::InvalidWeights(format!(
                        "model {i}: degenerate weight vector (total {acc})"
                    )));
                }
                Ok(cum)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { cumulative })
    }

    pub fn uniform(sizes: &[usize]) -> Self {
        Self::new(&ProbabilityWeights::uniform(sizes)).expect("uniform weights are valid")
    }

    pub fn num_models(&self) -> usize {
        self.cumulative.len()
    }

    #[inline]
    pub fn draw_index<R: Rng + ?Sized>(&self, model: usize, rng: &mut R) -> u32 {
        inverse_cdf(&self.cumulative[model], rng.random::<f64>()) as u32
    }

    /// Fills `draw` with `T_i` i.i.d. indices per model, models in order.
    pub fn draw_into<R: Rng + ?Sized>(
        &self,
        run_lengths: &[usize],
        rng: &mut R,
        draw: &mut ReplicationDraw,
    ) {
        draw.indices.resize_with(run_lengths.len(), Vec::new);
        for (i, (&t, idx)) in run_lengths.iter().zip(draw.indices.iter_mut()).enumerate() {
            idx.clear();
            idx.extend((0..t).map(|_| self.draw_index(i, rng)));
        }
    }
}

/// One replication's indices drawn from `weights`.
pub fn draw_replication<R: Rng + ?Sized>(
    weights: &ProbabilityWeights,
    run_lengths: &[usize],
    rng: &mut R,
) -> Result<ReplicationDraw> {
    if run_lengths.len() != weights.num_models() {
        return Err(Error::ArityMismatch {
            expected: run_lengths.len(),
            found: weights.num_models(),
        });
    }
    let sampler = WeightedSampler::new(weights)?;
    let mut draw = ReplicationDraw::with_run_lengths(run_lengths);
    sampler.draw_into(run_lengths, rng, &mut draw);
    Ok(draw)
}

/// Evaluates `h` on a drawn replication, mapping model errors and non-finite
/// outputs to [`Error`].
pub(crate) fn evaluate_checked(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    draw: &ReplicationDraw,
    replication: usize,
) -> Result<f64> {
    let value = model
        .evaluate(&Inputs::new(dataset, &draw.indices))
        .map_err(|reason| Error::ModelRejected {
            replication,
            reason,
        })?;
    if !value.is_finite() {
        return Err(Error::NonFiniteOutput { replication, value });
    }
    Ok(value)
}

/// Runs `r` replications of the model with inputs resampled from `sampler`.
/// Replication `k` uses the stream `key / ("rep", k)`.
pub fn simulate_with(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    sampler: &WeightedSampler,
    r: usize,
    key: &StreamKey,
) -> Result<Vec<f64>> {
    let run_lengths = model.run_lengths();
    par::map_indexed(r, |k| {
        let mut rng = key.child("rep", k as u64).stream();
        let mut draw = ReplicationDraw::with_run_lengths(run_lengths);
        sampler.draw_into(run_lengths, &mut rng, &mut draw);
        evaluate_checked(model, dataset, &draw, k)
    })
    .into_iter()
    .collect()
}

/// `R` outputs of `h` under the weighted empirical input distributions.
pub fn simulate(
    model: &dyn PerformanceModel,
    dataset: &InputDataset,
    weights: &ProbabilityWeights,
    r: usize,
    key: &StreamKey,
) -> Result<Vec<f64>> {
    validate(dataset, model)?;
    if r == 0 {
        return Err(Error::InvalidArgument(
            "number of replications must be at least 1".into(),
        ));
    }
    if weights.sizes() != dataset.sizes() {
        return Err(Error::InvalidWeights(format!(
            "weight sizes {:?} do not match dataset sizes {:?}",
            weights.sizes(),
            dataset.sizes()
        )));
    }
    let sampler = WeightedSampler::new(weights)?;
    simulate_with(model, dataset, &sampler, r, key)
}

/// Sample mean and sample variance (divisor `n - 1`, zero when `n < 2`).
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}
