//! Shared domain types: observed input samples, probability weights on them,
//! the performance-model abstraction and the interval/result records.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Observations of one input model. Observation `j` is the `dim`-long slice
/// starting at `j * dim`; identity is by index, so repeated values are
/// distinct support points.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    dim: usize,
    values: Vec<f64>,
}

impl Sample {
    pub fn new(dim: usize, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument(
                "observation dimension must be positive".into(),
            ));
        }
        if !values.len().is_multiple_of(dim) {
            return Err(Error::InvalidArgument(format!(
                "{} values do not split into observations of dimension {dim}",
                values.len()
            )));
        }
        Ok(Self { dim, values })
    }

    /// One-dimensional sample.
    pub fn scalar(values: Vec<f64>) -> Self {
        Self { dim: 1, values }
    }

    /// Builds a sample from rows, checking that every row has the same length.
    /// `model` is only used for error reporting.
    pub fn from_rows(model: usize, rows: Vec<Vec<f64>>) -> Result<Self> {
        let dim = rows.first().map(Vec::len).unwrap_or(1);
        let mut values = Vec::with_capacity(rows.len() * dim);
        for (index, row) in rows.into_iter().enumerate() {
            if row.len() != dim {
                return Err(Error::DimensionMismatch {
                    model,
                    index,
                    expected: dim,
                    found: row.len(),
                });
            }
            values.extend(row);
        }
        Sample::new(dim.max(1), values)
    }

    pub fn len(&self) -> usize {
        self.values.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn obs(&self, j: usize) -> &[f64] {
        &self.values[j * self.dim..(j + 1) * self.dim]
    }

    pub fn iter(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.dim)
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// The `m` observed input samples.
#[derive(Debug, Clone, PartialEq)]
pub struct InputDataset {
    samples: Vec<Sample>,
}

impl InputDataset {
    /// Checks `m >= 1`, `n_i >= 2` and finiteness of every component.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        for (model, s) in samples.iter().enumerate() {
            if s.len() < 2 {
                return Err(Error::SampleTooSmall { model, n: s.len() });
            }
            if let Some(pos) = s.values.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObservation {
                    model,
                    index: pos / s.dim,
                });
            }
        }
        Ok(Self { samples })
    }

    pub fn from_scalars(samples: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(samples.into_iter().map(Sample::scalar).collect())
    }

    pub fn num_models(&self) -> usize {
        self.samples.len()
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.samples.iter().map(Sample::len).collect()
    }

    /// `N = sum n_i`.
    pub fn total_size(&self) -> usize {
        self.samples.iter().map(Sample::len).sum()
    }

    /// `n = N / m`.
    pub fn mean_size(&self) -> f64 {
        self.total_size() as f64 / self.num_models() as f64
    }

    /// Unchecked scalar buffer with `lens[i]` zeros for model `i`; used to feed
    /// freshly generated inputs straight to a model.
    pub(crate) fn scratch(lens: &[usize]) -> Self {
        Self {
            samples: lens.iter().map(|&t| Sample::scalar(vec![0.0; t])).collect(),
        }
    }

    pub(crate) fn values_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.samples[i].values
    }
}

/// Per-model probability vectors over the data support.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProbabilityWeights {
    per_model: Vec<Vec<f64>>,
}

/// Allowed deviation of a weight vector's sum from one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

impl ProbabilityWeights {
    pub fn new(per_model: Vec<Vec<f64>>) -> Result<Self> {
        if per_model.is_empty() {
            return Err(Error::InvalidWeights("no weight vectors".into()));
        }
        for (i, w) in per_model.iter().enumerate() {
            if w.is_empty() {
                return Err(Error::InvalidWeights(format!(
                    "model {i}: empty weight vector"
                )));
            }
            if let Some(j) = w.iter().position(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::InvalidWeights(format!(
                    "model {i}: weight {j} = {} is not a finite non-negative number",
                    w[j]
                )));
            }
            let sum: f64 = w.iter().sum();
            if (sum - 1.0).abs() > WEIGHT_SUM_TOL {
                return Err(Error::InvalidWeights(format!(
                    "model {i}: weights sum to {sum}"
                )));
            }
        }
        Ok(Self { per_model })
    }

    pub fn uniform(sizes: &[usize]) -> Self {
        Self {
            per_model: sizes.iter().map(|&n| vec![1.0 / n as f64; n]).collect(),
        }
    }

    pub fn num_models(&self) -> usize {
        self.per_model.len()
    }

    pub fn model(&self, i: usize) -> &[f64] {
        &self.per_model[i]
    }

    pub fn as_slices(&self) -> &[Vec<f64>] {
        &self.per_model
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.per_model.iter().map(Vec::len).collect()
    }

    /// Weighted sum `sum_i sum_j c_ij w_ij`.
    pub fn dot(&self, coeffs: &[Vec<f64>]) -> f64 {
        self.per_model
            .iter()
            .zip(coeffs)
            .map(|(w, c)| w.iter().zip(c).map(|(a, b)| a * b).sum::<f64>())
            .sum()
    }
}

/// View of one replication's inputs: for model `i`, `T_i` observations
/// selected by index from the dataset.
#[derive(Clone, Copy)]
pub struct Inputs<'a> {
    dataset: &'a InputDataset,
    indices: &'a [Vec<u32>],
}

impl<'a> Inputs<'a> {
    pub fn new(dataset: &'a InputDataset, indices: &'a [Vec<u32>]) -> Self {
        Self { dataset, indices }
    }

    /// Observation vector `t` (0-based) of model `i`.
    #[inline]
    pub fn obs(&self, i: usize, t: usize) -> &'a [f64] {
        self.dataset.samples[i].obs(self.indices[i][t] as usize)
    }

    /// First component of observation `t` of model `i`.
    #[inline]
    pub fn value(&self, i: usize, t: usize) -> f64 {
        self.obs(i, t)[0]
    }

    pub fn run_length(&self, i: usize) -> usize {
        self.indices[i].len()
    }

    pub fn num_models(&self) -> usize {
        self.indices.len()
    }
}

/// The simulation logic `h` together with its run lengths `T_i`.
///
/// `evaluate` must be pure. Errors signal inputs outside the model's domain
/// (for example a negative service time).
pub trait PerformanceModel: Send + Sync {
    fn name(&self) -> &str;

    fn run_lengths(&self) -> &[usize];

    fn evaluate(&self, inputs: &Inputs<'_>) -> std::result::Result<f64, String>;

    /// Natural range of the performance measure, used only to count overshoot.
    fn natural_range(&self) -> Option<(f64, f64)> {
        None
    }

    /// Domain check applied to every observation of model `i` by [`validate`].
    fn check_observation(&self, _model: usize, _obs: &[f64]) -> std::result::Result<(), String> {
        Ok(())
    }

    fn num_inputs(&self) -> usize {
        self.run_lengths().len()
    }
}

/// A [`PerformanceModel`] backed by a closure.
pub struct FnModel<F> {
    name: String,
    run_lengths: Vec<usize>,
    range: Option<(f64, f64)>,
    f: F,
}

impl<F> FnModel<F>
where
    F: Fn(&Inputs<'_>) -> f64 + Send + Sync,
{
    pub fn new(name: impl Into<String>, run_lengths: Vec<usize>, f: F) -> Self {
        Self {
            name: name.into(),
            run_lengths,
            range: None,
            f,
        }
    }

    pub fn with_range(mut self, lo: f64, hi: f64) -> Self {
        self.range = Some((lo, hi));
        self
    }
}

impl<F> PerformanceModel for FnModel<F>
where
    F: Fn(&Inputs<'_>) -> f64 + Send + Sync,
{
    fn name(&self) -> &str {
        &self.name
    }

    fn run_lengths(&self) -> &[usize] {
        &self.run_lengths
    }

    fn evaluate(&self, inputs: &Inputs<'_>) -> std::result::Result<f64, String> {
        Ok((self.f)(inputs))
    }

    fn natural_range(&self) -> Option<(f64, f64)> {
        self.range
    }
}

/// Checks dataset and model invariants and that both agree on `m`.
pub fn validate(dataset: &InputDataset, model: &dyn PerformanceModel) -> Result<()> {
    let expected = model.num_inputs();
    if expected != dataset.num_models() {
        return Err(Error::ArityMismatch {
            expected,
            found: dataset.num_models(),
        });
    }
    if let Some(&t) = model.run_lengths().iter().find(|&&t| t == 0) {
        return Err(Error::InvalidArgument(format!(
            "run length {t} must be positive"
        )));
    }
    for (i, s) in dataset.samples().iter().enumerate() {
        if s.len() < 2 {
            return Err(Error::SampleTooSmall {
                model: i,
                n: s.len(),
            });
        }
        for (j, x) in s.iter().enumerate() {
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteObservation { model: i, index: j });
            }
            model
                .check_observation(i, x)
                .map_err(|reason| Error::InvalidObservation {
                    model: i,
                    index: j,
                    reason,
                })?;
        }
    }
    Ok(())
}

/// Result of the paired min/max weight optimization.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ElSolution {
    pub w_min: ProbabilityWeights,
    pub w_max: ProbabilityWeights,
    pub obj_min: f64,
    pub obj_max: f64,
    pub beta_min: f64,
    pub beta_max: f64,
    pub lambdas_min: Vec<f64>,
    pub lambdas_max: Vec<f64>,
    pub degenerate: bool,
    pub alpha: f64,
    pub chi2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bel,
    Eel,
    Fel,
    Lel,
    Boot,
    Delta,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Bel,
        Method::Eel,
        Method::Fel,
        Method::Lel,
        Method::Boot,
        Method::Delta,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bel => "BEL",
            Method::Eel => "EEL",
            Method::Fel => "FEL",
            Method::Lel => "LEL",
            Method::Boot => "BOOT",
            Method::Delta => "DELTA",
        }
    }

    /// Methods built on the Step-1/Step-2 pipeline.
    pub fn is_el(self) -> bool {
        matches!(self, Method::Bel | Method::Eel | Method::Fel | Method::Lel)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bel" => Ok(Method::Bel),
            "eel" => Ok(Method::Eel),
            "fel" => Ok(Method::Fel),
            "lel" => Ok(Method::Lel),
            "boot" => Ok(Method::Boot),
            "delta" => Ok(Method::Delta),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected bel, eel, fel, lel, boot or delta)"
            ))),
        }
    }
}

/// Point estimates and budgets attached to an interval.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub z_hat: Option<f64>,
    pub sigma_hat: Option<f64>,
    pub sigma_i_hat: Option<f64>,
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub b: Option<usize>,
    pub rb: Option<usize>,
    pub rd: Option<usize>,
    /// Bootstrap order-statistic ranks (1-based) and the rule that produced them.
    pub ranks: Option<(usize, usize)>,
    pub rank_rule: Option<&'static str>,
    /// Raw lower bound exceeded the raw upper bound; the interval was collapsed
    /// to their midpoint.
    pub crossed: bool,
    pub raw_bounds: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

impl ConfidenceInterval {
    /// Builds an interval from raw bounds. Crossed bounds (possible for the
    /// EL variants, whose two ends come from independent simulation batches)
    /// collapse to the midpoint and set `diagnostics.crossed`.
    pub fn from_raw(
        lower: f64,
        upper: f64,
        level: f64,
        method: Method,
        mut diagnostics: Diagnostics,
    ) -> Self {
        diagnostics.raw_bounds = (lower, upper);
        let (lower, upper) = if lower > upper {
            diagnostics.crossed = true;
            let mid = 0.5 * (lower + upper);
            (mid, mid)
        } else {
            (lower, upper)
        };
        Self {
            lower,
            upper,
            level,
            method,
            diagnostics,
        }
    }

    pub fn length(&self) -> f64 {
        self.upper - self.lower
    }

    /// Closed-interval containment.
    pub fn covers(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn overshoots(&self, range: Option<(f64, f64)>) -> bool {
        match range {
            Some((lo, hi)) => self.lower < lo || self.upper > hi,
            None => false,
        }
    }
}

/// Simulation budgets for every method.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub r1: Option<usize>,
    pub r2: Option<usize>,
    pub b: Option<usize>,
    pub rb: Option<usize>,
    pub rd: Option<usize>,
}

impl BudgetPlan {
    /// Checks that the budgets `method` needs are present and large enough.
    pub fn check_for(&self, method: Method) -> Result<()> {
        let need = |v: Option<usize>, name: &str, min: usize| -> Result<usize> {
            match v {
                Some(x) if x >= min => Ok(x),
                Some(x) => Err(Error::InvalidArgument(format!(
                    "{name} = {x} must be at least {min} for {method}"
                ))),
                None => Err(Error::InvalidArgument(format!("{method} requires {name}"))),
            }
        };
        match method {
            Method::Bel => {
                need(self.r1, "R1", 2)?;
                need(self.r2, "R2", 1)?;
            }
            Method::Eel | Method::Fel => {
                need(self.r1, "R1", 2)?;
                need(self.r2, "R2", 2)?;
            }
            Method::Lel => {
                need(self.r1, "R1", 2)?;
            }
            Method::Boot => {
                need(self.b, "B", 1)?;
                need(self.rb, "R_b", 1)?;
            }
            Method::Delta => {
                need(self.rd, "R_d", 2)?;
            }
        }
        Ok(())
    }

    /// Number of simulation runs the method consumes under this plan.
    pub fn total_runs(&self, method: Method) -> usize {
        match method {
            Method::Bel | Method::Eel | Method::Fel => {
                self.r1.unwrap_or(0) + 2 * self.r2.unwrap_or(0)
            }
            Method::Lel => self.r1.unwrap_or(0),
            Method::Boot => self.b.unwrap_or(0) * self.rb.unwrap_or(0),
            Method::Delta => self.rd.unwrap_or(0),
        }
    }
}
