//! Weight optimization over the empirical-likelihood uncertainty set.
//!
//! For coefficients `G_ij` (observation `j` of input model `i`) we solve
//!
//! ```text
//! min / max  sum_ij G_ij w_ij
//! s.t.       -2 sum_ij log(n_i w_ij) <= chi2_{1, 1-alpha}
//!            sum_j w_ij = 1,  w_ij >= 0
//! ```
//!
//! The KKT conditions give `w_ij = 2 beta / (G_ij + lambda_i)` with the
//! divergence constraint active. For a fixed `beta`, each `lambda_i` solves
//! `sum_j 2 beta / (G_ij + lambda_i) = 1`; `beta` is then located by
//! bisection on the divergence residual. The maximization is the
//! minimization of `-G`.

use serde::Serialize;

use crate::data::{ElSolution, ProbabilityWeights};
use crate::error::{Error, Result, SolverError};
use crate::stats::chi2_1_quantile;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Tolerance on the normalization residual `|sum_j w_ij - 1|`.
    pub newton_tol: f64,
    /// Relative width at which the `beta` bracket is considered converged.
    pub bisect_tol: f64,
    pub max_newton: usize,
    pub max_bisect: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            newton_tol: 1e-12,
            bisect_tol: 1e-12,
            max_newton: 200,
            max_bisect: 200,
        }
    }
}

/// Confidence level and sample sizes that define the uncertainty set.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UncertaintySetSpec {
    pub alpha: f64,
    pub sizes: Vec<usize>,
    pub chi2: f64,
}

impl UncertaintySetSpec {
    pub fn new(alpha: f64, sizes: Vec<usize>) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(SolverError::Alpha(alpha).into());
        }
        if sizes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if let Some((model, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(Error::SampleTooSmall { model, n });
        }
        let chi2 = chi2_1_quantile(1.0 - alpha)?;
        Ok(Self { alpha, sizes, chi2 })
    }

    pub fn total_size(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// Per-observation radius `chi2 / (2N)`.
    pub fn radius(&self) -> f64 {
        self.chi2 / (2.0 * self.total_size() as f64)
    }

    /// Bounds `(l, u)` on `n_i w_ij` valid for every feasible weight vector:
    /// the two roots of `ln x + 1 + chi2/2 - x = 0`.
    pub fn feasibility_envelope(&self) -> (f64, f64) {
        feasibility_envelope(self.chi2)
    }
}

/// Roots `l < 1 < u` of `ln x + 1 + chi2/2 - x`.
pub fn feasibility_envelope(chi2: f64) -> (f64, f64) {
    let c = 1.0 + 0.5 * chi2;
    let g = |x: f64| x.ln() + c - x;
    let root = |mut pos: f64, mut neg: f64| {
        for _ in 0..200 {
            let mid = 0.5 * (pos + neg);
            if g(mid) > 0.0 {
                pos = mid;
            } else {
                neg = mid;
            }
        }
        0.5 * (pos + neg)
    };
    // g(e^{-c}) = -e^{-c} < 0 and g(c + ln c + 2) < 0 for c >= 1
    let lower = root(1.0, (-c).exp());
    let upper = root(1.0, c + c.ln() + 2.0);
    (lower, upper)
}

/// `-2 sum_ij log(n_i w_ij)`; infinite if any weight is zero.
pub fn divergence(w: &ProbabilityWeights) -> f64 {
    w.as_slices()
        .iter()
        .map(|row| {
            let n = row.len() as f64;
            row.iter()
                .map(|&x| {
                    if x > 0.0 {
                        -2.0 * (n * x).ln()
                    } else {
                        f64::INFINITY
                    }
                })
                .sum::<f64>()
        })
        .sum()
}

pub fn solve_weights(coeffs: &[Vec<f64>], alpha: f64) -> Result<ElSolution> {
    let spec = UncertaintySetSpec::new(alpha, coeffs.iter().map(Vec::len).collect())?;
    solve_weights_with(coeffs, &spec, &SolverConfig::default())
}

pub fn solve_weights_with(
    coeffs: &[Vec<f64>],
    spec: &UncertaintySetSpec,
    cfg: &SolverConfig,
) -> Result<ElSolution> {
    let sizes: Vec<usize> = coeffs.iter().map(Vec::len).collect();
    if sizes != spec.sizes {
        return Err(Error::InvalidArgument(format!(
            "coefficient sizes {sizes:?} do not match uncertainty set sizes {:?}",
            spec.sizes
        )));
    }
    for (model, row) in coeffs.iter().enumerate() {
        if let Some(index) = row.iter().position(|g| !g.is_finite()) {
            return Err(SolverError::NonFiniteCoefficient { model, index }.into());
        }
    }

    let flat: Vec<bool> = coeffs.iter().map(|row| is_flat(row)).collect();
    let uniform = ProbabilityWeights::uniform(&sizes);

    if flat.iter().all(|&f| f) {
        let obj = uniform.dot(coeffs);
        let means: Vec<f64> = coeffs
            .iter()
            .map(|r| r.iter().sum::<f64>() / r.len() as f64)
            .collect();
        return Ok(ElSolution {
            w_min: uniform.clone(),
            w_max: uniform,
            obj_min: obj,
            obj_max: obj,
            beta_min: 0.0,
            beta_max: 0.0,
            lambdas_min: means.iter().map(|m| -m).collect(),
            lambdas_max: means,
            degenerate: true,
            alpha: spec.alpha,
            chi2: spec.chi2,
        });
    }

    let lo_side = minimize(coeffs, &flat, spec.chi2, cfg)?;
    let negated: Vec<Vec<f64>> = coeffs
        .iter()
        .map(|r| r.iter().map(|g| -g).collect())
        .collect();
    let hi_side = minimize(&negated, &flat, spec.chi2, cfg)?;

    let w_min = ProbabilityWeights::new(lo_side.weights)?;
    let w_max = ProbabilityWeights::new(hi_side.weights)?;
    Ok(ElSolution {
        obj_min: w_min.dot(coeffs),
        obj_max: w_max.dot(coeffs),
        w_min,
        w_max,
        beta_min: lo_side.beta,
        beta_max: hi_side.beta,
        lambdas_min: lo_side.lambdas,
        // lambdas of the max problem, written in terms of G: w = 2b / (lambda - G)
        lambdas_max: hi_side.lambdas,
        degenerate: false,
        alpha: spec.alpha,
        chi2: spec.chi2,
    })
}

/// Interval for `sum_i E[X_i]` obtained by using the observations themselves
/// as coefficients.
pub fn sum_of_means_ci(samples: &[Vec<f64>], alpha: f64) -> Result<(f64, f64)> {
    let sol = solve_weights(samples, alpha)?;
    Ok((sol.obj_min, sol.obj_max))
}

fn is_flat(row: &[f64]) -> bool {
    let (lo, hi, amax) = row.iter().fold(
        (f64::INFINITY, f64::NEG_INFINITY, 0.0f64),
        |(lo, hi, a), &g| (lo.min(g), hi.max(g), a.max(g.abs())),
    );
    hi - lo <= 1e-12 * (1.0 + amax)
}

struct Side {
    weights: Vec<Vec<f64>>,
    beta: f64,
    lambdas: Vec<f64>,
}

/// Shifted model coefficients: `d_j = G_j - min G >= 0`, and the multiplier
/// is tracked as `s = lambda + min G`, which lies in `[2 beta, 2 beta n]`.
struct Shifted {
    offset: f64,
    d: Vec<f64>,
    flat: bool,
}

impl Shifted {
    fn new(row: &[f64], flat: bool) -> Self {
        let offset = row.iter().copied().fold(f64::INFINITY, f64::min);
        let d = if flat {
            vec![0.0; row.len()]
        } else {
            row.iter().map(|g| g - offset).collect()
        };
        Self { offset, d, flat }
    }

    fn n(&self) -> f64 {
        self.d.len() as f64
    }

    /// Solves `sum_j 2 beta / (d_j + s) = 1` for `s`.
    fn multiplier(&self, model: usize, beta: f64, cfg: &SolverConfig) -> Result<f64> {
        let two_b = 2.0 * beta;
        let n = self.n();
        if self.flat {
            return Ok(two_b * n);
        }
        let (mut lo, mut hi) = (two_b, two_b * n);
        let mut s = lo;
        for _ in 0..cfg.max_newton {
            let (mut f, mut df) = (-1.0, 0.0);
            for &dj in &self.d {
                let t = two_b / (dj + s);
                f += t;
                df += t / (dj + s);
            }
            if f.abs() <= cfg.newton_tol {
                return Ok(s);
            }
            if f > 0.0 {
                lo = s;
            } else {
                hi = s;
            }
            // f is decreasing and convex in s, so Newton from the left stays
            // inside the bracket; fall back to bisection otherwise.
            let step = s + f / df;
            s = if step > lo && step < hi {
                step
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 4.0 * f64::EPSILON * hi {
                return Ok(s);
            }
        }
        Err(SolverError::Lambda { model, beta }.into())
    }
}

fn minimize(coeffs: &[Vec<f64>], flat: &[bool], chi2: f64, cfg: &SolverConfig) -> Result<Side> {
    let models: Vec<Shifted> = coeffs
        .iter()
        .zip(flat)
        .map(|(r, &f)| Shifted::new(r, f))
        .collect();
    let total: f64 = models.iter().map(Shifted::n).sum();
    let min_n = models.iter().map(Shifted::n).fold(f64::INFINITY, f64::min);
    let spread = models
        .iter()
        .flat_map(|m| m.d.iter().copied())
        .fold(0.0, f64::max);

    // Divergence residual 2 sum log(2 n beta / (d + s)) + chi2, which crosses
    // zero inside (0, beta_max).
    let residual = |beta: f64| -> Result<f64> {
        let mut acc = 0.0;
        for (i, m) in models.iter().enumerate() {
            let s = m.multiplier(i, beta, cfg)?;
            let log_num = (2.0 * m.n() * beta).ln();
            acc += m.d.iter().map(|&dj| log_num - (dj + s).ln()).sum::<f64>();
        }
        Ok(2.0 * acc + chi2)
    };

    let beta_max = spread / (2.0 * -(-chi2 / (2.0 * total)).exp_m1() * min_n);
    let mut hi = beta_max;
    let f_hi = residual(hi)?;
    let mut lo = 0.5 * hi;
    let mut f_lo = residual(lo)?;
    while f_lo.signum() == f_hi.signum() {
        lo *= 1e-3;
        if lo < beta_max * 1e-280 || f_lo == 0.0 {
            break;
        }
        f_lo = residual(lo)?;
    }
    if f_lo.signum() == f_hi.signum() || !f_lo.is_finite() || !f_hi.is_finite() {
        return Err(SolverError::Bracket { lo, hi, f_lo, f_hi }.into());
    }

    let lo_sign = f_lo.signum();
    for _ in 0..cfg.max_bisect {
        if hi - lo <= cfg.bisect_tol * hi * 1e-3 {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let f_mid = residual(mid)?;
        if f_mid == 0.0 {
            lo = mid;
            hi = mid;
            break;
        }
        if f_mid.signum() == lo_sign {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let beta = 0.5 * (lo + hi);

    let mut weights = Vec::with_capacity(models.len());
    let mut lambdas = Vec::with_capacity(models.len());
    for (i, m) in models.iter().enumerate() {
        let s = m.multiplier(i, beta, cfg)?;
        let mut w: Vec<f64> = m.d.iter().map(|&dj| 2.0 * beta / (dj + s)).collect();
        let sum: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= sum);
        weights.push(w);
        lambdas.push(s - m.offset);
    }
    Ok(Side {
        weights,
        beta,
        lambdas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi2_value() {
        assert!((chi2_1_quantile(0.95).unwrap() - 3.841458820694124).abs() < 1e-9);
    }

    #[test]
    fn envelope_roots() {
        let (l, u) = feasibility_envelope(3.841458820694124);
        let c = 1.0 + 0.5 * 3.841458820694124;
        assert!((l.ln() + c - l).abs() < 1e-12);
        assert!((u.ln() + c - u).abs() < 1e-12);
        assert!(l < 1.0 && u > 1.0);
    }

    #[test]
    fn constraint_active_and_normalized() {
        let g = vec![vec![0.3, -1.2, 2.0, 0.7, 0.0], vec![5.0, 1.0, 3.0]];
        let sol = solve_weights(&g, 0.05).unwrap();
        assert!(!sol.degenerate);
        for w in [&sol.w_min, &sol.w_max] {
            assert!((divergence(w) - sol.chi2).abs() < 1e-7, "{}", divergence(w));
            for row in w.as_slices() {
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
        let uniform = ProbabilityWeights::uniform(&[5, 3]).dot(&g);
        assert!(sol.obj_min < uniform && uniform < sol.obj_max);
    }

    #[test]
    fn flat_input_is_degenerate() {
        let sol = solve_weights(&[vec![2.0; 4], vec![-1.0; 3]], 0.1).unwrap();
        assert!(sol.degenerate);
        assert_eq!(sol.obj_min, 1.0);
        assert_eq!(sol.obj_max, 1.0);
    }

    #[test]
    fn flat_model_gets_uniform_weights() {
        let sol = solve_weights(&[vec![1.0, 2.0, 4.0], vec![3.0; 4]], 0.05).unwrap();
        assert!(!sol.degenerate);
        assert!(sol.w_min.model(1).iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_weights(&[vec![1.0, f64::NAN]], 0.05).is_err());
        assert!(solve_weights(&[vec![1.0, 2.0]], 1.5).is_err());
        assert!(solve_weights(&[vec![1.0]], 0.05).is_err());
    }
}
