use statrs::function::erf::{erf_inv, erfc_inv};

use crate::error::{Error, Result};

/// Standard normal quantile.
pub fn normal_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    Ok(-std::f64::consts::SQRT_2 * erfc_inv(2.0 * p))
}

/// `z_{1 - alpha/2}`.
pub fn two_sided_z(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} outside (0, 1)"
        )));
    }
    Ok(std::f64::consts::SQRT_2 * erfc_inv(alpha))
}

/// Quantile of the chi-square distribution with one degree of freedom:
/// `q = z^2` where `P(|Z| <= z) = p`, i.e. `z = sqrt(2) erf^-1(p)`.
pub fn chi2_1_quantile(p: f64) -> Result<f64> {
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "probability {p} outside (0, 1)"
        )));
    }
    // erfc_inv keeps precision near p = 1, erf_inv near p = 0
    let z = if p < 0.5 {
        erf_inv(p)
    } else {
        erfc_inv(1.0 - p)
    };
    Ok(2.0 * z * z)
}
