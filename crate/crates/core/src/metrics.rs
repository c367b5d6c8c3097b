//! Point and probabilistic scores on held-out entries.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

pub const PSNR_CAP: f64 = 99.0;

fn check(y: &[f64], other: &[f64]) -> Result<()> {
    if y.is_empty() {
        return Err(Error::Validation("no entries to score".into()));
    }
    if y.len() != other.len() {
        return Err(Error::Dimension(format!(
            "{} truths but {} estimates",
            y.len(),
            other.len()
        )));
    }
    Ok(())
}

pub fn mae(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).abs()).sum::<f64>() / y.len() as f64)
}

pub fn mse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    Ok(y.iter().zip(yhat).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / y.len() as f64)
}

pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    mse(y, yhat).map(f64::sqrt)
}

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

/// Closed-form CRPS of `N(ŷ, σ²)` at `y`, averaged.
pub fn crps_gaussian(y: &[f64], yhat: &[f64], sigma: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    check(y, sigma)?;
    let n = std_normal();
    let inv_sqrt_pi = std::f64::consts::PI.sqrt().recip();
    let mut acc = 0.0;
    for ((&a, &b), &s) in y.iter().zip(yhat).zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::Parameter(format!(
                "predictive standard deviation {s} must be positive"
            )));
        }
        let z = (a - b) / s;
        acc += s * (z * (2.0 * n.cdf(z) - 1.0) + 2.0 * n.pdf(z) - inv_sqrt_pi);
    }
    Ok(acc / y.len() as f64)
}

/// The same score written with a leading minus sign around
/// `1/√π − 2φ(z) − z(2Φ(z) − 1)`.
pub fn crps_negated_form(y: &[f64], yhat: &[f64], sigma: &[f64]) -> Result<f64> {
    check(y, yhat)?;
    check(y, sigma)?;
    let n = std_normal();
    let inv_sqrt_pi = std::f64::consts::PI.sqrt().recip();
    let mut acc = 0.0;
    for ((&a, &b), &s) in y.iter().zip(yhat).zip(sigma) {
        if !(s > 0.0) {
            return Err(Error::Parameter(format!(
                "predictive standard deviation {s} must be positive"
            )));
        }
        let z = (a - b) / s;
        acc += s * (inv_sqrt_pi - 2.0 * n.pdf(z) - z * (2.0 * n.cdf(z) - 1.0));
    }
    Ok(-acc / y.len() as f64)
}

fn check_bounds(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<()> {
    check(y, lower)?;
    check(y, upper)?;
    if let Some(i) = lower.iter().zip(upper).position(|(l, u)| l > u) {
        return Err(Error::Validation(format!(
            "interval {i} has lower bound above upper bound"
        )));
    }
    Ok(())
}

/// Mean interval score at level `1 − alpha`; bounds are closed.
pub fn interval_score(y: &[f64], lower: &[f64], upper: &[f64], alpha: f64) -> Result<f64> {
    check_bounds(y, lower, upper)?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::Parameter(format!("alpha {alpha} outside (0, 1)")));
    }
    let k = 2.0 / alpha;
    let mut acc = 0.0;
    for ((&v, &l), &u) in y.iter().zip(lower).zip(upper) {
        acc += u - l;
        if v < l {
            acc += k * (l - v);
        }
        if v > u {
            acc += k * (v - u);
        }
    }
    Ok(acc / y.len() as f64)
}

/// Fraction of `y` inside the closed intervals.
pub fn coverage(y: &[f64], lower: &[f64], upper: &[f64]) -> Result<f64> {
    check_bounds(y, lower, upper)?;
    let inside = y
        .iter()
        .zip(lower)
        .zip(upper)
        .filter(|((v, l), u)| l <= v && v <= u)
        .count();
    Ok(inside as f64 / y.len() as f64)
}

/// `10·log₁₀(max²/MSE)`; infinite when the estimate is exact.
pub fn psnr(y: &[f64], yhat: &[f64], max_value: f64) -> Result<f64> {
    if !(max_value > 0.0) {
        return Err(Error::Parameter(format!("peak value {max_value} must be positive")));
    }
    let e = mse(y, yhat)?;
    Ok(if e == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (max_value * max_value / e).log10()
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub mae: f64,
    pub rmse: f64,
    pub crps: f64,
    pub int_score: f64,
    pub cvg: f64,
    pub psnr: f64,
    pub n: usize,
}

/// Every score at once. `max_value` defaults to the largest truth value; the
/// PSNR is capped at [`PSNR_CAP`].
pub fn score(
    y: &[f64],
    mean: &[f64],
    sigma: &[f64],
    lower: &[f64],
    upper: &[f64],
    alpha: f64,
    max_value: Option<f64>,
) -> Result<ScoreReport> {
    let peak = max_value.unwrap_or_else(|| y.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    Ok(ScoreReport {
        mae: mae(y, mean)?,
        rmse: rmse(y, mean)?,
        crps: crps_gaussian(y, mean, sigma)?,
        int_score: interval_score(y, lower, upper, alpha)?,
        cvg: coverage(y, lower, upper)?,
        psnr: psnr(y, mean, peak)?.min(PSNR_CAP),
        n: y.len(),
    })
}
