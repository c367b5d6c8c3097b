//! Nonstationary, nonseparable synthetic field on a square grid.

use crate::distributions::{standard_normal, substream};
use crate::error::{Error, Result};
use crate::tensor::{Dims, SpatioTensor};

pub const DOMAIN: (f64, f64) = (-1.0, 3.0);

fn f1(s: f64) -> f64 {
    s * ((2.0 * s).sin() + 2.0)
}

fn f2(s: f64) -> f64 {
    0.2 * s * (99.0 * (s + 1.0) + 4.0).sqrt()
}

/// Noiseless field value at `(s1, s2)`.
pub fn field(s1: f64, s2: f64) -> f64 {
    (4.0 * (f1(s1) + f2(s2))).cos() + (4.0 * (f1(s2) - f2(s1))).sin()
}

/// `n` evenly spaced points covering the domain, endpoints included.
pub fn grid(n: usize) -> Vec<f64> {
    let (a, b) = DOMAIN;
    (0..n).map(|i| a + (b - a) * i as f64 / (n - 1) as f64).collect()
}

/// The noiseless field as an `n1 × n2 × 1` array in storage order.
pub fn noiseless(n1: usize, n2: usize) -> Result<Vec<f64>> {
    if n1 < 2 || n2 < 2 {
        return Err(Error::Parameter(format!("grid must be at least 2x2, got {n1}x{n2}")));
    }
    let (g1, g2) = (grid(n1), grid(n2));
    let mut out = Vec::with_capacity(n1 * n2);
    for &s2 in &g2 {
        for &s1 in &g1 {
            out.push(field(s1, s2));
        }
    }
    Ok(out)
}

/// Fully observed `n1 × n2 × 1` tensor with i.i.d. `N(0, noise_var)` noise drawn
/// from the `synth` substream of `seed`.
pub fn generate_synthetic(n1: usize, n2: usize, noise_var: f64, seed: u64) -> Result<SpatioTensor> {
    if !(noise_var >= 0.0 && noise_var.is_finite()) {
        return Err(Error::Parameter(format!(
            "noise variance {noise_var} must be nonnegative"
        )));
    }
    let mut values = noiseless(n1, n2)?;
    let mut rng = substream(seed, "synth");
    let sd = noise_var.sqrt();
    for v in values.iter_mut() {
        *v += sd * standard_normal(&mut rng);
    }
    SpatioTensor::dense(Dims::new(n1, n2, 1)?, values)
}
