//! Sampling primitives with explicit generator state.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linalg::dense_cholesky;

pub type ChainRng = ChaCha20Rng;
pub type RngState = ChainRng;

/// Independent generator for the named consumer of `seed`.
pub fn substream(seed: u64, name: &str) -> ChainRng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest: [u8; 32] = h.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

pub fn standard_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

pub fn standard_normal_vec<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| standard_normal(rng)).collect()
}

/// Draw from `N(Λ⁻¹η, Λ⁻¹)`.
pub fn sample_mvn_precision<R: Rng + ?Sized>(
    eta: &DVector<f64>,
    lambda: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if lambda.nrows() != eta.len() || !lambda.is_square() {
        return Err(Error::Dimension("precision and linear term disagree".into()));
    }
    let (chol, _) = dense_cholesky(lambda)?;
    let l = chol.l();
    // Λ = L Lᵀ: mean solves L Lᵀ μ = η, noise solves Lᵀ x = z.
    let mut mean = eta.clone();
    l.solve_lower_triangular_mut(&mut mean);
    let z = DVector::from_vec(standard_normal_vec(eta.len(), rng));
    let mut x = mean + z;
    l.tr_solve_lower_triangular_mut(&mut x);
    Ok(x)
}

/// Gamma with shape `a` and rate `b`.
pub fn sample_gamma<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::Parameter(format!(
            "gamma needs positive shape and rate, got ({a}, {b})"
        )));
    }
    let g = Gamma::new(a, 1.0 / b).map_err(|e| Error::Parameter(e.to_string()))?;
    Ok(g.sample(rng))
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Wishart with scale `psi` and `nu` degrees of freedom (mean `ν Ψ`), by Bartlett
/// decomposition.
pub fn sample_wishart<R: Rng + ?Sized>(psi: &DMatrix<f64>, nu: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let p = psi.nrows();
    if !psi.is_square() || p == 0 {
        return Err(Error::Dimension("Wishart scale must be square and nonempty".into()));
    }
    if !(nu > (p - 1) as f64) {
        return Err(Error::Parameter(format!(
            "Wishart degrees of freedom {nu} too small for order {p}"
        )));
    }
    let (chol, _) = dense_cholesky(psi)?;
    let mut a = DMatrix::zeros(p, p);
    for i in 0..p {
        let chi = ChiSquared::new(nu - i as f64).map_err(|e| Error::Parameter(e.to_string()))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = standard_normal(rng);
        }
    }
    let la = chol.l() * a;
    let mut x = &la * la.transpose();
    symmetrize(&mut x);
    Ok(x)
}

/// Inverse-Wishart with scale `psi` (mean `Ψ / (ν − p − 1)`): the inverse of a
/// `Wishart(Ψ⁻¹, ν)` draw.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(psi: &DMatrix<f64>, nu: f64, rng: &mut R) -> Result<DMatrix<f64>> {
    let (chol, _) = dense_cholesky(psi)?;
    let mut psi_inv = chol.inverse();
    symmetrize(&mut psi_inv);
    let w = sample_wishart(&psi_inv, nu, rng)?;
    let (cw, _) = dense_cholesky(&w)?;
    let mut x = cw.inverse();
    symmetrize(&mut x);
    Ok(x)
}

/// Result of one slice-sampling update.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SliceOutcome {
    pub value: f64,
    pub accepted: bool,
    pub evaluations: usize,
}

pub const SLICE_SCALE: f64 = std::f64::consts::LN_10;
pub const MAX_SHRINK: usize = 100;

/// One-sided shrinking slice update: a bracket of width `rho` placed uniformly
/// around `x0`, a single uniform threshold, and shrinkage toward `x0` on
/// rejection. Returns `x0` unaccepted after `max_shrink` rejections.
pub fn slice_sample_1d<F, R>(mut log_density: F, x0: f64, rho: f64, rng: &mut R, max_shrink: usize) -> SliceOutcome
where
    F: FnMut(f64) -> f64,
    R: Rng + ?Sized,
{
    let f0 = log_density(x0);
    let gamma = rng.random::<f64>() * rho;
    let mut lo = x0 - gamma;
    let mut hi = lo + rho;
    let log_eta = rng.random::<f64>().ln();
    for k in 0..max_shrink {
        let x = lo + rng.random::<f64>() * (hi - lo);
        let f = log_density(x);
        if f.is_finite() && f - f0 > log_eta {
            return SliceOutcome {
                value: x,
                accepted: true,
                evaluations: k + 2,
            };
        }
        if x < x0 {
            lo = x;
        } else {
            hi = x;
        }
    }
    SliceOutcome {
        value: x0,
        accepted: false,
        evaluations: max_shrink + 1,
    }
}

/// Log-density of `N(mean, 1/precision)` at `x`.
pub fn normal_logpdf(x: f64, mean: f64, precision: f64) -> f64 {
    let d = x - mean;
    0.5 * (precision.ln() - (2.0 * std::f64::consts::PI).ln()) - 0.5 * precision * d * d
}
