//! Stationary kernels, compactly supported tapers and covariance assembly.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::SparseSym;

pub const DEFAULT_JITTER: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    #[serde(alias = "se")]
    SquaredExponential,
    #[serde(rename = "matern32", alias = "matern-3/2")]
    Matern32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub lengthscale: f64,
    pub variance: f64,
}

impl KernelSpec {
    /// Unit-variance kernel.
    pub fn new(family: KernelFamily, lengthscale: f64) -> Self {
        Self {
            family,
            lengthscale,
            variance: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lengthscale > 0.0 && self.lengthscale.is_finite()) {
            return Err(Error::Parameter(format!(
                "lengthscale must be positive and finite, got {}",
                self.lengthscale
            )));
        }
        if !(self.variance > 0.0 && self.variance.is_finite()) {
            return Err(Error::Parameter(format!(
                "variance must be positive, got {}",
                self.variance
            )));
        }
        Ok(())
    }

    fn eval_unchecked(&self, h: f64) -> f64 {
        let r = h / self.lengthscale;
        match self.family {
            KernelFamily::SquaredExponential => self.variance * (-0.5 * r * r).exp(),
            KernelFamily::Matern32 => {
                let a = 3f64.sqrt() * r;
                self.variance * (1.0 + a) * (-a).exp()
            }
        }
    }
}

pub fn kernel_eval(spec: &KernelSpec, h: f64) -> Result<f64> {
    spec.validate()?;
    if !(h >= 0.0) {
        return Err(Error::Parameter(format!("distance must be nonnegative, got {h}")));
    }
    Ok(spec.eval_unchecked(h))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaperFamily {
    Bohman,
    Wendland,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaperSpec {
    pub family: TaperFamily,
    pub range: f64,
}

impl TaperSpec {
    pub fn new(family: TaperFamily, range: f64) -> Result<Self> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(Error::Parameter(format!("taper range must be positive, got {range}")));
        }
        Ok(Self { family, range })
    }
}

pub fn taper_eval(spec: &TaperSpec, delta: f64) -> f64 {
    let x = delta / spec.range;
    if x >= 1.0 {
        return 0.0;
    }
    match spec.family {
        TaperFamily::Bohman => (1.0 - x) * (PI * x).cos() + (PI * x).sin() / PI,
        TaperFamily::Wendland => (1.0 - x).powi(4) * (1.0 + 4.0 * x),
    }
}

/// Prior covariance choice for a factor matrix's columns.
#[derive(Clone, Debug, PartialEq)]
pub enum FactorPrior {
    /// Unit-variance kernel with a sampled lengthscale.
    Kernel(KernelFamily),
    /// Identity covariance, no lengthscale.
    White,
    /// Fixed user-supplied covariance.
    Precomputed(DMatrix<f64>),
}

impl FactorPrior {
    pub fn has_lengthscale(&self) -> bool {
        matches!(self, FactorPrior::Kernel(_))
    }

    /// Covariance at `lengthscale` (ignored unless the prior is a kernel).
    pub fn covariance(&self, coords: &[f64], lengthscale: f64, jitter: f64) -> Result<DMatrix<f64>> {
        match self {
            FactorPrior::Kernel(family) => {
                build_factor_covariance(coords, &KernelSpec::new(*family, lengthscale), jitter)
            }
            FactorPrior::White => Ok(DMatrix::identity(coords.len(), coords.len())),
            FactorPrior::Precomputed(k) => validate_precomputed(k, coords.len(), jitter),
        }
    }
}

/// Coordinates `1, 2, …, n` of a regular grid with unit spacing.
pub fn grid_coords(n: usize) -> Vec<f64> {
    (1..=n).map(|i| i as f64).collect()
}

pub fn build_factor_covariance(coords: &[f64], spec: &KernelSpec, jitter: f64) -> Result<DMatrix<f64>> {
    spec.validate()?;
    let n = coords.len();
    let mut k = DMatrix::zeros(n, n);
    for j in 0..n {
        k[(j, j)] = spec.variance + jitter;
        for i in 0..j {
            let v = spec.eval_unchecked((coords[i] - coords[j]).abs());
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

/// Checks shape and symmetry of an external covariance and adds jitter.
pub fn validate_precomputed(k: &DMatrix<f64>, n: usize, jitter: f64) -> Result<DMatrix<f64>> {
    if k.nrows() != n || k.ncols() != n {
        return Err(Error::Validation(format!(
            "precomputed covariance is {}x{}, expected {n}x{n}",
            k.nrows(),
            k.ncols()
        )));
    }
    let scale = k.amax().max(1.0);
    for j in 0..n {
        for i in 0..j {
            if (k[(i, j)] - k[(j, i)]).abs() > 1e-10 * scale {
                return Err(Error::Validation(format!(
                    "precomputed covariance asymmetric at ({i},{j})"
                )));
            }
        }
        if !k[(j, j)].is_finite() || k[(j, j)] <= 0.0 {
            return Err(Error::Validation(format!(
                "precomputed covariance diagonal {j} not positive"
            )));
        }
    }
    let mut out = (k + k.transpose()) * 0.5;
    for j in 0..n {
        out[(j, j)] += jitter;
    }
    Ok(out)
}

/// `K(i,j) = k₀(Δ)·taper(Δ)`, storing only pairs with `Δ < λ`.
pub fn build_tapered_covariance(
    coords: &[f64],
    base: &KernelSpec,
    taper: &TaperSpec,
    jitter: f64,
) -> Result<SparseSym> {
    base.validate()?;
    let n = coords.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| coords[a].total_cmp(&coords[b]));
    let mut triplets = Vec::new();
    for (a, &i) in order.iter().enumerate() {
        triplets.push((i, i, base.variance + jitter));
        for &j in &order[a + 1..] {
            let delta = coords[j] - coords[i];
            if delta >= taper.range {
                break;
            }
            let v = base.eval_unchecked(delta) * taper_eval(taper, delta);
            triplets.push((i.max(j), i.min(j), v));
        }
    }
    SparseSym::from_triplets(n, triplets)
}
