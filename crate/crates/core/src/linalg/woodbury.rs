//! Sherman–Morrison–Woodbury solves for `τ⁻¹ I + H K Hᵀ` where `H` has exactly
//! one nonzero per row (a gather followed by a per-row scaling).

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::cholesky::chol_logdet;
use crate::error::{Error, Result};

/// `H` with `H[i, cols[i]] = coefs[i]` and zeros elsewhere.
#[derive(Clone, Debug, PartialEq)]
pub struct ScaledSelection {
    cols: Vec<usize>,
    coefs: Vec<f64>,
    ncols: usize,
}

impl ScaledSelection {
    pub fn new(cols: Vec<usize>, coefs: Vec<f64>, ncols: usize) -> Result<Self> {
        if cols.len() != coefs.len() {
            return Err(Error::Dimension("column and coefficient lists differ".into()));
        }
        if cols.iter().any(|&c| c >= ncols) {
            return Err(Error::Dimension(format!("column index out of range 0..{ncols}")));
        }
        Ok(Self { cols, coefs, ncols })
    }

    pub fn nrows(&self) -> usize {
        self.cols.len()
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.cols.iter().zip(&self.coefs).map(|(&c, &a)| a * x[c]).collect()
    }

    pub fn apply_transpose(&self, y: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for ((&c, &a), &yi) in self.cols.iter().zip(&self.coefs).zip(y) {
            out[c] += a * yi;
        }
        out
    }

    /// Diagonal of `HᵀH`.
    pub fn gram_diag(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.ncols];
        for (&c, &a) in self.cols.iter().zip(&self.coefs) {
            out[c] += a * a;
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.nrows(), self.ncols);
        for (i, (&c, &a)) in self.cols.iter().zip(&self.coefs).enumerate() {
            h[(i, c)] = a;
        }
        h
    }
}

/// `B = I + Lᵀ diag(d) L`; with `K = L Lᵀ` this is `Lᵀ (K⁻¹ + diag(d)) L`.
pub fn whitened_precision(l: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
    let mut s = l.clone();
    for (i, &di) in d.iter().enumerate() {
        let r = di.max(0.0).sqrt();
        s.row_mut(i).scale_mut(r);
    }
    let mut b = s.tr_mul(&s);
    for i in 0..b.nrows() {
        b[(i, i)] += 1.0;
    }
    b
}

/// Factorized `Σ = τ⁻¹ I + H K Hᵀ` through `C = I + τ G^½ K G^½`, where
/// `G = HᵀH` is diagonal. `log |Σ| = log |C| − n log τ` and
/// `(K⁻¹ + τ G)⁻¹ = K − τ K G^½ C⁻¹ G^½ K`, so `K` itself is never factorized.
pub struct Woodbury {
    k: DMatrix<f64>,
    sqrt_g: Vec<f64>,
    inner: Cholesky<f64, Dyn>,
    tau: f64,
    nrows: usize,
}

impl Woodbury {
    /// `gram` is the diagonal of `HᵀH` and `nrows` the number of rows of `H`.
    pub fn from_covariance(k: DMatrix<f64>, gram: &[f64], tau: f64, nrows: usize) -> Result<Self> {
        if !(tau > 0.0 && tau.is_finite()) {
            return Err(Error::Parameter(format!("noise precision must be positive, got {tau}")));
        }
        if gram.len() != k.nrows() || !k.is_square() {
            return Err(Error::Dimension("gram diagonal length differs from K".into()));
        }
        let sqrt_g: Vec<f64> = gram.iter().map(|g| g.max(0.0).sqrt()).collect();
        let n = k.nrows();
        let mut c = DMatrix::zeros(n, n);
        for j in 0..n {
            for i in 0..n {
                c[(i, j)] = tau * sqrt_g[i] * k[(i, j)] * sqrt_g[j];
            }
            c[(j, j)] += 1.0;
        }
        let inner = Cholesky::new(c).ok_or_else(|| Error::NotPositiveDefinite("Woodbury inner system".into()))?;
        Ok(Self {
            k,
            sqrt_g,
            inner,
            tau,
            nrows,
        })
    }

    pub fn new(h: &ScaledSelection, k: &DMatrix<f64>, tau: f64) -> Result<Self> {
        if k.nrows() != h.ncols() {
            return Err(Error::Dimension("K order differs from the columns of H".into()));
        }
        Self::from_covariance(k.clone(), &h.gram_diag(), tau, h.nrows())
    }

    /// `(K⁻¹ + τ HᵀH)⁻¹ c`.
    pub fn inner_solve(&self, c: &[f64]) -> DVector<f64> {
        let kc = &self.k * DVector::from_column_slice(c);
        let mut g = kc.clone();
        for (gi, s) in g.iter_mut().zip(&self.sqrt_g) {
            *gi *= s;
        }
        let mut z = self.inner.solve(&g);
        for (zi, s) in z.iter_mut().zip(&self.sqrt_g) {
            *zi *= s;
        }
        kc - (&self.k * z) * self.tau
    }

    /// `yᵀ Σ⁻¹ y` given `yᵀy` and `c = Hᵀ y`.
    pub fn quadratic_form(&self, yty: f64, hty: &[f64]) -> f64 {
        let v = self.inner_solve(hty);
        let cross: f64 = hty.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
        self.tau * yty - self.tau * self.tau * cross
    }

    /// `log |Σ|`.
    pub fn logdet(&self) -> f64 {
        chol_logdet(&self.inner) - self.nrows as f64 * self.tau.ln()
    }

    /// `Σ⁻¹ y = τ y − τ² H (K⁻¹ + τ HᵀH)⁻¹ Hᵀ y`.
    pub fn solve(&self, h: &ScaledSelection, y: &[f64]) -> Vec<f64> {
        let v = self.inner_solve(&h.apply_transpose(y));
        let hv = h.apply(v.as_slice());
        y.iter()
            .zip(hv)
            .map(|(&yi, hvi)| self.tau * yi - self.tau * self.tau * hvi)
            .collect()
    }
}

pub fn woodbury_solve(h: &ScaledSelection, k: &DMatrix<f64>, tau: f64, y: &[f64]) -> Result<Vec<f64>> {
    if y.len() != h.nrows() {
        return Err(Error::Dimension("right-hand side length differs from rows of H".into()));
    }
    Ok(Woodbury::new(h, k, tau)?.solve(h, y))
}

pub fn woodbury_logdet(h: &ScaledSelection, k: &DMatrix<f64>, tau: f64) -> Result<f64> {
    Ok(Woodbury::new(h, k, tau)?.logdet())
}
