//! Matrix-like operators and Kronecker-structured products on vectorized tensors.

use nalgebra::DMatrix;

use super::{SparseChol, SparseSym};
use crate::error::{Error, Result};
use crate::tensor::{Dims, Mode};

/// Anything that can be applied to a vector.
pub trait LinearOperator {
    fn dim(&self) -> usize;

    /// `y = A x`, overwriting `y`.
    fn apply(&self, x: &[f64], y: &mut [f64]);

    /// `Some(s)` when the operator is `s · I`.
    fn as_scalar(&self) -> Option<f64> {
        None
    }
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let n = self.nrows();
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            let col = &self.as_slice()[j * n..(j + 1) * n];
            for (yi, &a) in y.iter_mut().zip(col) {
                *yi += a * xj;
            }
        }
    }
}

impl LinearOperator for SparseSym {
    fn dim(&self) -> usize {
        self.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec_into(x, y);
    }
}

/// Diagonal matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Diagonal(pub Vec<f64>);

impl LinearOperator for Diagonal {
    fn dim(&self) -> usize {
        self.0.len()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for ((yi, &xi), &d) in y.iter_mut().zip(x).zip(&self.0) {
            *yi = d * xi;
        }
    }
}

/// `scale · I_n`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScaledIdentity {
    pub n: usize,
    pub scale: f64,
}

impl ScaledIdentity {
    pub fn identity(n: usize) -> Self {
        Self { n, scale: 1.0 }
    }
}

impl LinearOperator for ScaledIdentity {
    fn dim(&self) -> usize {
        self.n
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (yi, &xi) in y.iter_mut().zip(x) {
            *yi = self.scale * xi;
        }
    }

    fn as_scalar(&self) -> Option<f64> {
        Some(self.scale)
    }
}

/// The square-root factor `F` of a sparse Cholesky (`A = F Fᵀ`).
pub struct FactorOp<'a>(pub &'a SparseChol);

impl LinearOperator for FactorOp<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply_factor(x, y);
    }
}

/// `F⁻¹` of a sparse Cholesky.
pub struct WhitenOp<'a>(pub &'a SparseChol);

impl LinearOperator for WhitenOp<'_> {
    fn dim(&self) -> usize {
        self.0.n()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.0.apply_factor_inverse(x, y);
    }
}

/// Inverse of a dense lower-triangular matrix, applied by forward substitution.
pub struct LowerInverseOp<'a>(pub &'a DMatrix<f64>);

impl LinearOperator for LowerInverseOp<'_> {
    fn dim(&self) -> usize {
        self.0.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        let l = self.0;
        let n = l.nrows();
        for i in 0..n {
            let mut acc = x[i];
            for j in 0..i {
                acc -= l[(i, j)] * y[j];
            }
            y[i] = acc / l[(i, i)];
        }
    }
}

/// Applies `op` along one mode of a vectorized tensor, in place.
pub fn apply_mode(op: &dyn LinearOperator, data: &mut [f64], dims: Dims, mode: Mode) -> Result<()> {
    let n = dims.size(mode);
    if op.dim() != n {
        return Err(Error::Dimension(format!(
            "operator of order {} applied along mode {mode:?} of size {n}",
            op.dim()
        )));
    }
    if data.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "vector of length {} for tensor of size {}",
            data.len(),
            dims.len()
        )));
    }
    if let Some(s) = op.as_scalar() {
        if s != 1.0 {
            data.iter_mut().for_each(|v| *v *= s);
        }
        return Ok(());
    }
    let (stride, outer_stride, inner, outer) = match mode {
        Mode::One => (1, dims.m, 1, dims.t * dims.p),
        Mode::Two => (dims.m, dims.m * dims.t, dims.m, dims.p),
        Mode::Three => (dims.m * dims.t, 0, dims.m * dims.t, 1),
    };
    let mut fiber = vec![0.0; n];
    let mut out = vec![0.0; n];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * outer_stride + i;
            for k in 0..n {
                fiber[k] = data[base + k * stride];
            }
            op.apply(&fiber, &mut out);
            for k in 0..n {
                data[base + k * stride] = out[k];
            }
        }
    }
    Ok(())
}

/// `(K3 ⊗ K2 ⊗ K1) y` by sequential mode products, never forming the product.
pub fn kron_matvec(
    k1: &dyn LinearOperator,
    k2: &dyn LinearOperator,
    k3: &dyn LinearOperator,
    y: &[f64],
) -> Result<Vec<f64>> {
    let dims = Dims::new(k1.dim(), k2.dim(), k3.dim())?;
    let mut out = y.to_vec();
    kron_matvec_in_place(k1, k2, k3, &mut out, dims)?;
    Ok(out)
}

pub fn kron_matvec_in_place(
    k1: &dyn LinearOperator,
    k2: &dyn LinearOperator,
    k3: &dyn LinearOperator,
    data: &mut [f64],
    dims: Dims,
) -> Result<()> {
    apply_mode(k1, data, dims, Mode::One)?;
    apply_mode(k2, data, dims, Mode::Two)?;
    apply_mode(k3, data, dims, Mode::Three)
}

/// Dense `A ⊗ B`.
pub fn kron_dense(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    a.kronecker(b)
}
