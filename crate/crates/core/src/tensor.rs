//! Third-order tensor storage, observation masks, unfoldings and CP reconstruction.
//!
//! Every dense tensor in this crate is stored as a flat vector in the order of
//! `vec(X_(1))`: the mode-1 index moves fastest, then mode 2, then mode 3, so
//! entry `(m, t, p)` lives at `m + M * (t + T * p)`. This is the ordering under
//! which `(K3 ⊗ K2 ⊗ K1) vec(X)` is the separable covariance product.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Shape `(M, T, P)` of a third-order tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Dims {
    pub m: usize,
    pub t: usize,
    pub p: usize,
}

impl Dims {
    pub fn new(m: usize, t: usize, p: usize) -> Result<Self> {
        if m == 0 || t == 0 || p == 0 {
            return Err(Error::Dimension(format!(
                "tensor dimensions must be positive, got ({m}, {t}, {p})"
            )));
        }
        Ok(Self { m, t, p })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.m * self.t * self.p
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, m: usize, t: usize, p: usize) -> usize {
        m + self.m * (t + self.t * p)
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize, usize) {
        let m = idx % self.m;
        let rest = idx / self.m;
        (m, rest % self.t, rest / self.t)
    }

    /// Size along `mode`.
    pub fn size(&self, mode: Mode) -> usize {
        match mode {
            Mode::One => self.m,
            Mode::Two => self.t,
            Mode::Three => self.p,
        }
    }
}

/// Tensor mode (1 = space, 2 = time, 3 = variable).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Mode {
    One,
    Two,
    Three,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::One, Mode::Two, Mode::Three];
}

/// Flat index and coordinates of one tensor position.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Entry {
    pub idx: usize,
    pub m: usize,
    pub t: usize,
    pub p: usize,
}

/// Observation indicator (the set Ω) with a cached list of observed positions.
#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    dims: Dims,
    bits: Vec<bool>,
    observed: Vec<usize>,
}

impl Mask {
    pub fn new(dims: Dims, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "mask has {} entries, expected {}",
                bits.len(),
                dims.len()
            )));
        }
        let observed = bits.iter().enumerate().filter_map(|(i, &b)| b.then_some(i)).collect();
        Ok(Self { dims, bits, observed })
    }

    pub fn full(dims: Dims) -> Self {
        Self::new(dims, vec![true; dims.len()]).expect("length matches by construction")
    }

    pub fn empty(dims: Dims) -> Self {
        Self::new(dims, vec![false; dims.len()]).expect("length matches by construction")
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn is_observed(&self, idx: usize) -> bool {
        self.bits[idx]
    }

    /// Observed flat indices in increasing order.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Coordinates of the observed positions, in the order of [`Mask::observed`].
    pub fn entries(&self) -> Vec<Entry> {
        self.observed
            .iter()
            .map(|&idx| {
                let (m, t, p) = self.dims.coords(idx);
                Entry { idx, m, t, p }
            })
            .collect()
    }

    pub fn count(&self) -> usize {
        self.observed.len()
    }

    /// Entries observed in `self` and not in `other`.
    pub fn difference(&self, other: &Mask) -> Result<Mask> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && !b).collect();
        Mask::new(self.dims, bits)
    }

    pub fn intersection(&self, other: &Mask) -> Result<Mask> {
        self.check_same(other)?;
        let bits = self.bits.iter().zip(&other.bits).map(|(&a, &b)| a && b).collect();
        Mask::new(self.dims, bits)
    }

    fn check_same(&self, other: &Mask) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "mask shapes differ: {:?} vs {:?}",
                self.dims, other.dims
            )));
        }
        Ok(())
    }
}

/// Partially observed data tensor. Unobserved entries hold NaN and are never read.
#[derive(Clone, Debug)]
pub struct SpatioTensor {
    dims: Dims,
    values: Vec<f64>,
    mask: Mask,
}

impl SpatioTensor {
    /// Builds a tensor from values and a mask; values at unobserved positions are
    /// overwritten with NaN. Observed values must be finite.
    pub fn new(dims: Dims, mut values: Vec<f64>, mask: Mask) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "tensor has {} values, expected {}",
                values.len(),
                dims.len()
            )));
        }
        if mask.dims() != dims {
            return Err(Error::Dimension("mask shape differs from tensor".into()));
        }
        for (i, v) in values.iter_mut().enumerate() {
            if mask.is_observed(i) {
                if !v.is_finite() {
                    return Err(Error::Validation(format!("observed entry {i} is not finite")));
                }
            } else {
                *v = f64::NAN;
            }
        }
        Ok(Self { dims, values, mask })
    }

    /// Fully observed tensor.
    pub fn dense(dims: Dims, values: Vec<f64>) -> Result<Self> {
        Self::new(dims, values, Mask::full(dims))
    }

    /// Treats every NaN as missing.
    pub fn from_nan_encoded(dims: Dims, values: Vec<f64>) -> Result<Self> {
        if values.len() != dims.len() {
            return Err(Error::Dimension(format!(
                "tensor has {} values, expected {}",
                values.len(),
                dims.len()
            )));
        }
        let bits = values.iter().map(|v| !v.is_nan()).collect();
        let mask = Mask::new(dims, bits)?;
        Self::new(dims, values, mask)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Restricts the observation set to `mask` (which must be a subset of the current one).
    pub fn with_mask(&self, mask: Mask) -> Result<Self> {
        if mask.dims() != self.dims {
            return Err(Error::Dimension("mask shape differs from tensor".into()));
        }
        if mask.observed().iter().any(|&i| !self.mask.is_observed(i)) {
            return Err(Error::Validation(
                "new mask observes entries that are missing in the tensor".into(),
            ));
        }
        Self::new(self.dims, self.values.clone(), mask)
    }

    /// Observed values in increasing index order.
    pub fn observed_values(&self) -> Vec<f64> {
        self.mask.observed().iter().map(|&i| self.values[i]).collect()
    }
}

fn check_len(values: &[f64], dims: Dims) -> Result<()> {
    if values.len() != dims.len() {
        return Err(Error::Dimension(format!(
            "vector of length {} does not match tensor of size {}",
            values.len(),
            dims.len()
        )));
    }
    Ok(())
}

/// Mode-k unfolding: mode 1 gives `M × (T·P)` with column `t + T·p`, mode 2 gives
/// `T × (M·P)` with column `m + M·p`, mode 3 gives `P × (M·T)` with column `m + M·t`.
pub fn unfold(values: &[f64], dims: Dims, mode: Mode) -> Result<DMatrix<f64>> {
    check_len(values, dims)?;
    let Dims { m: nm, t: nt, p: np } = dims;
    let out = match mode {
        Mode::One => DMatrix::from_column_slice(nm, nt * np, values),
        Mode::Two => DMatrix::from_fn(nt, nm * np, |t, col| {
            let (m, p) = (col % nm, col / nm);
            values[dims.index(m, t, p)]
        }),
        Mode::Three => DMatrix::from_fn(np, nm * nt, |p, col| {
            let (m, t) = (col % nm, col / nm);
            values[dims.index(m, t, p)]
        }),
    };
    Ok(out)
}

/// Inverse of [`unfold`].
pub fn fold(matrix: &DMatrix<f64>, dims: Dims, mode: Mode) -> Result<Vec<f64>> {
    let Dims { m: nm, t: nt, p: np } = dims;
    let expected = match mode {
        Mode::One => (nm, nt * np),
        Mode::Two => (nt, nm * np),
        Mode::Three => (np, nm * nt),
    };
    if matrix.shape() != expected {
        return Err(Error::Dimension(format!(
            "mode-{mode:?} unfolding must be {expected:?}, got {:?}",
            matrix.shape()
        )));
    }
    let mut out = vec![0.0; dims.len()];
    for (idx, slot) in out.iter_mut().enumerate() {
        let (m, t, p) = dims.coords(idx);
        *slot = match mode {
            Mode::One => matrix[(m, t + nt * p)],
            Mode::Two => matrix[(t, m + nm * p)],
            Mode::Three => matrix[(p, m + nm * t)],
        };
    }
    Ok(out)
}

/// `vec(X) = vec(X_(1))`; with the crate's storage order this is a copy.
pub fn vectorize(values: &[f64], dims: Dims) -> Result<Vec<f64>> {
    check_len(values, dims)?;
    Ok(values.to_vec())
}

/// Gathers the observed entries of a full-length vector (`O₁ v`).
pub fn project_omega(full: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    check_len(full, mask.dims())?;
    Ok(mask.observed().iter().map(|&i| full[i]).collect())
}

/// Places an observed-length vector on Ω with zeros elsewhere (`O₁ᵀ s`).
pub fn scatter_omega(sub: &[f64], mask: &Mask) -> Result<Vec<f64>> {
    if sub.len() != mask.count() {
        return Err(Error::Dimension(format!(
            "subvector has {} entries, mask observes {}",
            sub.len(),
            mask.count()
        )));
    }
    let mut full = vec![0.0; mask.dims().len()];
    for (&i, &v) in mask.observed().iter().zip(sub) {
        full[i] = v;
    }
    Ok(full)
}

/// CP factor matrices `U (M×D)`, `V (T×D)`, `W (P×D)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CpFactors {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub w: DMatrix<f64>,
}

impl CpFactors {
    pub fn new(u: DMatrix<f64>, v: DMatrix<f64>, w: DMatrix<f64>) -> Result<Self> {
        if u.ncols() != v.ncols() || u.ncols() != w.ncols() {
            return Err(Error::Dimension(format!(
                "factor ranks differ: U {}, V {}, W {}",
                u.ncols(),
                v.ncols(),
                w.ncols()
            )));
        }
        Ok(Self { u, v, w })
    }

    pub fn zeros(dims: Dims, rank: usize) -> Self {
        Self {
            u: DMatrix::zeros(dims.m, rank),
            v: DMatrix::zeros(dims.t, rank),
            w: DMatrix::zeros(dims.p, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.u.ncols()
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.u.nrows(),
            t: self.v.nrows(),
            p: self.w.nrows(),
        }
    }

    /// Adds `scale · u_d ∘ v_d ∘ w_d` into `out`.
    pub fn add_component(&self, d: usize, scale: f64, out: &mut [f64]) {
        let dims = self.dims();
        let (u, v, w) = (self.u.column(d), self.v.column(d), self.w.column(d));
        for p in 0..dims.p {
            let wp = scale * w[p];
            for t in 0..dims.t {
                let vw = v[t] * wp;
                let base = dims.m * (t + dims.t * p);
                for m in 0..dims.m {
                    out[base + m] += u[m] * vw;
                }
            }
        }
    }
}

/// `x(m,t,p) = Σ_d u_md v_td w_pd`, returned in vectorized order.
pub fn cp_reconstruct(f: &CpFactors) -> Vec<f64> {
    let mut out = vec![0.0; f.dims().len()];
    for d in 0..f.rank() {
        f.add_component(d, 1.0, &mut out);
    }
    out
}
