//! Sparse Cholesky factorization (up-looking, elimination-tree driven) behind a
//! fill-reducing permutation, plus a jittered dense Cholesky used for the small
//! factor covariances.

use nalgebra::{Cholesky, DMatrix, Dyn};

use super::ordering::reverse_cuthill_mckee;
use super::SparseSym;
use crate::error::{Error, Result};

/// Extra diagonal shifts tried, in order, when a factorization breaks down.
pub const JITTER_LADDER: [f64; 4] = [0.0, 1e-6, 1e-5, 1e-4];

/// `P A Pᵀ = L Lᵀ` with `L` sparse lower triangular.
///
/// Columns of `L` are stored with the diagonal first and row indices increasing.
/// In the original ordering the factor is `F = Pᵀ L`, so `A = F Fᵀ`; the
/// `apply_factor*` methods act with `F`.
#[derive(Clone, Debug)]
pub struct SparseChol {
    n: usize,
    perm: Vec<usize>,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
    jitter: f64,
}

struct Symbolic {
    perm: Vec<usize>,
    parent: Vec<usize>,
    col_ptr: Vec<usize>,
}

const NONE: usize = usize::MAX;

/// Factorizes `a`, escalating diagonal jitter through [`JITTER_LADDER`].
pub fn sparse_cholesky(a: &SparseSym) -> Result<SparseChol> {
    let perm = reverse_cuthill_mckee(a);
    sparse_cholesky_with_perm(a, perm)
}

/// Factorizes with a caller-supplied ordering (`perm[k]` = original index at `k`).
pub fn sparse_cholesky_with_perm(a: &SparseSym, perm: Vec<usize>) -> Result<SparseChol> {
    if perm.len() != a.n() {
        return Err(Error::Dimension("permutation length differs from matrix".into()));
    }
    let upper = permuted_upper(a, &perm);
    let sym = symbolic(&upper, perm);
    let mut last = String::new();
    for &jitter in &JITTER_LADDER {
        match numeric(&upper, &sym, jitter) {
            Ok((row_idx, values)) => {
                return Ok(SparseChol {
                    n: a.n(),
                    perm: sym.perm,
                    col_ptr: sym.col_ptr,
                    row_idx,
                    values,
                    jitter,
                })
            }
            Err(pivot) => last = format!("pivot {pivot} nonpositive with jitter {jitter:e}"),
        }
    }
    Err(Error::NotPositiveDefinite(last))
}

/// Upper triangle of `P A Pᵀ` by columns, rows sorted.
fn permuted_upper(a: &SparseSym, perm: &[usize]) -> Vec<Vec<(usize, f64)>> {
    let n = a.n();
    let mut inv = vec![0; n];
    for (k, &p) in perm.iter().enumerate() {
        inv[p] = k;
    }
    (0..n)
        .map(|k| {
            let mut col: Vec<(usize, f64)> = a
                .column(perm[k])
                .map(|(i, v)| (inv[i], v))
                .filter(|&(i, _)| i <= k)
                .collect();
            col.sort_by_key(|&(i, _)| i);
            col
        })
        .collect()
}

fn symbolic(upper: &[Vec<(usize, f64)>], perm: Vec<usize>) -> Symbolic {
    let n = upper.len();
    // Elimination tree with path compression.
    let mut parent = vec![NONE; n];
    let mut ancestor = vec![NONE; n];
    for (k, col) in upper.iter().enumerate() {
        for &(start, _) in col {
            let mut i = start;
            while i != NONE && i < k {
                let next = ancestor[i];
                ancestor[i] = k;
                if next == NONE {
                    parent[i] = k;
                }
                i = next;
            }
        }
    }
    // Column counts from the row patterns.
    let mut counts = vec![1usize; n];
    let mut stack = vec![0; n];
    let mut mark = vec![NONE; n];
    for k in 0..n {
        let top = ereach(upper, k, &parent, &mut stack, &mut mark);
        for &j in &stack[top..] {
            counts[j] += 1;
        }
    }
    let mut col_ptr = Vec::with_capacity(n + 1);
    col_ptr.push(0);
    for c in counts {
        col_ptr.push(col_ptr.last().expect("non-empty") + c);
    }
    Symbolic { perm, parent, col_ptr }
}

/// Nonzero pattern of row `k` of `L` (excluding the diagonal) in topological
/// order, written to `stack[top..]`.
fn ereach(upper: &[Vec<(usize, f64)>], k: usize, parent: &[usize], stack: &mut [usize], mark: &mut [usize]) -> usize {
    let n = upper.len();
    let mut top = n;
    mark[k] = k;
    let mut path = Vec::new();
    for &(start, _) in &upper[k] {
        let mut i = start;
        while i != NONE && mark[i] != k {
            path.push(i);
            mark[i] = k;
            i = parent[i];
        }
        while let Some(i) = path.pop() {
            top -= 1;
            stack[top] = i;
        }
    }
    top
}

fn numeric(
    upper: &[Vec<(usize, f64)>],
    sym: &Symbolic,
    jitter: f64,
) -> std::result::Result<(Vec<usize>, Vec<f64>), usize> {
    let n = upper.len();
    let nnz = sym.col_ptr[n];
    let mut row_idx = vec![0usize; nnz];
    let mut values = vec![0.0f64; nnz];
    let mut next = sym.col_ptr[..n].to_vec();
    let mut x = vec![0.0f64; n];
    let mut stack = vec![0usize; n];
    let mut mark = vec![NONE; n];
    for k in 0..n {
        let top = ereach(upper, k, &sym.parent, &mut stack, &mut mark);
        x[k] = 0.0;
        for &(i, v) in &upper[k] {
            x[i] = v;
        }
        let mut d = x[k] + jitter;
        x[k] = 0.0;
        for &i in &stack[top..] {
            let lki = x[i] / values[sym.col_ptr[i]];
            x[i] = 0.0;
            for p in sym.col_ptr[i] + 1..next[i] {
                x[row_idx[p]] -= values[p] * lki;
            }
            d -= lki * lki;
            let p = next[i];
            next[i] += 1;
            row_idx[p] = k;
            values[p] = lki;
        }
        if !(d > 0.0) || !d.is_finite() {
            return Err(k);
        }
        let p = next[k];
        next[k] += 1;
        row_idx[p] = k;
        values[p] = d.sqrt();
    }
    Ok((row_idx, values))
}

impl SparseChol {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn perm(&self) -> &[usize] {
        &self.perm
    }

    /// Diagonal shift that was needed for the factorization to succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    /// Stored entries of `L` (lower triangle including the diagonal).
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// `log |A| = 2 Σ log L_kk`.
    pub fn logdet(&self) -> f64 {
        2.0 * (0..self.n).map(|k| self.values[self.col_ptr[k]].ln()).sum::<f64>()
    }

    /// Dense copy of `L` in the permuted ordering.
    pub fn l_dense(&self) -> DMatrix<f64> {
        let mut l = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                l[(self.row_idx[p], j)] = self.values[p];
            }
        }
        l
    }

    fn lower_solve_in_place(&self, x: &mut [f64]) {
        for j in 0..self.n {
            let start = self.col_ptr[j];
            x[j] /= self.values[start];
            let xj = x[j];
            for p in start + 1..self.col_ptr[j + 1] {
                x[self.row_idx[p]] -= self.values[p] * xj;
            }
        }
    }

    fn upper_solve_in_place(&self, x: &mut [f64]) {
        for j in (0..self.n).rev() {
            let start = self.col_ptr[j];
            let mut acc = x[j];
            for p in start + 1..self.col_ptr[j + 1] {
                acc -= self.values[p] * x[self.row_idx[p]];
            }
            x[j] = acc / self.values[start];
        }
    }

    fn lower_mul(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate().take(self.n) {
            if xj == 0.0 {
                continue;
            }
            for p in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[p]] += self.values[p] * xj;
            }
        }
    }

    /// Solves `A x = b` in the original ordering.
    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = self.perm.iter().map(|&i| b[i]).collect();
        self.lower_solve_in_place(&mut x);
        self.upper_solve_in_place(&mut x);
        let mut out = vec![0.0; self.n];
        for (k, &i) in self.perm.iter().enumerate() {
            out[i] = x[k];
        }
        out
    }

    /// `y = F x = Pᵀ L x`; maps white noise to a draw with covariance `A`.
    pub fn apply_factor(&self, x: &[f64], y: &mut [f64]) {
        let mut tmp = vec![0.0; self.n];
        self.lower_mul(x, &mut tmp);
        for (k, &i) in self.perm.iter().enumerate() {
            y[i] = tmp[k];
        }
    }

    /// `y = F⁻¹ x = L⁻¹ P x` (whitening).
    pub fn apply_factor_inverse(&self, x: &[f64], y: &mut [f64]) {
        for (k, &i) in self.perm.iter().enumerate() {
            y[k] = x[i];
        }
        self.lower_solve_in_place(y);
    }
}

/// Dense Cholesky with the jitter ladder; returns the factorization and the
/// shift that was added to the diagonal.
pub fn dense_cholesky(a: &DMatrix<f64>) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if !a.is_square() {
        return Err(Error::Dimension("matrix is not square".into()));
    }
    for &jitter in &JITTER_LADDER {
        let mut shifted = a.clone();
        if jitter > 0.0 {
            for i in 0..a.nrows() {
                shifted[(i, i)] += jitter;
            }
        }
        if let Some(c) = Cholesky::new(shifted) {
            if c.l_dirty().diagonal().iter().all(|d| d.is_finite() && *d > 0.0) {
                return Ok((c, jitter));
            }
        }
    }
    Err(Error::NotPositiveDefinite(format!(
        "dense {}x{} matrix after jitter up to {:e}",
        a.nrows(),
        a.ncols(),
        JITTER_LADDER[JITTER_LADDER.len() - 1]
    )))
}

/// `log |A|` from a Cholesky factorization.
pub fn chol_logdet(c: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * c.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}
