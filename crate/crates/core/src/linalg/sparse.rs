//! Symmetric sparse matrices in compressed-column form.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Symmetric sparse matrix with both triangles stored in compressed columns.
///
/// Every diagonal position is structurally present, and row indices are sorted
/// within each column.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSym {
    n: usize,
    col_ptr: Vec<usize>,
    row_idx: Vec<usize>,
    values: Vec<f64>,
}

impl SparseSym {
    /// Assembles from `(i, j, value)` triplets. Each off-diagonal pair should be
    /// given once (either triangle); duplicates are summed.
    pub fn from_triplets<I>(n: usize, triplets: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let mut cols: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
        for (j, col) in cols.iter_mut().enumerate() {
            col.push((j, 0.0));
        }
        for (i, j, v) in triplets {
            if i >= n || j >= n {
                return Err(Error::Dimension(format!("entry ({i}, {j}) outside a {n}x{n} matrix")));
            }
            cols[j].push((i, v));
            if i != j {
                cols[i].push((j, v));
            }
        }
        let mut col_ptr = Vec::with_capacity(n + 1);
        let mut row_idx = Vec::new();
        let mut values = Vec::new();
        col_ptr.push(0);
        for mut col in cols {
            col.sort_by_key(|&(i, _)| i);
            let mut last = usize::MAX;
            for (i, v) in col {
                if i == last {
                    *values.last_mut().expect("entry pushed above") += v;
                } else {
                    row_idx.push(i);
                    values.push(v);
                    last = i;
                }
            }
            col_ptr.push(row_idx.len());
        }
        Ok(Self {
            n,
            col_ptr,
            row_idx,
            values,
        })
    }

    pub fn identity(n: usize) -> Self {
        Self::from_triplets(n, (0..n).map(|i| (i, i, 1.0))).expect("indices in range")
    }

    /// Keeps entries of a symmetric dense matrix whose magnitude exceeds `drop_tol`
    /// (diagonal always kept).
    pub fn from_dense(a: &DMatrix<f64>, drop_tol: f64) -> Result<Self> {
        if !a.is_square() {
            return Err(Error::Dimension("matrix is not square".into()));
        }
        let n = a.nrows();
        let mut trip = Vec::new();
        for j in 0..n {
            for i in j..n {
                let v = a[(i, j)];
                if i == j || v.abs() > drop_tol {
                    trip.push((i, j, v));
                }
            }
        }
        Self::from_triplets(n, trip)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Stored entries counting both triangles.
    pub fn nnz(&self) -> usize {
        self.row_idx.len()
    }

    pub fn col_ptr(&self) -> &[usize] {
        &self.col_ptr
    }

    pub fn row_idx(&self) -> &[usize] {
        &self.row_idx
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .iter()
            .copied()
            .zip(self.values[range].iter().copied())
    }

    /// Stored value at `(i, j)`, or `None` when structurally absent.
    pub fn get(&self, i: usize, j: usize) -> Option<f64> {
        let range = self.col_ptr[j]..self.col_ptr[j + 1];
        self.row_idx[range.clone()]
            .binary_search(&i)
            .ok()
            .map(|k| self.values[range.start + k])
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.n)
            .map(|j| self.get(j, j).expect("diagonal is always stored"))
            .collect()
    }

    pub fn add_diagonal(&mut self, shift: f64) {
        for j in 0..self.n {
            let range = self.col_ptr[j]..self.col_ptr[j + 1];
            let k = self.row_idx[range.clone()]
                .binary_search(&j)
                .expect("diagonal is always stored");
            self.values[range.start + k] += shift;
        }
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        debug_assert_eq!(y.len(), self.n);
        y.iter_mut().for_each(|v| *v = 0.0);
        for (j, &xj) in x.iter().enumerate() {
            if xj == 0.0 {
                continue;
            }
            for k in self.col_ptr[j]..self.col_ptr[j + 1] {
                y[self.row_idx[k]] += self.values[k] * xj;
            }
        }
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for (i, v) in self.column(j) {
                a[(i, j)] = v;
            }
        }
        a
    }

    /// Whether the stored pattern and values are mirror images.
    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|j| {
            self.column(j)
                .all(|(i, v)| self.get(j, i).is_some_and(|w| (v - w).abs() <= tol))
        })
    }
}
