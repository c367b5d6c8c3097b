//! Sparse and structured linear algebra.

mod cholesky;
mod kron;
mod ordering;
mod pcg;
mod sparse;
mod woodbury;

pub use cholesky::{
    chol_logdet, dense_cholesky, sparse_cholesky, sparse_cholesky_with_perm, SparseChol, JITTER_LADDER,
};
pub use kron::{
    apply_mode, kron_dense, kron_matvec, kron_matvec_in_place, Diagonal, FactorOp, LinearOperator, LowerInverseOp,
    ScaledIdentity, WhitenOp,
};
pub use ordering::reverse_cuthill_mckee;
pub use pcg::{pcg_solve, PcgOptions, PcgResult};
pub use sparse::SparseSym;
pub use woodbury::{whitened_precision, woodbury_logdet, woodbury_solve, ScaledSelection, Woodbury};
