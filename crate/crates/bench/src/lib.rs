//! Benchmark fixtures.

use bckl_core::distributions::{standard_normal_vec, substream};
use bckl_core::kernels::{build_tapered_covariance, grid_coords};
use bckl_core::{
    apply_missing, generate_synthetic, KernelFamily, KernelSpec, Scenario, SparseSym, SpatioTensor, TaperFamily,
    TaperSpec,
};
use nalgebra::DMatrix;

/// Bohman-tapered squared exponential covariance on `1..=n`.
pub fn tapered(n: usize, lengthscale: f64, range: f64) -> SparseSym {
    let base = KernelSpec::new(KernelFamily::SquaredExponential, lengthscale);
    let taper = TaperSpec::new(TaperFamily::Bohman, range).expect("positive range");
    build_tapered_covariance(&grid_coords(n), &base, &taper, 1e-6).expect("valid kernel")
}

/// Well-conditioned dense SPD matrix.
pub fn random_spd(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = substream(seed, "bench spd");
    let a = DMatrix::from_vec(n, n, standard_normal_vec(n * n, &mut rng));
    &a * a.transpose() + DMatrix::identity(n, n) * n as f64
}

pub fn random_vec(n: usize, seed: u64) -> Vec<f64> {
    standard_normal_vec(n, &mut substream(seed, "bench vec"))
}

/// Quadrant-masked synthetic field of side `n`.
pub fn synthetic_train(n: usize) -> SpatioTensor {
    let full = generate_synthetic(n, n, 0.01, 1).expect("n >= 2");
    apply_missing(&full, Scenario::quadrant(), 1)
        .expect("valid scenario")
        .train
}
