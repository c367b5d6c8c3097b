//! Jacobi-preconditioned conjugate gradients.

/// Stopping rule: relative residual `‖b − Ax‖ / ‖b‖ ≤ tol` or `max_iter` iterations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PcgOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PcgOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 1000,
        }
    }
}

#[derive(Clone, Debug)]
pub struct PcgResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` for a symmetric positive definite operator.
///
/// `precond_diag` is the diagonal `E` of the preconditioner; the iteration is
/// equivalent to plain CG on `E^{-1/2} A E^{-1/2}`. When the iteration cap is
/// hit the best (last) iterate is returned with `converged = false`.
pub fn pcg_solve<F>(apply_a: F, b: &[f64], precond_diag: &[f64], opts: PcgOptions) -> PcgResult
where
    F: Fn(&[f64], &mut [f64]),
{
    let n = b.len();
    assert_eq!(precond_diag.len(), n, "preconditioner length must match b");
    let mut x = vec![0.0; n];
    let bnorm = dot(b, b).sqrt();
    if bnorm == 0.0 {
        return PcgResult {
            x,
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        };
    }
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(precond_diag).map(|(ri, d)| ri / d).collect();
    let mut p = z.clone();
    let mut ap = vec![0.0; n];
    let mut rz = dot(&r, &z);
    let mut relres = 1.0;
    for it in 1..=opts.max_iter {
        apply_a(&p, &mut ap);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            return PcgResult {
                x,
                iterations: it,
                relative_residual: relres,
                converged: false,
            };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        relres = dot(&r, &r).sqrt() / bnorm;
        if relres <= opts.tol {
            return PcgResult {
                x,
                iterations: it,
                relative_residual: relres,
                converged: true,
            };
        }
        for i in 0..n {
            z[i] = r[i] / precond_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    PcgResult {
        x,
        iterations: opts.max_iter,
        relative_residual: relres,
        converged: false,
    }
}
