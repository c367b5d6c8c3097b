//! Dense oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

use bckl_core::distributions::{slice_sample_1d, substream, MAX_SHRINK, SLICE_SCALE};
use bckl_core::global::{add_component_observed, factor_conditional, GlobalModel, GlobalState, NormalPrior};
use bckl_core::kernels::{grid_coords, FactorPrior, KernelFamily, TaperFamily, TaperSpec};
use bckl_core::linalg::{kron_dense, PcgOptions};
use bckl_core::local::{GammaPrior, K3Mode, LocalComponent, LocalModel, VariableCov};
use bckl_core::tensor::{unfold, CpFactors, Dims, Entry, Mask, Mode};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

pub fn global_model(dims: Dims, rank: usize) -> GlobalModel {
    GlobalModel {
        dims,
        rank,
        coords_u: grid_coords(dims.m),
        coords_v: grid_coords(dims.t),
        prior_u: FactorPrior::Kernel(KernelFamily::SquaredExponential),
        prior_v: FactorPrior::Kernel(KernelFamily::Matern32),
        phi_prior: NormalPrior {
            mean: 10f64.ln(),
            precision: 1.0,
        },
        delta_prior: NormalPrior {
            mean: 10f64.ln(),
            precision: 1.0,
        },
        psi0: DMatrix::identity(dims.p, dims.p),
        nu0: dims.p as f64,
        jitter: 1e-6,
    }
}

pub fn random_matrix<R: Rng>(r: usize, c: usize, rng: &mut R) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.random::<f64>() * 2.0 - 1.0)
}

pub fn random_state<R: Rng>(model: &GlobalModel, rng: &mut R) -> GlobalState {
    let Dims { m, t, p } = model.dims;
    let d = model.rank;
    let factors = CpFactors::new(
        random_matrix(m, d, rng),
        random_matrix(t, d, rng),
        random_matrix(p, d, rng),
    )
    .unwrap();
    let phi = (0..d).map(|_| rng.random::<f64>() * 1.5 - 0.5).collect();
    let delta = (0..d).map(|_| rng.random::<f64>() * 1.5 - 0.5).collect();
    let a = random_matrix(p, p, rng);
    let lambda_w = &a * a.transpose() + DMatrix::identity(p, p);
    GlobalState::new(model, factors, phi, delta, lambda_w).unwrap()
}

/// Residual `Y − Σ_{h≠d} u_h∘v_h∘w_h` on Ω, zero elsewhere.
pub fn residual_without(y: &[f64], f: &CpFactors, d: usize, entries: &[Entry]) -> Vec<f64> {
    let mut resid = vec![0.0; y.len()];
    for e in entries {
        resid[e.idx] = y[e.idx];
    }
    for h in 0..f.rank() {
        if h != d {
            add_component_observed(f, h, -1.0, &mut resid, entries);
        }
    }
    resid
}

/// Dense evaluation with an explicit selection matrix `H` and the masked unfolding.
pub fn dense_conditional(
    state: &GlobalState,
    model: &GlobalModel,
    mode: Mode,
    d: usize,
    resid: &[f64],
    mask: &Mask,
    tau: f64,
) -> (DVector<f64>, DMatrix<f64>) {
    let dims = model.dims;
    let f = &state.factors;
    let n = dims.size(mode);
    let obs = mask.observed();
    // Kronecker vector matching the mode-k unfolding column order.
    let (a, b) = match mode {
        Mode::One => (f.v.column(d).clone_owned(), f.w.column(d).clone_owned()),
        Mode::Two => (f.u.column(d).clone_owned(), f.w.column(d).clone_owned()),
        Mode::Three => (f.u.column(d).clone_owned(), f.v.column(d).clone_owned()),
    };
    let kron = DVector::from_fn(a.len() * b.len(), |i, _| a[i % a.len()] * b[i / a.len()]);
    let mut h = DMatrix::zeros(obs.len(), n);
    let mut y = DVector::zeros(obs.len());
    for (row, &idx) in obs.iter().enumerate() {
        let (m, t, p) = dims.coords(idx);
        let (r, col) = match mode {
            Mode::One => (m, t + dims.t * p),
            Mode::Two => (t, m + dims.m * p),
            Mode::Three => (p, m + dims.m * t),
        };
        h[(row, r)] = kron[col];
        y[row] = resid[idx];
    }
    let prior_prec = match mode {
        Mode::Three => state.lambda_w.clone(),
        _ => {
            let x = if mode == Mode::One {
                state.phi[d]
            } else {
                state.delta[d]
            };
            model.covariance(mode, x).unwrap().try_inverse().unwrap()
        }
    };
    let lambda = h.transpose() * &h * tau + prior_prec;
    // Linear term through the masked unfolding rather than H.
    let masked: Vec<f64> = (0..dims.len())
        .map(|i| if mask.is_observed(i) { resid[i] } else { 0.0 })
        .collect();
    let eta = unfold(&masked, dims, mode).unwrap() * &kron * tau;
    let via_h = h.transpose() * &y * tau;
    assert!((&eta - &via_h).amax() < 1e-12);
    let mean = lambda.clone().lu().solve(&eta).unwrap();
    (mean, lambda)
}

pub fn close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    let scale = b.amax().max(1.0);
    (a - b).amax() <= tol * scale
}

pub fn check_instance<R: Rng>(dims: Dims, bits: Vec<bool>, rng: &mut R) {
    let model = global_model(dims, 2);
    let state = random_state(&model, rng);
    let mask = Mask::new(dims, bits).unwrap();
    let entries = mask.entries();
    let y: Vec<f64> = (0..dims.len()).map(|_| rng.random::<f64>() * 4.0 - 2.0).collect();
    let tau = 0.5 + rng.random::<f64>() * 5.0;
    for d in 0..2 {
        let resid = residual_without(&y, &state.factors, d, &entries);
        for mode in Mode::ALL {
            let fast = factor_conditional(&state, mode, d, &resid, &entries, tau).unwrap();
            let (mean, lambda) = dense_conditional(&state, &model, mode, d, &resid, &mask, tau);
            assert!(close(&fast.precision, &lambda, 1e-10), "precision mismatch {mode:?}");
            assert!(
                close(
                    &DMatrix::from_column_slice(mean.len(), 1, fast.mean.as_slice()),
                    &DMatrix::from_column_slice(mean.len(), 1, mean.as_slice()),
                    1e-10
                ),
                "mean mismatch {mode:?}"
            );
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn dense_logmarginal(
    model: &GlobalModel,
    state: &GlobalState,
    mode: Mode,
    d: usize,
    x: f64,
    resid: &[f64],
    mask: &Mask,
    tau: f64,
) -> f64 {
    let dims = model.dims;
    let f = &state.factors;
    let obs = mask.observed();
    let n = dims.size(mode);
    let mut h = DMatrix::zeros(obs.len(), n);
    let mut y = DVector::zeros(obs.len());
    for (row, &idx) in obs.iter().enumerate() {
        let (m, t, p) = dims.coords(idx);
        match mode {
            Mode::One => h[(row, m)] = f.v[(t, d)] * f.w[(p, d)],
            _ => h[(row, t)] = f.u[(m, d)] * f.w[(p, d)],
        }
        y[row] = resid[idx];
    }
    let k = model.covariance(mode, x).unwrap();
    let sigma = &h * k * h.transpose() + DMatrix::identity(obs.len(), obs.len()) / tau;
    let chol = sigma.clone().cholesky().unwrap();
    let logdet = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let quad = y.dot(&chol.solve(&y));
    let prior = if mode == Mode::One {
        model.phi_prior
    } else {
        model.delta_prior
    };
    let nobs = obs.len() as f64;
    -0.5 * (nobs * (2.0 * std::f64::consts::PI).ln() + logdet + quad) + prior.logpdf(x)
}

pub fn local_model(dims: Dims, q: usize, k3_mode: K3Mode, range: f64) -> LocalModel {
    LocalModel {
        dims,
        q,
        coords_1: grid_coords(dims.m),
        coords_2: grid_coords(dims.t),
        base_1: KernelFamily::SquaredExponential,
        base_2: KernelFamily::SquaredExponential,
        taper_1: TaperSpec::new(TaperFamily::Bohman, range).unwrap(),
        taper_2: TaperSpec::new(TaperFamily::Wendland, range).unwrap(),
        theta_prior: NormalPrior {
            mean: 0.0,
            precision: 1.0,
        },
        k3_mode,
        psi0: DMatrix::identity(dims.p, dims.p),
        nu0: dims.p as f64,
        precision_prior: GammaPrior { shape: 0.5, rate: 0.5 },
        tau_i: 1e-6,
        pcg: PcgOptions {
            tol: 1e-10,
            max_iter: 2000,
        },
        jitter: 1e-6,
    }
}

pub fn full_var(k3: DMatrix<f64>) -> VariableCov {
    let l3 = k3.clone().cholesky().unwrap().l();
    VariableCov::Full { k3, l3 }
}

pub fn dense_cov(comp: &LocalComponent, p: usize) -> DMatrix<f64> {
    let k3 = match &comp.var {
        VariableCov::Full { k3, .. } => k3.clone(),
        VariableCov::Diagonal { precision } => DMatrix::identity(p, p) / *precision,
    };
    let f = comp.factors();
    kron_dense(&k3, &kron_dense(&f.k2.to_dense(), &f.k1.to_dense()))
}

pub struct Moments {
    n: usize,
    sum: DVector<f64>,
    outer: DMatrix<f64>,
}

impl Moments {
    pub fn new(d: usize) -> Self {
        Self {
            n: 0,
            sum: DVector::zeros(d),
            outer: DMatrix::zeros(d, d),
        }
    }
    pub fn push(&mut self, x: &[f64]) {
        let v = DVector::from_column_slice(x);
        self.outer += &v * v.transpose();
        self.sum += v;
        self.n += 1;
    }
    pub fn mean(&self) -> DVector<f64> {
        &self.sum / self.n as f64
    }
    pub fn cov(&self) -> DMatrix<f64> {
        let m = self.mean();
        &self.outer / self.n as f64 - &m * m.transpose()
    }
    /// Every mean and covariance entry within `k` Monte Carlo standard errors.
    pub fn check(&self, mean: &DVector<f64>, cov: &DMatrix<f64>, k: f64) {
        let n = self.n as f64;
        let (em, ec) = (self.mean(), self.cov());
        for i in 0..mean.len() {
            let se = (cov[(i, i)] / n).sqrt();
            assert!(
                (em[i] - mean[i]).abs() < k * se,
                "mean {i}: {} vs {} (se {se})",
                em[i],
                mean[i]
            );
            for j in 0..mean.len() {
                let se = ((cov[(i, i)] * cov[(j, j)] + cov[(i, j)].powi(2)) / n).sqrt();
                assert!(
                    (ec[(i, j)] - cov[(i, j)]).abs() < k * se,
                    "cov ({i},{j}): {} vs {} (se {se})",
                    ec[(i, j)],
                    cov[(i, j)]
                );
            }
        }
    }
}

/// Exact conditional of `(r_1, …, r_Q)` given `y_Ω = O Σ r_q + ε`.
pub fn exact_conditional(covs: &[DMatrix<f64>], mask: &Mask, y: &[f64], tau: f64) -> Vec<(DVector<f64>, DMatrix<f64>)> {
    let obs = mask.observed();
    let n = covs[0].nrows();
    let mut o = DMatrix::zeros(obs.len(), n);
    for (row, &i) in obs.iter().enumerate() {
        o[(row, i)] = 1.0;
    }
    let total: DMatrix<f64> = covs.iter().fold(DMatrix::zeros(n, n), |acc, k| acc + k);
    let s = &o * &total * o.transpose() + DMatrix::identity(obs.len(), obs.len()) / tau;
    let s_inv = s.try_inverse().unwrap();
    let yo = DVector::from_iterator(obs.len(), obs.iter().map(|&i| y[i]));
    covs.iter()
        .map(|k| {
            let ko = k * o.transpose();
            (&ko * &s_inv * &yo, k - &ko * &s_inv * ko.transpose())
        })
        .collect()
}

/// Asymptotic Kolmogorov tail probability `P(K > λ)`.
pub fn kolmogorov_p(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let s: f64 = (1..=100)
        .map(|k| {
            let k = k as f64;
            let sign = if k as u64 % 2 == 1 { 1.0 } else { -1.0 };
            sign * (-2.0 * k * k * lambda * lambda).exp()
        })
        .sum();
    (2.0 * s).clamp(0.0, 1.0)
}

pub fn ks_p_value(mut xs: Vec<f64>, cdf: impl Fn(f64) -> f64) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = cdf(x);
            (f - i as f64 / n).max((i + 1) as f64 / n - f)
        })
        .fold(0.0, f64::max);
    let sn = n.sqrt();
    kolmogorov_p((sn + 0.12 + 0.11 / sn) * d)
}

pub fn chain(log_density: impl Fn(f64) -> f64, x0: f64, seed: u64, n: usize, thin: usize) -> Vec<f64> {
    let mut rng = substream(seed, "slice ks");
    let mut x = x0;
    for _ in 0..500 {
        x = slice_sample_1d(&log_density, x, SLICE_SCALE, &mut rng, MAX_SHRINK).value;
    }
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        for _ in 0..thin {
            x = slice_sample_1d(&log_density, x, SLICE_SCALE, &mut rng, MAX_SHRINK).value;
        }
        out.push(x);
    }
    out
}
