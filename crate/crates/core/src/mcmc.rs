//! The full Gibbs sweep, noise precision update and posterior summaries.

use std::io::{Read, Write};

use log::warn;
use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{sample_gamma, standard_normal, substream, ChainRng};
use crate::error::{Error, Result};
use crate::global::{
    add_component_observed, sample_factor, sample_lambda_w, update_lengthscale, GlobalModel, GlobalState, NormalPrior,
};
use crate::kernels::{grid_coords, FactorPrior, KernelFamily, TaperFamily, TaperSpec, DEFAULT_JITTER};
use crate::linalg::PcgOptions;
use crate::local::{
    conditional_correct, sample_variable_covariance, update_local_lengthscale, GammaPrior, K3Mode, LocalModel,
    LocalState,
};
use crate::tensor::{cp_reconstruct, Dims, Entry, Mode, SpatioTensor};

/// Hyperprior parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Hyperpriors {
    pub phi: NormalPrior,
    pub delta: NormalPrior,
    pub theta: NormalPrior,
    pub a0: f64,
    pub b0: f64,
    /// Defaults to `I_P`.
    pub psi0: Option<DMatrix<f64>>,
    /// Defaults to `P`.
    pub nu0: Option<f64>,
    /// Prior on `τ^q` in diagonal `K₃` mode.
    pub local_precision: GammaPrior,
}

impl Default for Hyperpriors {
    fn default() -> Self {
        let ln10 = std::f64::consts::LN_10;
        Self {
            phi: NormalPrior {
                mean: ln10,
                precision: 1.0,
            },
            delta: NormalPrior {
                mean: ln10,
                precision: 1.0,
            },
            theta: NormalPrior {
                mean: ln10,
                precision: 1.0,
            },
            a0: 1e-6,
            b0: 1e-6,
            psi0: None,
            nu0: None,
            local_precision: GammaPrior { shape: 0.5, rate: 0.5 },
        }
    }
}

#[derive(Clone, Debug)]
pub struct McmcConfig {
    pub rank: usize,
    pub q: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub hyper: Hyperpriors,
    pub prior_u: FactorPrior,
    pub prior_v: FactorPrior,
    /// Defaults to `1..=M`.
    pub coords_1: Option<Vec<f64>>,
    /// Defaults to `1..=T`.
    pub coords_2: Option<Vec<f64>>,
    pub local_kernel_1: KernelFamily,
    pub local_kernel_2: KernelFamily,
    pub taper_1: TaperSpec,
    pub taper_2: TaperSpec,
    pub k3_mode: K3Mode,
    pub seed: u64,
    pub pcg: PcgOptions,
    pub tau_i: f64,
    pub jitter: f64,
    pub initial_tau: f64,
    pub interval_level: f64,
    pub interval_includes_noise: bool,
    /// Fraction of sweeps whose correction solve may fail before the run aborts.
    pub max_solver_failure_rate: f64,
    /// Largest `M·T·P·K₂` for which retained values are stored exactly.
    pub exact_quantile_limit: usize,
    /// When false, lengthscales, `Λ_w` and `K₃` stay at their initial values.
    pub sample_hyperparameters: bool,
    /// Holds `τ` fixed instead of sampling it.
    pub fixed_tau: Option<f64>,
}

impl Default for McmcConfig {
    fn default() -> Self {
        let taper = TaperSpec {
            family: TaperFamily::Bohman,
            range: 10.0,
        };
        Self {
            rank: 10,
            q: 2,
            burn_in: 1000,
            samples: 500,
            hyper: Hyperpriors::default(),
            prior_u: FactorPrior::Kernel(KernelFamily::SquaredExponential),
            prior_v: FactorPrior::Kernel(KernelFamily::SquaredExponential),
            coords_1: None,
            coords_2: None,
            local_kernel_1: KernelFamily::SquaredExponential,
            local_kernel_2: KernelFamily::SquaredExponential,
            taper_1: taper,
            taper_2: taper,
            k3_mode: K3Mode::Diagonal,
            seed: 0,
            pcg: PcgOptions::default(),
            tau_i: 1e-6,
            jitter: DEFAULT_JITTER,
            initial_tau: 1.0,
            interval_level: 0.95,
            interval_includes_noise: true,
            max_solver_failure_rate: 0.01,
            exact_quantile_limit: 100_000_000,
            sample_hyperparameters: true,
            fixed_tau: None,
        }
    }
}

impl McmcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rank == 0 && self.q == 0 {
            return Err(Error::Config(
                "rank and local component count cannot both be zero".into(),
            ));
        }
        if self.samples == 0 {
            return Err(Error::Config("at least one retained sample is required".into()));
        }
        if !(self.interval_level > 0.0 && self.interval_level < 1.0) {
            return Err(Error::Config(format!(
                "interval level {} outside (0, 1)",
                self.interval_level
            )));
        }
        if !(self.hyper.a0 > 0.0 && self.hyper.b0 > 0.0) {
            return Err(Error::Config("noise prior parameters must be positive".into()));
        }
        if !(self.initial_tau > 0.0) {
            return Err(Error::Config("initial noise precision must be positive".into()));
        }
        if let Some(t) = self.fixed_tau {
            if !(t > 0.0) {
                return Err(Error::Config("fixed noise precision must be positive".into()));
            }
        }
        Ok(())
    }

    fn coords(&self, given: &Option<Vec<f64>>, n: usize) -> Result<Vec<f64>> {
        match given {
            Some(c) if c.len() != n => Err(Error::Config(format!(
                "coordinate list has {} entries, expected {n}",
                c.len()
            ))),
            Some(c) => Ok(c.clone()),
            None => Ok(grid_coords(n)),
        }
    }

    fn psi0_nu0(&self, p: usize) -> (DMatrix<f64>, f64) {
        (
            self.hyper.psi0.clone().unwrap_or_else(|| DMatrix::identity(p, p)),
            self.hyper.nu0.unwrap_or(p as f64),
        )
    }

    pub fn global_model(&self, dims: Dims) -> Result<GlobalModel> {
        let (psi0, nu0) = self.psi0_nu0(dims.p);
        let model = GlobalModel {
            dims,
            rank: self.rank,
            coords_u: self.coords(&self.coords_1, dims.m)?,
            coords_v: self.coords(&self.coords_2, dims.t)?,
            prior_u: self.prior_u.clone(),
            prior_v: self.prior_v.clone(),
            phi_prior: self.hyper.phi,
            delta_prior: self.hyper.delta,
            psi0,
            nu0,
            jitter: self.jitter,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn local_model(&self, dims: Dims) -> Result<LocalModel> {
        let (psi0, nu0) = self.psi0_nu0(dims.p);
        let model = LocalModel {
            dims,
            q: self.q,
            coords_1: self.coords(&self.coords_1, dims.m)?,
            coords_2: self.coords(&self.coords_2, dims.t)?,
            base_1: self.local_kernel_1,
            base_2: self.local_kernel_2,
            taper_1: self.taper_1,
            taper_2: self.taper_2,
            theta_prior: self.hyper.theta,
            k3_mode: self.k3_mode,
            psi0,
            nu0,
            precision_prior: self.hyper.local_precision,
            tau_i: self.tau_i,
            pcg: self.pcg,
            jitter: self.jitter,
        };
        model.validate()?;
        Ok(model)
    }
}

/// One entry of the per-sweep update sequence.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UpdateStep {
    Phi(usize),
    Delta(usize),
    U(usize),
    V(usize),
    W(usize),
    LambdaW,
    Theta1(usize),
    Theta2(usize),
    K3(usize),
    LocalDraw,
    LocalCorrect,
    Tau,
}

/// Hyperparameters after one sweep. Lengthscales are on the natural scale.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTrace {
    pub iter: usize,
    pub tau: f64,
    pub phi: Vec<f64>,
    pub delta: Vec<f64>,
    pub theta1: Vec<f64>,
    pub theta2: Vec<f64>,
    /// `τ^q` in diagonal mode; empty in full mode.
    pub local_precision: Vec<f64>,
    pub pcg_iters: usize,
    pub pcg_converged: bool,
}

/// Draws `τ ~ Gamma(a0 + n/2, b0 + ½ Σ e²)` from the observed residual.
pub fn sample_tau<R: Rng + ?Sized>(resid_obs: &[f64], a0: f64, b0: f64, rng: &mut R) -> Result<f64> {
    let (a, b) = tau_posterior(resid_obs, a0, b0);
    sample_gamma(a, b, rng)
}

/// Shape and rate of the noise precision posterior.
pub fn tau_posterior(resid_obs: &[f64], a0: f64, b0: f64) -> (f64, f64) {
    let sse: f64 = resid_obs.iter().map(|e| e * e).sum();
    (a0 + 0.5 * resid_obs.len() as f64, b0 + 0.5 * sse)
}

/// One Markov chain over the full model.
pub struct Chain<'a> {
    data: &'a SpatioTensor,
    cfg: &'a McmcConfig,
    global_model: GlobalModel,
    local_model: LocalModel,
    pub global: GlobalState,
    pub local: LocalState,
    pub tau: f64,
    resid: Vec<f64>,
    entries: Vec<Entry>,
    rng_global: ChainRng,
    rng_local: ChainRng,
    rng_noise: ChainRng,
    iteration: usize,
    solver_failures: usize,
}

impl<'a> Chain<'a> {
    pub fn new(data: &'a SpatioTensor, cfg: &'a McmcConfig) -> Result<Self> {
        cfg.validate()?;
        let dims = data.dims();
        if data.mask().count() == 0 {
            return Err(Error::Validation("no observed entries".into()));
        }
        let global_model = cfg.global_model(dims)?;
        let local_model = cfg.local_model(dims)?;
        let mut rng_global = substream(cfg.seed, "chain/global");
        let mut rng_local = substream(cfg.seed, "chain/local");
        let global = GlobalState::initialize(&global_model, &mut rng_global)?;
        let local = LocalState::initialize(&local_model, &mut rng_local)?;
        let entries = data.mask().entries();
        let mut chain = Self {
            data,
            cfg,
            global_model,
            local_model,
            global,
            local,
            tau: cfg.fixed_tau.unwrap_or(cfg.initial_tau),
            resid: vec![0.0; dims.len()],
            entries,
            rng_global,
            rng_local,
            rng_noise: substream(cfg.seed, "chain/noise"),
            iteration: 0,
            solver_failures: 0,
        };
        chain.refresh_residual();
        Ok(chain)
    }

    /// Recomputes `𝓨 − 𝓧 − 𝓡` on the observed entries from scratch.
    pub fn refresh_residual(&mut self) {
        let x = cp_reconstruct(&self.global.factors);
        let r = self.local.sum(self.data.dims().len());
        let y = self.data.values();
        self.resid.iter_mut().for_each(|v| *v = 0.0);
        for e in &self.entries {
            self.resid[e.idx] = y[e.idx] - x[e.idx] - r[e.idx];
        }
    }

    /// `𝓨 − 𝓧 − 𝓡` (zero off the observed set).
    pub fn residual(&self) -> &[f64] {
        &self.resid
    }

    pub fn global_model(&self) -> &GlobalModel {
        &self.global_model
    }

    pub fn local_model(&self) -> &LocalModel {
        &self.local_model
    }

    pub fn solver_failures(&self) -> usize {
        self.solver_failures
    }

    /// Current reconstruction `𝓧 + 𝓡`.
    pub fn prediction(&self) -> Vec<f64> {
        let mut out = cp_reconstruct(&self.global.factors);
        for c in &self.local.components {
            for (o, r) in out.iter_mut().zip(&c.r) {
                *o += r;
            }
        }
        out
    }

    /// Runs one sweep, optionally recording the update sequence.
    pub fn sweep(&mut self, mut record: Option<&mut Vec<UpdateStep>>) -> Result<SweepTrace> {
        let mut log = |s: UpdateStep| {
            if let Some(r) = record.as_deref_mut() {
                r.push(s);
            }
        };
        let hyper = self.cfg.sample_hyperparameters;
        let tau = self.tau;
        for d in 0..self.global_model.rank {
            add_component_observed(&self.global.factors, d, 1.0, &mut self.resid, &self.entries);
            if hyper {
                for mode in [Mode::One, Mode::Two] {
                    update_lengthscale(
                        &self.global_model,
                        &mut self.global,
                        mode,
                        d,
                        &self.resid,
                        &self.entries,
                        tau,
                        &mut self.rng_global,
                    )?;
                    log(if mode == Mode::One {
                        UpdateStep::Phi(d)
                    } else {
                        UpdateStep::Delta(d)
                    });
                }
            }
            for mode in Mode::ALL {
                sample_factor(
                    &mut self.global,
                    mode,
                    d,
                    &self.resid,
                    &self.entries,
                    tau,
                    &mut self.rng_global,
                )?;
                log(match mode {
                    Mode::One => UpdateStep::U(d),
                    Mode::Two => UpdateStep::V(d),
                    Mode::Three => UpdateStep::W(d),
                });
            }
            add_component_observed(&self.global.factors, d, -1.0, &mut self.resid, &self.entries);
        }
        if hyper && self.global_model.rank > 0 {
            self.global.lambda_w = sample_lambda_w(
                &self.global.factors.w,
                &self.global_model.psi0,
                self.global_model.nu0,
                &mut self.rng_global,
            )?;
            log(UpdateStep::LambdaW);
        }
        let mut report = None;
        if self.local_model.q > 0 {
            if hyper {
                for q in 0..self.local_model.q {
                    for mode in [Mode::One, Mode::Two] {
                        update_local_lengthscale(
                            &self.local_model,
                            &mut self.local,
                            q,
                            mode,
                            &mut self.resid,
                            &self.entries,
                            tau,
                            &mut self.rng_local,
                        )?;
                        log(if mode == Mode::One {
                            UpdateStep::Theta1(q)
                        } else {
                            UpdateStep::Theta2(q)
                        });
                    }
                    sample_variable_covariance(
                        &self.local_model,
                        &mut self.local,
                        q,
                        &mut self.resid,
                        self.data.mask(),
                        &self.entries,
                        tau,
                        &mut self.rng_local,
                    )?;
                    log(UpdateStep::K3(q));
                }
            }
            // Residual without the local part: 𝓨 − 𝓧 on Ω.
            let mut resid_x = self.resid.clone();
            for c in &self.local.components {
                for e in &self.entries {
                    resid_x[e.idx] += c.r[e.idx];
                }
            }
            log(UpdateStep::LocalDraw);
            let rep = conditional_correct(
                &self.local_model,
                &mut self.local,
                &resid_x,
                self.data.mask(),
                tau,
                &mut self.rng_local,
            )?;
            log(UpdateStep::LocalCorrect);
            if !rep.converged {
                self.solver_failures += 1;
                warn!(
                    "sweep {}: correction solve stopped after {} iterations at relative residual {:.3e}; keeping previous local components",
                    self.iteration + 1,
                    rep.iterations,
                    rep.relative_residual
                );
            }
            for e in &self.entries {
                let r: f64 = self.local.components.iter().map(|c| c.r[e.idx]).sum();
                self.resid[e.idx] = resid_x[e.idx] - r;
            }
            report = Some(rep);
        }
        if self.cfg.fixed_tau.is_none() {
            let obs: Vec<f64> = self.entries.iter().map(|e| self.resid[e.idx]).collect();
            self.tau = sample_tau(&obs, self.cfg.hyper.a0, self.cfg.hyper.b0, &mut self.rng_noise)?;
            log(UpdateStep::Tau);
        }
        self.iteration += 1;
        Ok(self.trace(report.map_or(0, |r| r.iterations), report.is_none_or(|r| r.converged)))
    }

    fn trace(&self, pcg_iters: usize, pcg_converged: bool) -> SweepTrace {
        let comps = &self.local.components;
        SweepTrace {
            iter: self.iteration,
            tau: self.tau,
            phi: self.global.phi.iter().map(|x| x.exp()).collect(),
            delta: self.global.delta.iter().map(|x| x.exp()).collect(),
            theta1: comps.iter().map(|c| c.theta1.exp()).collect(),
            theta2: comps.iter().map(|c| c.theta2.exp()).collect(),
            local_precision: comps.iter().filter_map(|c| c.precision()).collect(),
            pcg_iters,
            pcg_converged,
        }
    }
}

/// Streaming P² estimate of one quantile.
#[derive(Clone, Debug, PartialEq)]
pub struct P2Quantile {
    p: f64,
    heights: [f64; 5],
    pos: [f64; 5],
    desired: [f64; 5],
    incr: [f64; 5],
    count: usize,
}

impl P2Quantile {
    pub fn new(p: f64) -> Self {
        Self {
            p,
            heights: [0.0; 5],
            pos: [1.0, 2.0, 3.0, 4.0, 5.0],
            desired: [1.0, 1.0 + 2.0 * p, 1.0 + 4.0 * p, 3.0 + 2.0 * p, 5.0],
            incr: [0.0, p / 2.0, p, (1.0 + p) / 2.0, 1.0],
            count: 0,
        }
    }

    pub fn push(&mut self, x: f64) {
        if self.count < 5 {
            self.heights[self.count] = x;
            self.count += 1;
            if self.count == 5 {
                self.heights.sort_by(f64::total_cmp);
            }
            return;
        }
        self.count += 1;
        let h = &mut self.heights;
        let k = if x < h[0] {
            h[0] = x;
            0
        } else if x >= h[4] {
            h[4] = x;
            3
        } else {
            (0..4).find(|&i| x < h[i + 1]).expect("x lies inside the markers")
        };
        for i in k + 1..5 {
            self.pos[i] += 1.0;
        }
        for i in 0..5 {
            self.desired[i] += self.incr[i];
        }
        for i in 1..4 {
            let d = self.desired[i] - self.pos[i];
            if (d >= 1.0 && self.pos[i + 1] - self.pos[i] > 1.0) || (d <= -1.0 && self.pos[i - 1] - self.pos[i] < -1.0)
            {
                let s = d.signum();
                let (n0, n1, n2) = (self.pos[i - 1], self.pos[i], self.pos[i + 1]);
                let (q0, q1, q2) = (h[i - 1], h[i], h[i + 1]);
                let parabolic = q1
                    + s / (n2 - n0) * ((n1 - n0 + s) * (q2 - q1) / (n2 - n1) + (n2 - n1 - s) * (q1 - q0) / (n1 - n0));
                h[i] = if q0 < parabolic && parabolic < q2 {
                    parabolic
                } else {
                    let j = if s > 0.0 { i + 1 } else { i - 1 };
                    q1 + s * (h[j] - q1) / (self.pos[j] - n1)
                };
                self.pos[i] += s;
            }
        }
    }

    pub fn estimate(&self) -> f64 {
        if self.count >= 5 {
            return self.heights[2];
        }
        let mut v = self.heights[..self.count].to_vec();
        v.sort_by(f64::total_cmp);
        quantile_sorted(&v, self.p)
    }
}

/// Type-7 (linear interpolation) quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    match sorted.len() {
        0 => f64::NAN,
        1 => sorted[0],
        n => {
            let h = (n - 1) as f64 * p.clamp(0.0, 1.0);
            let lo = h.floor() as usize;
            let hi = (lo + 1).min(n - 1);
            sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Store {
    /// Values of entry `i` occupy `values[i*capacity .. i*capacity + count]`.
    Exact { values: Vec<f64>, capacity: usize },
    Sketch {
        lower: Vec<P2Quantile>,
        upper: Vec<P2Quantile>,
    },
}

/// Per-entry mean, standard deviation and interval endpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub dims: Dims,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub level: f64,
}

/// Running statistics of retained reconstructions.
///
/// Mean and standard deviation (population denominator) are over the
/// reconstructions themselves; interval values may carry an added noise draw.
#[derive(Clone, Debug, PartialEq)]
pub struct PosteriorAccumulator {
    dims: Dims,
    count: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
    level: f64,
    store: Store,
}

pub type PosteriorSamples = PosteriorAccumulator;

const ACC_MAGIC: &[u8; 4] = b"BCKP";
const ACC_VERSION: u32 = 1;

impl PosteriorAccumulator {
    pub fn new(dims: Dims, expected: usize, level: f64, exact_limit: usize) -> Self {
        let n = dims.len();
        let store = if n.saturating_mul(expected) <= exact_limit {
            Store::Exact {
                values: vec![0.0; n * expected],
                capacity: expected,
            }
        } else {
            let a = (1.0 - level) / 2.0;
            Store::Sketch {
                lower: vec![P2Quantile::new(a); n],
                upper: vec![P2Quantile::new(1.0 - a); n],
            }
        };
        Self {
            dims,
            count: 0,
            mean: vec![0.0; n],
            m2: vec![0.0; n],
            level,
            store,
        }
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn is_exact(&self) -> bool {
        matches!(self.store, Store::Exact { .. })
    }

    /// Adds one reconstruction; `interval_values` feed the quantiles.
    pub fn push(&mut self, recon: &[f64], interval_values: &[f64]) -> Result<()> {
        let n = self.dims.len();
        if recon.len() != n || interval_values.len() != n {
            return Err(Error::Dimension("sample length differs from tensor size".into()));
        }
        self.count += 1;
        let k = self.count as f64;
        for ((&x, mean), m2) in recon.iter().zip(&mut self.mean).zip(&mut self.m2) {
            let delta = x - *mean;
            *mean += delta / k;
            *m2 += delta * (x - *mean);
        }
        match &mut self.store {
            Store::Exact { values, capacity } => {
                if self.count > *capacity {
                    return Err(Error::Dimension("more samples than the exact store holds".into()));
                }
                let c = *capacity;
                for (i, &v) in interval_values.iter().enumerate() {
                    values[i * c + self.count - 1] = v;
                }
            }
            Store::Sketch { lower, upper } => {
                for (i, &v) in interval_values.iter().enumerate() {
                    lower[i].push(v);
                    upper[i].push(v);
                }
            }
        }
        Ok(())
    }

    /// Summaries at the given central interval level.
    pub fn summarize(&self, level: f64) -> Result<Summary> {
        if self.count == 0 {
            return Err(Error::Validation("no retained samples".into()));
        }
        let n = self.dims.len();
        let std = self
            .m2
            .iter()
            .map(|m| (m / self.count as f64).max(0.0).sqrt())
            .collect();
        let a = (1.0 - level) / 2.0;
        let (lower, upper) = match &self.store {
            Store::Exact { values, capacity } => {
                let mut lo = Vec::with_capacity(n);
                let mut hi = Vec::with_capacity(n);
                let mut buf = Vec::with_capacity(self.count);
                for i in 0..n {
                    buf.clear();
                    buf.extend_from_slice(&values[i * capacity..i * capacity + self.count]);
                    buf.sort_by(f64::total_cmp);
                    lo.push(quantile_sorted(&buf, a));
                    hi.push(quantile_sorted(&buf, 1.0 - a));
                }
                (lo, hi)
            }
            Store::Sketch { lower, upper } => {
                if (level - self.level).abs() > 1e-12 {
                    return Err(Error::Config(format!(
                        "streaming quantiles were tracked at level {}, not {level}",
                        self.level
                    )));
                }
                (
                    lower.iter().map(P2Quantile::estimate).collect(),
                    upper.iter().map(P2Quantile::estimate).collect(),
                )
            }
        };
        Ok(Summary {
            dims: self.dims,
            mean: self.mean.clone(),
            std,
            lower,
            upper,
            level,
        })
    }

    /// Binary serialization (little-endian).
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(ACC_MAGIC)?;
        w.write_all(&ACC_VERSION.to_le_bytes())?;
        for d in [self.dims.m, self.dims.t, self.dims.p, self.count] {
            w.write_all(&(d as u64).to_le_bytes())?;
        }
        w.write_all(&self.level.to_le_bytes())?;
        let put = |w: &mut W, xs: &[f64]| -> Result<()> {
            for x in xs {
                w.write_all(&x.to_le_bytes())?;
            }
            Ok(())
        };
        put(w, &self.mean)?;
        put(w, &self.m2)?;
        match &self.store {
            Store::Exact { values, capacity } => {
                w.write_all(&[0u8])?;
                w.write_all(&(*capacity as u64).to_le_bytes())?;
                put(w, values)?;
            }
            Store::Sketch { lower, upper } => {
                w.write_all(&[1u8])?;
                for q in lower.iter().chain(upper) {
                    put(w, &[q.p])?;
                    put(w, &q.heights)?;
                    put(w, &q.pos)?;
                    put(w, &q.desired)?;
                    w.write_all(&(q.count as u64).to_le_bytes())?;
                }
            }
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != ACC_MAGIC {
            return Err(Error::Format("not a posterior summary file".into()));
        }
        let mut b4 = [0u8; 4];
        r.read_exact(&mut b4)?;
        if u32::from_le_bytes(b4) != ACC_VERSION {
            return Err(Error::Format("unsupported posterior summary version".into()));
        }
        let u64s = |r: &mut R| -> Result<usize> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Format("size overflow".into()))
        };
        let (m, t, p, count) = (u64s(r)?, u64s(r)?, u64s(r)?, u64s(r)?);
        let dims = Dims::new(m, t, p).map_err(|e| Error::Format(e.to_string()))?;
        let f64s = |r: &mut R, n: usize| -> Result<Vec<f64>> {
            let mut out = Vec::with_capacity(n);
            let mut b = [0u8; 8];
            for _ in 0..n {
                r.read_exact(&mut b)?;
                out.push(f64::from_le_bytes(b));
            }
            Ok(out)
        };
        let level = f64s(r, 1)?[0];
        let n = dims.len();
        let mean = f64s(r, n)?;
        let m2 = f64s(r, n)?;
        let mut tag = [0u8; 1];
        r.read_exact(&mut tag)?;
        let store = match tag[0] {
            0 => {
                let capacity = u64s(r)?;
                if count > capacity {
                    return Err(Error::Format("sample count exceeds stored capacity".into()));
                }
                Store::Exact {
                    values: f64s(r, n * capacity)?,
                    capacity,
                }
            }
            1 => {
                let mut qs = Vec::with_capacity(2 * n);
                for _ in 0..2 * n {
                    let v = f64s(r, 16)?;
                    let c = u64s(r)?;
                    let arr = |s: &[f64]| -> [f64; 5] { [s[0], s[1], s[2], s[3], s[4]] };
                    let mut q = P2Quantile::new(v[0]);
                    q.heights = arr(&v[1..6]);
                    q.pos = arr(&v[6..11]);
                    q.desired = arr(&v[11..16]);
                    q.count = c;
                    qs.push(q);
                }
                let upper = qs.split_off(n);
                Store::Sketch { lower: qs, upper }
            }
            _ => return Err(Error::Format("unknown quantile store".into())),
        };
        Ok(Self {
            dims,
            count,
            mean,
            m2,
            level,
            store,
        })
    }
}

/// Result of a full run.
pub struct McmcOutput {
    pub posterior: PosteriorAccumulator,
    pub traces: Vec<SweepTrace>,
    pub global: GlobalState,
    pub local: LocalState,
    pub tau: f64,
    pub solver_failures: usize,
}

/// Runs `burn_in + samples` sweeps, calling `observer` after each.
pub fn run_mcmc<F>(data: &SpatioTensor, cfg: &McmcConfig, mut observer: F) -> Result<McmcOutput>
where
    F: FnMut(&SweepTrace),
{
    let mut chain = Chain::new(data, cfg)?;
    let dims = data.dims();
    let total = cfg.burn_in + cfg.samples;
    let allowed = (cfg.max_solver_failure_rate * total as f64).floor() as usize;
    let mut posterior = PosteriorAccumulator::new(dims, cfg.samples, cfg.interval_level, cfg.exact_quantile_limit);
    let mut rng_collect = substream(cfg.seed, "chain/collect");
    let mut traces = Vec::with_capacity(total);
    for k in 0..total {
        let trace = chain.sweep(None)?;
        if chain.solver_failures() > allowed {
            return Err(Error::Solver(format!(
                "correction solve failed in {} of {} sweeps (limit {allowed})",
                chain.solver_failures(),
                k + 1
            )));
        }
        if k >= cfg.burn_in {
            let recon = chain.prediction();
            if cfg.interval_includes_noise {
                let sd = chain.tau.sqrt().recip();
                let noisy: Vec<f64> = recon
                    .iter()
                    .map(|v| v + sd * standard_normal(&mut rng_collect))
                    .collect();
                posterior.push(&recon, &noisy)?;
            } else {
                posterior.push(&recon, &recon)?;
            }
        }
        observer(&trace);
        traces.push(trace);
    }
    Ok(McmcOutput {
        posterior,
        traces,
        tau: chain.tau,
        solver_failures: chain.solver_failures(),
        global: chain.global,
        local: chain.local,
    })
}
