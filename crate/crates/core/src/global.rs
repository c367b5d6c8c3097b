//! Gibbs updates for the CP factors, the Wishart draw of `Λ_w`, and slice
//! sampling of the factor lengthscales through a Woodbury marginal likelihood.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    normal_logpdf, sample_mvn_precision, sample_wishart, slice_sample_1d, standard_normal_vec, SliceOutcome,
    MAX_SHRINK, SLICE_SCALE,
};
use crate::error::{Error, Result};
use crate::kernels::FactorPrior;
use crate::linalg::{dense_cholesky, whitened_precision, Woodbury};
use crate::tensor::{CpFactors, Dims, Entry, Mode};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Normal prior on a log-transformed hyperparameter.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalPrior {
    pub mean: f64,
    pub precision: f64,
}

impl NormalPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        normal_logpdf(x, self.mean, self.precision)
    }
}

/// Fixed structure of the global component.
#[derive(Clone, Debug)]
pub struct GlobalModel {
    pub dims: Dims,
    pub rank: usize,
    pub coords_u: Vec<f64>,
    pub coords_v: Vec<f64>,
    pub prior_u: FactorPrior,
    pub prior_v: FactorPrior,
    pub phi_prior: NormalPrior,
    pub delta_prior: NormalPrior,
    pub psi0: DMatrix<f64>,
    pub nu0: f64,
    pub jitter: f64,
}

impl GlobalModel {
    pub fn validate(&self) -> Result<()> {
        if self.coords_u.len() != self.dims.m || self.coords_v.len() != self.dims.t {
            return Err(Error::Dimension("coordinate lists do not match tensor dims".into()));
        }
        if self.psi0.nrows() != self.dims.p || !self.psi0.is_square() {
            return Err(Error::Dimension("Ψ0 must be P×P".into()));
        }
        if !(self.nu0 > self.dims.p as f64 - 1.0) {
            return Err(Error::Parameter(format!(
                "ν0 = {} too small for P = {}",
                self.nu0, self.dims.p
            )));
        }
        Ok(())
    }

    fn prior(&self, mode: Mode) -> &FactorPrior {
        match mode {
            Mode::One => &self.prior_u,
            Mode::Two => &self.prior_v,
            Mode::Three => unreachable!("W has a precision prior"),
        }
    }

    fn coords(&self, mode: Mode) -> &[f64] {
        match mode {
            Mode::One => &self.coords_u,
            Mode::Two => &self.coords_v,
            Mode::Three => unreachable!("W has a precision prior"),
        }
    }

    fn hyperprior(&self, mode: Mode) -> NormalPrior {
        match mode {
            Mode::One => self.phi_prior,
            _ => self.delta_prior,
        }
    }

    /// Prior covariance of column `d` of U or V at log-lengthscale `x`.
    pub fn covariance(&self, mode: Mode, x: f64) -> Result<DMatrix<f64>> {
        self.prior(mode).covariance(self.coords(mode), x.exp(), self.jitter)
    }
}

/// Mutable state of the global component.
#[derive(Clone, Debug)]
pub struct GlobalState {
    pub factors: CpFactors,
    /// Log-lengthscales of the U columns.
    pub phi: Vec<f64>,
    /// Log-lengthscales of the V columns.
    pub delta: Vec<f64>,
    pub lambda_w: DMatrix<f64>,
    chol_u: Vec<DMatrix<f64>>,
    chol_v: Vec<DMatrix<f64>>,
}

impl GlobalState {
    pub fn new(
        model: &GlobalModel,
        factors: CpFactors,
        phi: Vec<f64>,
        delta: Vec<f64>,
        lambda_w: DMatrix<f64>,
    ) -> Result<Self> {
        model.validate()?;
        if factors.dims() != model.dims || factors.rank() != model.rank {
            return Err(Error::Dimension("factors do not match the model".into()));
        }
        if phi.len() != model.rank || delta.len() != model.rank {
            return Err(Error::Dimension("one lengthscale per column expected".into()));
        }
        let mut state = Self {
            factors,
            phi,
            delta,
            lambda_w,
            chol_u: Vec::new(),
            chol_v: Vec::new(),
        };
        for d in 0..model.rank {
            state.chol_u.push(factor_chol(model, Mode::One, state.phi[d])?);
            state.chol_v.push(factor_chol(model, Mode::Two, state.delta[d])?);
        }
        Ok(state)
    }

    /// Standard normal factors, unit lengthscales and `Λ_w = I`.
    pub fn initialize<R: Rng + ?Sized>(model: &GlobalModel, rng: &mut R) -> Result<Self> {
        let Dims { m, t, p } = model.dims;
        let d = model.rank;
        let u = DMatrix::from_vec(m, d, standard_normal_vec(m * d, rng));
        let v = DMatrix::from_vec(t, d, standard_normal_vec(t * d, rng));
        let w = DMatrix::from_vec(p, d, standard_normal_vec(p * d, rng));
        let factors = CpFactors::new(u, v, w)?;
        Self::new(model, factors, vec![0.0; d], vec![0.0; d], DMatrix::identity(p, p))
    }

    pub fn log_lengthscale(&self, mode: Mode, d: usize) -> f64 {
        match mode {
            Mode::One => self.phi[d],
            _ => self.delta[d],
        }
    }

    /// Sets a log-lengthscale and refreshes the cached factor.
    pub fn set_log_lengthscale(&mut self, model: &GlobalModel, mode: Mode, d: usize, x: f64) -> Result<()> {
        let l = factor_chol(model, mode, x)?;
        match mode {
            Mode::One => {
                self.phi[d] = x;
                self.chol_u[d] = l;
            }
            Mode::Two => {
                self.delta[d] = x;
                self.chol_v[d] = l;
            }
            Mode::Three => return Err(Error::Parameter("W has no lengthscale".into())),
        }
        Ok(())
    }

    /// Lower Cholesky factor of the prior covariance of column `d`.
    pub fn prior_factor(&self, mode: Mode, d: usize) -> &DMatrix<f64> {
        match mode {
            Mode::One => &self.chol_u[d],
            _ => &self.chol_v[d],
        }
    }

    fn column_mut(&mut self, mode: Mode, d: usize) -> nalgebra::DVectorViewMut<'_, f64> {
        match mode {
            Mode::One => self.factors.u.column_mut(d),
            Mode::Two => self.factors.v.column_mut(d),
            Mode::Three => self.factors.w.column_mut(d),
        }
    }
}

fn factor_chol(model: &GlobalModel, mode: Mode, x: f64) -> Result<DMatrix<f64>> {
    let k = model.covariance(mode, x)?;
    Ok(dense_cholesky(&k)?.0.l())
}

/// Observed-data statistics of the selection operator `H` for one column:
/// `diag(HᵀH)`, `Hᵀy` and `yᵀy`, with `y` the residual on Ω.
#[derive(Clone, Debug, PartialEq)]
pub struct ColumnStats {
    pub gram: Vec<f64>,
    pub hty: Vec<f64>,
    pub yty: f64,
    pub count: usize,
}

/// Statistics for updating column `d` of the factor along `mode`, where `resid`
/// already excludes component `d`.
pub fn column_stats(factors: &CpFactors, mode: Mode, d: usize, resid: &[f64], entries: &[Entry]) -> ColumnStats {
    let n = factors.dims().size(mode);
    let (u, v, w) = (factors.u.column(d), factors.v.column(d), factors.w.column(d));
    let mut gram = vec![0.0; n];
    let mut hty = vec![0.0; n];
    let mut yty = 0.0;
    for e in entries {
        let y = resid[e.idx];
        let (row, coef) = match mode {
            Mode::One => (e.m, v[e.t] * w[e.p]),
            Mode::Two => (e.t, u[e.m] * w[e.p]),
            Mode::Three => (e.p, u[e.m] * v[e.t]),
        };
        gram[row] += coef * coef;
        hty[row] += coef * y;
        yty += y * y;
    }
    ColumnStats {
        gram,
        hty,
        yty,
        count: entries.len(),
    }
}

/// Gaussian full conditional of one factor column.
#[derive(Clone, Debug, PartialEq)]
pub struct FactorConditional {
    pub mean: DVector<f64>,
    pub precision: DMatrix<f64>,
}

/// Mean and precision of the full conditional of column `d` along `mode`.
pub fn factor_conditional(
    state: &GlobalState,
    mode: Mode,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
) -> Result<FactorConditional> {
    let stats = column_stats(&state.factors, mode, d, resid, entries);
    let eta = DVector::from_vec(stats.hty.iter().map(|c| tau * c).collect());
    match mode {
        Mode::Three => {
            let mut precision = state.lambda_w.clone();
            for (i, g) in stats.gram.iter().enumerate() {
                precision[(i, i)] += tau * g;
            }
            let (chol, _) = dense_cholesky(&precision)?;
            Ok(FactorConditional {
                mean: chol.solve(&eta),
                precision,
            })
        }
        _ => {
            let l = state.prior_factor(mode, d);
            let n = l.nrows();
            let scaled: Vec<f64> = stats.gram.iter().map(|g| tau * g).collect();
            let b = whitened_precision(l, &scaled);
            let (chol_b, _) = dense_cholesky(&b)?;
            let mean = l * chol_b.solve(&l.tr_mul(&eta));
            let l_inv = l
                .clone()
                .solve_lower_triangular(&DMatrix::identity(n, n))
                .ok_or_else(|| Error::NotPositiveDefinite("singular prior factor".into()))?;
            let mut precision = l_inv.tr_mul(&l_inv);
            for (i, g) in scaled.iter().enumerate() {
                precision[(i, i)] += g;
            }
            Ok(FactorConditional { mean, precision })
        }
    }
}

/// Draws column `d` of the factor along `mode` from its full conditional.
///
/// U and V use the prior square root `L`: with `B = I + τ Lᵀ diag(HᵀH) L` the
/// draw is `L x` for `x ~ N(B⁻¹ Lᵀ η, B⁻¹)`, so `K⁻¹` is never formed.
pub fn sample_factor<R: Rng + ?Sized>(
    state: &mut GlobalState,
    mode: Mode,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    let stats = column_stats(&state.factors, mode, d, resid, entries);
    let eta = DVector::from_vec(stats.hty.iter().map(|c| tau * c).collect());
    let draw = match mode {
        Mode::Three => {
            let mut precision = state.lambda_w.clone();
            for (i, g) in stats.gram.iter().enumerate() {
                precision[(i, i)] += tau * g;
            }
            sample_mvn_precision(&eta, &precision, rng)?
        }
        _ => {
            let l = state.prior_factor(mode, d);
            let scaled: Vec<f64> = stats.gram.iter().map(|g| tau * g).collect();
            let b = whitened_precision(l, &scaled);
            let x = sample_mvn_precision(&l.tr_mul(&eta), &b, rng)?;
            l * x
        }
    };
    state.column_mut(mode, d).copy_from(&draw);
    Ok(())
}

/// Draws `Λ_w ~ Wishart(Ψ*, ν0 + D)` with `(Ψ*)⁻¹ = W Wᵀ + Ψ0⁻¹`.
pub fn sample_lambda_w<R: Rng + ?Sized>(
    w: &DMatrix<f64>,
    psi0: &DMatrix<f64>,
    nu0: f64,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let (psi_star, nu) = lambda_w_posterior(w, psi0, nu0)?;
    sample_wishart(&psi_star, nu, rng)
}

/// Posterior scale and degrees of freedom of `Λ_w`.
pub fn lambda_w_posterior(w: &DMatrix<f64>, psi0: &DMatrix<f64>, nu0: f64) -> Result<(DMatrix<f64>, f64)> {
    let (c0, _) = dense_cholesky(psi0)?;
    let inv = w * w.transpose() + c0.inverse();
    let (ci, _) = dense_cholesky(&inv)?;
    let mut psi_star = ci.inverse();
    let n = psi_star.nrows();
    for j in 0..n {
        for i in 0..j {
            let v = 0.5 * (psi_star[(i, j)] + psi_star[(j, i)]);
            psi_star[(i, j)] = v;
            psi_star[(j, i)] = v;
        }
    }
    Ok((psi_star, nu0 + w.ncols() as f64))
}

/// Log marginal likelihood of the residual with column `d` of U (or V)
/// integrated out, at log-lengthscale `x`, plus the hyperprior log-density.
/// Returns `-∞` when the covariance cannot be factorized.
pub fn lengthscale_logmarginal(model: &GlobalModel, mode: Mode, x: f64, stats: &ColumnStats, tau: f64) -> f64 {
    let prior = model.hyperprior(mode).logpdf(x);
    if stats.count == 0 {
        return prior;
    }
    let k = match model.covariance(mode, x) {
        Ok(k) => k,
        Err(_) => return f64::NEG_INFINITY,
    };
    let wb = match Woodbury::from_covariance(k, &stats.gram, tau, stats.count) {
        Ok(wb) => wb,
        Err(_) => return f64::NEG_INFINITY,
    };
    let quad = wb.quadratic_form(stats.yty, &stats.hty);
    prior - 0.5 * (stats.count as f64 * LN_2PI + wb.logdet() + quad)
}

/// Slice-samples the log-lengthscale of column `d` along `mode`. Returns `None`
/// when the prior has no lengthscale.
#[allow(clippy::too_many_arguments)]
pub fn update_lengthscale<R: Rng + ?Sized>(
    model: &GlobalModel,
    state: &mut GlobalState,
    mode: Mode,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<Option<SliceOutcome>> {
    if !model.prior(mode).has_lengthscale() {
        return Ok(None);
    }
    let stats = column_stats(&state.factors, mode, d, resid, entries);
    let x0 = state.log_lengthscale(mode, d);
    let out = slice_sample_1d(
        |x| lengthscale_logmarginal(model, mode, x, &stats, tau),
        x0,
        SLICE_SCALE,
        rng,
        MAX_SHRINK,
    );
    if out.value != x0 {
        state.set_log_lengthscale(model, mode, d, out.value)?;
    }
    Ok(Some(out))
}

/// Updates every global lengthscale, column by column.
///
/// `resid` is `𝓨 − 𝓧 − 𝓡` on the observed entries and is left unchanged.
pub fn update_global_lengthscales<R: Rng + ?Sized>(
    model: &GlobalModel,
    state: &mut GlobalState,
    resid: &mut [f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    for d in 0..model.rank {
        add_component_observed(&state.factors, d, 1.0, resid, entries);
        for mode in [Mode::One, Mode::Two] {
            update_lengthscale(model, state, mode, d, resid, entries, tau, rng)?;
        }
        add_component_observed(&state.factors, d, -1.0, resid, entries);
    }
    Ok(())
}

/// `resid` must already include column `d` (see [`sample_factor`]).
pub fn sample_factor_u<R: Rng + ?Sized>(
    state: &mut GlobalState,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    sample_factor(state, Mode::One, d, resid, entries, tau, rng)
}

pub fn sample_factor_v<R: Rng + ?Sized>(
    state: &mut GlobalState,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    sample_factor(state, Mode::Two, d, resid, entries, tau, rng)
}

pub fn sample_factor_w<R: Rng + ?Sized>(
    state: &mut GlobalState,
    d: usize,
    resid: &[f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    sample_factor(state, Mode::Three, d, resid, entries, tau, rng)
}

/// Adds `scale · u_d ∘ v_d ∘ w_d` to `resid` on the observed entries only.
pub fn add_component_observed(factors: &CpFactors, d: usize, scale: f64, resid: &mut [f64], entries: &[Entry]) {
    let (u, v, w) = (factors.u.column(d), factors.v.column(d), factors.w.column(d));
    for e in entries {
        resid[e.idx] += scale * u[e.m] * v[e.t] * w[e.p];
    }
}
