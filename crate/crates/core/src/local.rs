//! Short-scale local components: prior draws with a single shared correction
//! solve, whitened slice sampling of the lengthscales, and updates of the
//! variable covariance `K₃`.

use nalgebra::DMatrix;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::distributions::{
    sample_inverse_wishart, slice_sample_1d, standard_normal, standard_normal_vec, SliceOutcome, MAX_SHRINK,
    SLICE_SCALE,
};
use crate::error::{Error, Result};
use crate::global::NormalPrior;
use crate::kernels::{build_tapered_covariance, KernelFamily, KernelSpec, TaperSpec};
use crate::linalg::{
    apply_mode, dense_cholesky, kron_matvec_in_place, pcg_solve, sparse_cholesky, FactorOp, LowerInverseOp, PcgOptions,
    ScaledIdentity, SparseChol, SparseSym, WhitenOp,
};
use crate::tensor::{Dims, Entry, Mask, Mode};

/// Largest `P` for which a full `K₃` is allowed.
pub const MAX_FULL_K3: usize = 16;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum K3Mode {
    /// Dense `P×P` covariance with an inverse-Wishart prior.
    Full,
    /// `K₃ = I / τ^q` with a Gamma prior on `τ^q`.
    Diagonal,
}

/// Gamma prior with shape and rate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaPrior {
    pub shape: f64,
    pub rate: f64,
}

impl GammaPrior {
    pub fn logpdf(&self, x: f64) -> f64 {
        if !(x > 0.0) {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - statrs::function::gamma::ln_gamma(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// Fixed structure of the local component.
#[derive(Clone, Debug)]
pub struct LocalModel {
    pub dims: Dims,
    pub q: usize,
    pub coords_1: Vec<f64>,
    pub coords_2: Vec<f64>,
    pub base_1: KernelFamily,
    pub base_2: KernelFamily,
    pub taper_1: TaperSpec,
    pub taper_2: TaperSpec,
    pub theta_prior: NormalPrior,
    pub k3_mode: K3Mode,
    pub psi0: DMatrix<f64>,
    pub nu0: f64,
    pub precision_prior: GammaPrior,
    pub tau_i: f64,
    pub pcg: PcgOptions,
    pub jitter: f64,
}

impl LocalModel {
    pub fn validate(&self) -> Result<()> {
        if self.coords_1.len() != self.dims.m || self.coords_2.len() != self.dims.t {
            return Err(Error::Dimension("coordinate lists do not match tensor dims".into()));
        }
        if self.k3_mode == K3Mode::Full {
            if self.dims.p > MAX_FULL_K3 {
                return Err(Error::Config(format!(
                    "full K3 needs P <= {MAX_FULL_K3}, got {}",
                    self.dims.p
                )));
            }
            if self.psi0.nrows() != self.dims.p || !self.psi0.is_square() {
                return Err(Error::Dimension("Ψ0 must be P×P".into()));
            }
            if !(self.nu0 > self.dims.p as f64 - 1.0) {
                return Err(Error::Parameter(format!("ν0 = {} too small", self.nu0)));
            }
        }
        if !(self.tau_i > 0.0) {
            return Err(Error::Parameter("imaginary precision must be positive".into()));
        }
        Ok(())
    }

    fn covariance(&self, mode: Mode, x: f64) -> Result<SparseSym> {
        let (coords, family, taper) = match mode {
            Mode::One => (&self.coords_1, self.base_1, &self.taper_1),
            Mode::Two => (&self.coords_2, self.base_2, &self.taper_2),
            Mode::Three => return Err(Error::Parameter("mode 3 has no lengthscale".into())),
        };
        build_tapered_covariance(coords, &KernelSpec::new(family, x.exp()), taper, self.jitter)
    }
}

/// The variable covariance `K₃` with its lower square root.
#[derive(Clone, Debug, PartialEq)]
pub enum VariableCov {
    Full { k3: DMatrix<f64>, l3: DMatrix<f64> },
    Diagonal { precision: f64 },
}

/// Mode-wise factors of one component.
#[derive(Clone, Debug)]
pub struct Factors {
    pub k1: SparseSym,
    pub k2: SparseSym,
    pub f1: SparseChol,
    pub f2: SparseChol,
}

#[derive(Clone, Debug)]
pub struct LocalComponent {
    pub r: Vec<f64>,
    /// Log-lengthscale along mode 1.
    pub theta1: f64,
    /// Log-lengthscale along mode 2.
    pub theta2: f64,
    pub var: VariableCov,
    factors: Factors,
}

impl LocalComponent {
    pub fn new(model: &LocalModel, r: Vec<f64>, theta1: f64, theta2: f64, var: VariableCov) -> Result<Self> {
        if r.len() != model.dims.len() {
            return Err(Error::Dimension("component length differs from tensor size".into()));
        }
        let (k1, f1) = factorize(model, Mode::One, theta1)?;
        let (k2, f2) = factorize(model, Mode::Two, theta2)?;
        Ok(Self {
            r,
            theta1,
            theta2,
            var,
            factors: Factors { k1, k2, f1, f2 },
        })
    }

    pub fn factors(&self) -> &Factors {
        &self.factors
    }

    /// `τ^q` in diagonal mode.
    pub fn precision(&self) -> Option<f64> {
        match self.var {
            VariableCov::Diagonal { precision } => Some(precision),
            VariableCov::Full { .. } => None,
        }
    }

    /// Applies `K₃ ⊗ K₂ ⊗ K₁` in place.
    pub fn apply_covariance(&self, dims: Dims, data: &mut [f64]) -> Result<()> {
        match &self.var {
            VariableCov::Full { k3, .. } => kron_matvec_in_place(&self.factors.k1, &self.factors.k2, k3, data, dims),
            VariableCov::Diagonal { precision } => {
                let k3 = ScaledIdentity {
                    n: dims.p,
                    scale: 1.0 / precision,
                };
                kron_matvec_in_place(&self.factors.k1, &self.factors.k2, &k3, data, dims)
            }
        }
    }

    fn apply_l3(&self, dims: Dims, data: &mut [f64]) -> Result<()> {
        match &self.var {
            VariableCov::Full { l3, .. } => apply_mode(l3, data, dims, Mode::Three),
            VariableCov::Diagonal { precision } => {
                let op = ScaledIdentity {
                    n: dims.p,
                    scale: precision.sqrt().recip(),
                };
                apply_mode(&op, data, dims, Mode::Three)
            }
        }
    }

    fn apply_l3_inverse(&self, dims: Dims, data: &mut [f64]) -> Result<()> {
        match &self.var {
            VariableCov::Full { l3, .. } => apply_mode(&LowerInverseOp(l3), data, dims, Mode::Three),
            VariableCov::Diagonal { precision } => {
                let op = ScaledIdentity {
                    n: dims.p,
                    scale: precision.sqrt(),
                };
                apply_mode(&op, data, dims, Mode::Three)
            }
        }
    }

    /// `(L₃ ⊗ L₂ ⊗ L₁) g`.
    pub fn colour(&self, dims: Dims, g: &[f64]) -> Result<Vec<f64>> {
        let mut out = g.to_vec();
        apply_mode(&FactorOp(&self.factors.f1), &mut out, dims, Mode::One)?;
        apply_mode(&FactorOp(&self.factors.f2), &mut out, dims, Mode::Two)?;
        self.apply_l3(dims, &mut out)?;
        Ok(out)
    }

    /// `(L₃⁻¹ ⊗ L₂⁻¹ ⊗ L₁⁻¹) r`.
    pub fn whiten(&self, dims: Dims, r: &[f64]) -> Result<Vec<f64>> {
        let mut out = r.to_vec();
        apply_mode(&WhitenOp(&self.factors.f1), &mut out, dims, Mode::One)?;
        apply_mode(&WhitenOp(&self.factors.f2), &mut out, dims, Mode::Two)?;
        self.apply_l3_inverse(dims, &mut out)?;
        Ok(out)
    }
}

fn factorize(model: &LocalModel, mode: Mode, x: f64) -> Result<(SparseSym, SparseChol)> {
    let k = model.covariance(mode, x)?;
    let f = sparse_cholesky(&k)?;
    Ok((k, f))
}

#[derive(Clone, Debug, Default)]
pub struct LocalState {
    pub components: Vec<LocalComponent>,
}

impl LocalState {
    /// Standard normal `r_q`, unit lengthscales and `K₃ = I` (or `τ^q = 1`).
    pub fn initialize<R: Rng + ?Sized>(model: &LocalModel, rng: &mut R) -> Result<Self> {
        model.validate()?;
        let p = model.dims.p;
        let mut components = Vec::with_capacity(model.q);
        for _ in 0..model.q {
            let r = standard_normal_vec(model.dims.len(), rng);
            let var = match model.k3_mode {
                K3Mode::Full => VariableCov::Full {
                    k3: DMatrix::identity(p, p),
                    l3: DMatrix::identity(p, p),
                },
                K3Mode::Diagonal => VariableCov::Diagonal { precision: 1.0 },
            };
            components.push(LocalComponent::new(model, r, 0.0, 0.0, var)?);
        }
        Ok(Self { components })
    }

    /// `vec(𝓡) = Σ_q r_q`.
    pub fn sum(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for c in &self.components {
            for (o, v) in out.iter_mut().zip(&c.r) {
                *o += v;
            }
        }
        out
    }
}

/// Draw from `N(0, K₃ ⊗ K₂ ⊗ K₁)`.
pub fn draw_prior_component<R: Rng + ?Sized>(dims: Dims, comp: &LocalComponent, rng: &mut R) -> Result<Vec<f64>> {
    let z = standard_normal_vec(dims.len(), rng);
    comp.colour(dims, &z)
}

/// Outcome of the shared correction solve.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CorrectionReport {
    pub iterations: usize,
    pub relative_residual: f64,
    pub converged: bool,
}

/// Redraws every `r_q` from its conditional given the data.
///
/// `resid_x` holds `𝓨 − 𝓧` on the observed entries. Prior draws `r̃_q` and a
/// noisy pseudo-observation `ỹ = Σ r̃_q + z` are corrected with one solve of
/// `(Σ_q K_q + E′) s = y′`, where unobserved positions carry precision `τ_I`
/// and zero data. When the solve does not converge the components are left
/// unchanged.
pub fn conditional_correct<R: Rng + ?Sized>(
    model: &LocalModel,
    state: &mut LocalState,
    resid_x: &[f64],
    mask: &Mask,
    tau: f64,
    rng: &mut R,
) -> Result<CorrectionReport> {
    let dims = model.dims;
    let n = dims.len();
    if state.components.is_empty() {
        return Ok(CorrectionReport {
            iterations: 0,
            relative_residual: 0.0,
            converged: true,
        });
    }
    let mut drawn = Vec::with_capacity(state.components.len());
    for comp in &state.components {
        drawn.push(draw_prior_component(dims, comp, rng)?);
    }
    let noise_sd = tau.sqrt().recip();
    let mut y_prime = vec![0.0; n];
    let mut e_prime = vec![1.0 / model.tau_i; n];
    for (i, y) in y_prime.iter_mut().enumerate() {
        let z = noise_sd * standard_normal(rng);
        if mask.is_observed(i) {
            let tilde: f64 = drawn.iter().map(|r| r[i]).sum::<f64>() + z;
            *y = tilde - resid_x[i];
            e_prime[i] = 1.0 / tau;
        }
    }
    let comps = &state.components;
    let e_ref = &e_prime;
    let apply = |x: &[f64], out: &mut [f64]| {
        for (o, (&xi, &e)) in out.iter_mut().zip(x.iter().zip(e_ref)) {
            *o = e * xi;
        }
        let mut buf = vec![0.0; x.len()];
        for c in comps {
            buf.copy_from_slice(x);
            c.apply_covariance(dims, &mut buf).expect("dimensions validated");
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += b;
            }
        }
    };
    let sol = pcg_solve(apply, &y_prime, &e_prime, model.pcg);
    let report = CorrectionReport {
        iterations: sol.iterations,
        relative_residual: sol.relative_residual,
        converged: sol.converged,
    };
    if !sol.converged {
        return Ok(report);
    }
    for (comp, mut r) in state.components.iter_mut().zip(drawn) {
        let mut ks = sol.x.clone();
        comp.apply_covariance(dims, &mut ks)?;
        for (ri, k) in r.iter_mut().zip(&ks) {
            *ri -= k;
        }
        comp.r = r;
    }
    Ok(report)
}

/// `Σ_Ω (a − r)²` with `a = y^q` on the observed entries.
fn observed_sse(target: &[f64], r: &[f64], entries: &[Entry]) -> f64 {
    entries
        .iter()
        .map(|e| {
            let d = target[e.idx] - r[e.idx];
            d * d
        })
        .sum()
}

/// Slice-samples the log-lengthscale of component `q` along mode 1 or 2 with
/// the whitened draw held fixed, moving `r_q` jointly with the lengthscale.
///
/// `resid` is `𝓨 − 𝓧 − 𝓡` on the observed entries.
#[allow(clippy::too_many_arguments)]
pub fn update_local_lengthscale<R: Rng + ?Sized>(
    model: &LocalModel,
    state: &mut LocalState,
    q: usize,
    mode: Mode,
    resid: &mut [f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<SliceOutcome> {
    let dims = model.dims;
    let comp = &state.components[q];
    // y^q = 𝓨 − 𝓧 − Σ_{l≠q} r_l on Ω.
    let mut target = vec![0.0; dims.len()];
    for e in entries {
        target[e.idx] = resid[e.idx] + comp.r[e.idx];
    }
    // Everything except the factor along `mode`, applied to the whitened draw.
    let mut partial = comp.whiten(dims, &comp.r)?;
    match mode {
        Mode::One => apply_mode(&FactorOp(&comp.factors.f2), &mut partial, dims, Mode::Two)?,
        Mode::Two => apply_mode(&FactorOp(&comp.factors.f1), &mut partial, dims, Mode::One)?,
        Mode::Three => return Err(Error::Parameter("mode 3 has no lengthscale".into())),
    }
    comp.apply_l3(dims, &mut partial)?;
    let x0 = match mode {
        Mode::One => comp.theta1,
        _ => comp.theta2,
    };
    let base = -0.5 * tau * observed_sse(&target, &comp.r, entries);
    let mut accepted: Option<(f64, SparseSym, SparseChol, Vec<f64>)> = None;
    let out = slice_sample_1d(
        |x| {
            let prior = model.theta_prior.logpdf(x);
            if x == x0 {
                return base + prior;
            }
            let Ok((k, f)) = factorize(model, mode, x) else {
                return f64::NEG_INFINITY;
            };
            let mut r = partial.clone();
            if apply_mode(&FactorOp(&f), &mut r, dims, mode).is_err() {
                return f64::NEG_INFINITY;
            }
            let ll = -0.5 * tau * observed_sse(&target, &r, entries);
            accepted = Some((x, k, f, r));
            ll + prior
        },
        x0,
        SLICE_SCALE,
        rng,
        MAX_SHRINK,
    );
    if out.accepted && out.value != x0 {
        let (x, k, f, r) = accepted.expect("accepted proposal was evaluated last");
        debug_assert_eq!(x, out.value);
        let comp = &mut state.components[q];
        for e in entries {
            resid[e.idx] += comp.r[e.idx] - r[e.idx];
        }
        comp.r = r;
        match mode {
            Mode::One => {
                comp.theta1 = x;
                comp.factors.k1 = k;
                comp.factors.f1 = f;
            }
            _ => {
                comp.theta2 = x;
                comp.factors.k2 = k;
                comp.factors.f2 = f;
            }
        }
    }
    Ok(out)
}

/// Updates both lengthscales of every local component.
pub fn update_local_lengthscales<R: Rng + ?Sized>(
    model: &LocalModel,
    state: &mut LocalState,
    resid: &mut [f64],
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<()> {
    for q in 0..state.components.len() {
        for mode in [Mode::One, Mode::Two] {
            update_local_lengthscale(model, state, q, mode, resid, entries, tau, rng)?;
        }
    }
    Ok(())
}

/// `(m, t)` positions observed for at least one variable, as `m + M t`.
pub fn observed_fibers(mask: &Mask) -> Vec<usize> {
    let dims = mask.dims();
    let mt = dims.m * dims.t;
    let mut seen = vec![false; mt];
    for &i in mask.observed() {
        seen[i % mt] = true;
    }
    (0..mt).filter(|&i| seen[i]).collect()
}

/// `[K₂ ⊗ K₁]_ω` restricted to the observed fibers.
pub fn restricted_kron(k1: &SparseSym, k2: &SparseSym, fibers: &[usize]) -> Result<SparseSym> {
    let m = k1.n();
    let mut pos = vec![usize::MAX; m * k2.n()];
    for (a, &f) in fibers.iter().enumerate() {
        pos[f] = a;
    }
    let mut triplets = Vec::new();
    for (a, &f) in fibers.iter().enumerate() {
        let (mi, ti) = (f % m, f / m);
        for (tj, v2) in k2.column(ti) {
            for (mj, v1) in k1.column(mi) {
                let b = pos[mj + m * tj];
                if b != usize::MAX && b >= a {
                    triplets.push((b, a, v1 * v2));
                }
            }
        }
    }
    SparseSym::from_triplets(fibers.len(), triplets)
}

/// Posterior scale and degrees of freedom of `K₃` in full mode:
/// `Ψ* = R_ω [K₂⊗K₁]_ω⁻¹ R_ωᵀ + Ψ0⁻¹` and `ν* = ν0 + N_ω`.
pub fn variable_posterior(model: &LocalModel, comp: &LocalComponent, mask: &Mask) -> Result<(DMatrix<f64>, f64)> {
    let dims = model.dims;
    let (mt, p) = (dims.m * dims.t, dims.p);
    let fibers = observed_fibers(mask);
    let (c0, _) = dense_cholesky(&model.psi0)?;
    let mut psi = c0.inverse();
    if !fibers.is_empty() {
        let kw = restricted_kron(&comp.factors.k1, &comp.factors.k2, &fibers)?;
        let chol = sparse_cholesky(&kw)?;
        let rows: Vec<Vec<f64>> = (0..p)
            .map(|pp| fibers.iter().map(|&f| comp.r[f + mt * pp]).collect())
            .collect();
        let solved: Vec<Vec<f64>> = rows.iter().map(|row| chol.solve(row)).collect();
        for i in 0..p {
            for j in 0..p {
                psi[(i, j)] += rows[i].iter().zip(&solved[j]).map(|(a, b)| a * b).sum::<f64>();
            }
        }
    }
    for j in 0..p {
        for i in 0..j {
            let v = 0.5 * (psi[(i, j)] + psi[(j, i)]);
            psi[(i, j)] = v;
            psi[(j, i)] = v;
        }
    }
    Ok((psi, model.nu0 + fibers.len() as f64))
}

/// Updates `K₃` of component `q`: an inverse-Wishart draw in full mode, or a
/// whitened slice update of `log τ^q` in diagonal mode (which rescales `r_q`).
#[allow(clippy::too_many_arguments)]
pub fn sample_variable_covariance<R: Rng + ?Sized>(
    model: &LocalModel,
    state: &mut LocalState,
    q: usize,
    resid: &mut [f64],
    mask: &Mask,
    entries: &[Entry],
    tau: f64,
    rng: &mut R,
) -> Result<Option<SliceOutcome>> {
    match state.components[q].var {
        VariableCov::Full { .. } => {
            let (psi, nu) = variable_posterior(model, &state.components[q], mask)?;
            let k3 = sample_inverse_wishart(&psi, nu, rng)?;
            let (chol, _) = dense_cholesky(&k3)?;
            state.components[q].var = VariableCov::Full { l3: chol.l(), k3 };
            Ok(None)
        }
        VariableCov::Diagonal { precision } => {
            let comp = &state.components[q];
            let (mut aa, mut ab, mut bb) = (0.0, 0.0, 0.0);
            for e in entries {
                let a = resid[e.idx] + comp.r[e.idx];
                let b = comp.r[e.idx];
                aa += a * a;
                ab += a * b;
                bb += b * b;
            }
            let x0 = precision.ln();
            let prior = model.precision_prior;
            let out = slice_sample_1d(
                |x| {
                    let s = (precision / x.exp()).sqrt();
                    let sse = aa - 2.0 * s * ab + s * s * bb;
                    -0.5 * tau * sse + prior.logpdf(x.exp()) + x
                },
                x0,
                SLICE_SCALE,
                rng,
                MAX_SHRINK,
            );
            if out.value != x0 {
                let new = out.value.exp();
                let s = (precision / new).sqrt();
                let comp = &mut state.components[q];
                for e in entries {
                    resid[e.idx] += comp.r[e.idx] * (1.0 - s);
                }
                comp.r.iter_mut().for_each(|v| *v *= s);
                comp.var = VariableCov::Diagonal { precision: new };
            }
            Ok(Some(out))
        }
    }
}
