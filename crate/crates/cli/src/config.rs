//! JSON run configuration.

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use bckl_core::kernels::DEFAULT_JITTER;
use bckl_core::{
    FactorPrior, GammaPrior, Hyperpriors, K3Mode, KernelFamily, McmcConfig, NormalPrior, PcgOptions, Scenario,
    TaperFamily, TaperSpec,
};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum FactorPriorSpec {
    Kernel {
        family: KernelFamily,
    },
    White,
    /// Headerless CSV matrix.
    Precomputed {
        path: PathBuf,
    },
}

impl Default for FactorPriorSpec {
    fn default() -> Self {
        FactorPriorSpec::Kernel {
            family: KernelFamily::SquaredExponential,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HyperSpec {
    pub phi: NormalPrior,
    pub delta: NormalPrior,
    pub theta: NormalPrior,
    pub a0: f64,
    pub b0: f64,
    /// Row-major `P × P`.
    pub psi0: Option<Vec<Vec<f64>>>,
    pub nu0: Option<f64>,
    pub local_precision: GammaPrior,
}

impl Default for HyperSpec {
    fn default() -> Self {
        let h = Hyperpriors::default();
        Self {
            phi: h.phi,
            delta: h.delta,
            theta: h.theta,
            a0: h.a0,
            b0: h.b0,
            psi0: None,
            nu0: None,
            local_precision: h.local_precision,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PcgSpec {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PcgSpec {
    fn default() -> Self {
        let o = PcgOptions::default();
        Self {
            tol: o.tol,
            max_iter: o.max_iter,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Tensor file, or long-format CSV when the extension is `.csv`.
    pub input: PathBuf,
    /// Dimensions for CSV input; inferred from the largest indices when absent.
    pub dims: Option<[usize; 3]>,
    pub output_dir: PathBuf,
    /// Hides entries of `input` before fitting and scores them afterwards.
    pub scenario: Option<Scenario>,
    pub truth: Option<PathBuf>,
    pub test_mask: Option<PathBuf>,
    pub rank: usize,
    pub q: usize,
    pub burn_in: usize,
    pub samples: usize,
    pub seed: u64,
    pub factor_prior_1: FactorPriorSpec,
    pub factor_prior_2: FactorPriorSpec,
    pub coords_1: Option<Vec<f64>>,
    pub coords_2: Option<Vec<f64>>,
    pub local_kernel_1: KernelFamily,
    pub local_kernel_2: KernelFamily,
    pub taper_1: TaperSpec,
    pub taper_2: TaperSpec,
    pub k3_mode: K3Mode,
    pub hyperpriors: HyperSpec,
    pub pcg: PcgSpec,
    pub tau_i: f64,
    pub jitter: f64,
    pub initial_tau: f64,
    pub fixed_tau: Option<f64>,
    pub sample_hyperparameters: bool,
    pub interval_level: f64,
    pub interval_includes_noise: bool,
    pub max_solver_failure_rate: f64,
    pub exact_quantile_limit: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = McmcConfig::default();
        let taper = TaperSpec {
            family: TaperFamily::Bohman,
            range: 10.0,
        };
        Self {
            input: PathBuf::new(),
            dims: None,
            output_dir: PathBuf::from("run"),
            scenario: None,
            truth: None,
            test_mask: None,
            rank: m.rank,
            q: m.q,
            burn_in: m.burn_in,
            samples: m.samples,
            seed: 0,
            factor_prior_1: FactorPriorSpec::default(),
            factor_prior_2: FactorPriorSpec::default(),
            coords_1: None,
            coords_2: None,
            local_kernel_1: KernelFamily::SquaredExponential,
            local_kernel_2: KernelFamily::SquaredExponential,
            taper_1: taper,
            taper_2: taper,
            k3_mode: m.k3_mode,
            hyperpriors: HyperSpec::default(),
            pcg: PcgSpec::default(),
            tau_i: m.tau_i,
            jitter: DEFAULT_JITTER,
            initial_tau: m.initial_tau,
            fixed_tau: None,
            sample_hyperparameters: true,
            interval_level: m.interval_level,
            interval_includes_noise: m.interval_includes_noise,
            max_solver_failure_rate: m.max_solver_failure_rate,
            exact_quantile_limit: m.exact_quantile_limit,
        }
    }
}

/// A configuration that failed schema or semantic checks.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

impl RunConfig {
    /// Parses JSON and resolves relative paths against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self> {
        let mut cfg: RunConfig = serde_json::from_str(text).map_err(|e| ConfigError(format!("config: {e}")))?;
        if cfg.input.as_os_str().is_empty() {
            return Err(ConfigError("config: `input` is required".into()).into());
        }
        if cfg.rank == 0 && cfg.q == 0 {
            return Err(ConfigError("config: `rank` and `q` cannot both be zero".into()).into());
        }
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut cfg.input);
        fix(&mut cfg.output_dir);
        for p in [&mut cfg.truth, &mut cfg.test_mask].into_iter().flatten() {
            fix(p);
        }
        for f in [&mut cfg.factor_prior_1, &mut cfg.factor_prior_2] {
            if let FactorPriorSpec::Precomputed { path } = f {
                fix(path);
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, Vec<u8>)> {
        let bytes = std::fs::read(path).with_context(|| format!("reading config {}", path.display()))?;
        let text = std::str::from_utf8(&bytes).map_err(|_| ConfigError("config is not UTF-8".into()))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Ok((Self::from_json(text, base)?, bytes))
    }

    fn factor_prior(spec: &FactorPriorSpec) -> Result<FactorPrior> {
        Ok(match spec {
            FactorPriorSpec::Kernel { family } => FactorPrior::Kernel(*family),
            FactorPriorSpec::White => FactorPrior::White,
            FactorPriorSpec::Precomputed { path } => FactorPrior::Precomputed(
                bckl_core::io::load_matrix_csv(path).with_context(|| format!("loading {}", path.display()))?,
            ),
        })
    }

    pub fn mcmc(&self) -> Result<McmcConfig> {
        let psi0 = match &self.hyperpriors.psi0 {
            None => None,
            Some(rows) => {
                let n = rows.len();
                if rows.iter().any(|r| r.len() != n) {
                    return Err(ConfigError("config: `psi0` must be square".into()).into());
                }
                Some(DMatrix::from_row_iterator(n, n, rows.iter().flatten().copied()))
            }
        };
        let h = &self.hyperpriors;
        let cfg = McmcConfig {
            rank: self.rank,
            q: self.q,
            burn_in: self.burn_in,
            samples: self.samples,
            hyper: Hyperpriors {
                phi: h.phi,
                delta: h.delta,
                theta: h.theta,
                a0: h.a0,
                b0: h.b0,
                psi0,
                nu0: h.nu0,
                local_precision: h.local_precision,
            },
            prior_u: Self::factor_prior(&self.factor_prior_1)?,
            prior_v: Self::factor_prior(&self.factor_prior_2)?,
            coords_1: self.coords_1.clone(),
            coords_2: self.coords_2.clone(),
            local_kernel_1: self.local_kernel_1,
            local_kernel_2: self.local_kernel_2,
            taper_1: self.taper_1,
            taper_2: self.taper_2,
            k3_mode: self.k3_mode,
            seed: self.seed,
            pcg: PcgOptions {
                tol: self.pcg.tol,
                max_iter: self.pcg.max_iter,
            },
            tau_i: self.tau_i,
            jitter: self.jitter,
            initial_tau: self.initial_tau,
            interval_level: self.interval_level,
            interval_includes_noise: self.interval_includes_noise,
            max_solver_failure_rate: self.max_solver_failure_rate,
            exact_quantile_limit: self.exact_quantile_limit,
            sample_hyperparameters: self.sample_hyperparameters,
            fixed_tau: self.fixed_tau,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}
