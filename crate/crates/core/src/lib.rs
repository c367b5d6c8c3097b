//! Bayesian complementary kernelized learning: a CP factorization with Gaussian
//! process factor priors plus a sum of tapered Kronecker-structured Gaussian
//! processes, fitted by MCMC for tensor completion.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod distributions;
pub mod error;
pub mod global;
pub mod io;
pub mod kernels;
pub mod linalg;
pub mod local;
pub mod mcmc;
pub mod metrics;
pub mod missing;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use global::{GlobalModel, GlobalState, NormalPrior};
pub use kernels::{FactorPrior, KernelFamily, KernelSpec, TaperFamily, TaperSpec};
pub use linalg::{PcgOptions, SparseChol, SparseSym};
pub use local::{GammaPrior, K3Mode, LocalComponent, LocalModel, LocalState};
pub use mcmc::{
    run_mcmc, Chain, Hyperpriors, McmcConfig, McmcOutput, PosteriorAccumulator, PosteriorSamples, Summary, SweepTrace,
    UpdateStep,
};
pub use metrics::ScoreReport;
pub use missing::{apply_missing, MissingOutcome, Scenario};
pub use synth::generate_synthetic;
pub use tensor::{CpFactors, Dims, Mask, Mode, SpatioTensor};
