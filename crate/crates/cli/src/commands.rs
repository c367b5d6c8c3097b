//! Subcommand implementations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use bckl_core::io::{self, load_mask, load_tensor, load_values, save_mask, save_tensor, save_values};
use bckl_core::metrics::{self, ScoreReport};
use bckl_core::{
    apply_missing, generate_synthetic, run_mcmc, Dims, K3Mode, Mask, PosteriorAccumulator, Scenario, SpatioTensor,
    Summary, SweepTrace,
};
use clap::{Args, ValueEnum};
use log::info;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::config::{ConfigError, RunConfig};

pub const POSTERIOR_FILE: &str = "posterior.bin";
pub const SUMMARY_FILES: [&str; 4] = ["mean.bckl", "std.bckl", "lower.bckl", "upper.bckl"];

/// Maps an error chain onto the documented exit codes.
pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() {
            return 1;
        }
        if let Some(err) = cause.downcast_ref::<bckl_core::Error>() {
            use bckl_core::Error::*;
            return match err {
                Config(_) | Parameter(_) => 1,
                Dimension(_) | Validation(_) | Format(_) | Io(_) => 2,
                Solver(_) | NotPositiveDefinite(_) => 3,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<serde_json::Error>().is_some() {
            return 2;
        }
    }
    1
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 100)]
    pub n1: usize,
    #[arg(long, default_value_t = 100)]
    pub n2: usize,
    #[arg(long, default_value_t = 0.01)]
    pub noise_var: f64,
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let t = generate_synthetic(a.n1, a.n2, a.noise_var, a.seed)?;
    save_tensor(&a.out, &t)?;
    info!("wrote {}x{}x1 tensor to {}", a.n1, a.n2, a.out.display());
    Ok(())
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ScenarioKind {
    Rm,
    Nm,
    Sbm,
    Quadrant,
}

#[derive(Args, Debug)]
pub struct MaskArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub scenario: ScenarioKind,
    /// Missing rate; ignored for the quadrant scenario.
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub train: PathBuf,
    #[arg(long)]
    pub test_mask: PathBuf,
}

pub fn mask(a: &MaskArgs) -> Result<()> {
    let rate = || {
        a.rate
            .ok_or_else(|| ConfigError("--rate is required for this scenario".into()))
    };
    let scenario = match a.scenario {
        ScenarioKind::Rm => Scenario::Rm { rate: rate()? },
        ScenarioKind::Nm => Scenario::Nm { rate: rate()? },
        ScenarioKind::Sbm => Scenario::Sbm { rate: rate()? },
        ScenarioKind::Quadrant => Scenario::quadrant(),
    };
    let t = load_input(&a.input, None)?;
    let out = apply_missing(&t, scenario, a.seed)?;
    save_tensor(&a.train, &out.train)?;
    save_mask(&a.test_mask, &out.test)?;
    eprintln!(
        "held out {} of {} observed entries ({:.4})",
        out.test.count(),
        t.mask().count(),
        out.achieved_rate
    );
    Ok(())
}

fn load_input(path: &Path, dims: Option<[usize; 3]>) -> Result<SpatioTensor> {
    let is_csv = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let t = if is_csv {
        let dims = dims.map(|[m, t, p]| Dims::new(m, t, p)).transpose()?;
        io::load_long_csv(path, dims)
    } else {
        load_tensor(path)
    };
    t.with_context(|| format!("reading {}", path.display()))
}

#[derive(Args, Debug)]
pub struct FitArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    config_sha256: String,
    seed: u64,
    dims: [usize; 3],
    observed: usize,
    rank: usize,
    q: usize,
    burn_in: usize,
    samples: usize,
    k3_mode: K3Mode,
    interval_level: f64,
    interval_includes_noise: bool,
    exact_quantiles: bool,
    solver_failures: usize,
    final_tau: f64,
    outputs: Vec<&'a str>,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn trace_header(rank: usize, q: usize, diagonal: bool) -> String {
    let mut cols = vec!["iter".to_string(), "tau".to_string()];
    for (name, n) in [("phi", rank), ("delta", rank), ("theta1", q), ("theta2", q)] {
        cols.extend((1..=n).map(|i| format!("{name}_{i}")));
    }
    cols.push("pcg_iters".into());
    if diagonal {
        cols.extend((1..=q).map(|i| format!("local_precision_{i}")));
    }
    cols.join(",")
}

fn trace_row(t: &SweepTrace) -> String {
    let mut cols = vec![t.iter.to_string(), t.tau.to_string()];
    for v in [&t.phi, &t.delta, &t.theta1, &t.theta2] {
        cols.extend(v.iter().map(f64::to_string));
    }
    cols.push(t.pcg_iters.to_string());
    cols.extend(t.local_precision.iter().map(f64::to_string));
    cols.join(",")
}

fn write_summary(dir: &Path, s: &Summary) -> Result<()> {
    for (name, v) in SUMMARY_FILES.iter().zip([&s.mean, &s.std, &s.lower, &s.upper]) {
        save_values(&dir.join(name), s.dims, v)?;
    }
    Ok(())
}

pub fn fit(a: &FitArgs) -> Result<()> {
    let (cfg, raw) = RunConfig::load(&a.config)?;
    let mcmc = cfg.mcmc()?;
    let input = load_input(&cfg.input, cfg.dims)?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;

    let mut outputs = vec!["manifest.json", "trace.csv", "progress.jsonl", POSTERIOR_FILE];
    outputs.extend(SUMMARY_FILES);
    let (train, held_out) = match cfg.scenario {
        Some(s) => {
            let out = apply_missing(&input, s, cfg.seed)?;
            save_tensor(&dir.join("train.bckl"), &out.train)?;
            save_mask(&dir.join("test.mask"), &out.test)?;
            outputs.extend(["train.bckl", "test.mask"]);
            (out.train, Some((input.values().to_vec(), out.test)))
        }
        None => {
            let held = match (&cfg.truth, &cfg.test_mask) {
                (Some(t), Some(m)) => Some((load_values(t)?.1, load_mask(m)?)),
                (None, None) => None,
                _ => bail!(ConfigError("`truth` and `test_mask` must be given together".into())),
            };
            (input, held)
        }
    };

    let diagonal = mcmc.k3_mode == K3Mode::Diagonal && mcmc.q > 0;
    let mut trace_csv = BufWriter::new(File::create(dir.join("trace.csv"))?);
    let mut progress = BufWriter::new(File::create(dir.join("progress.jsonl"))?);
    writeln!(trace_csv, "{}", trace_header(mcmc.rank, mcmc.q, diagonal))?;
    let total = mcmc.burn_in + mcmc.samples;
    let mut io_err: Option<std::io::Error> = None;
    let result = run_mcmc(&train, &mcmc, |t| {
        let line = serde_json::to_string(t).expect("trace serializes");
        let r = writeln!(progress, "{line}").and_then(|_| writeln!(trace_csv, "{}", trace_row(t)));
        if let Err(e) = r {
            io_err.get_or_insert(e);
        }
        if t.iter % 100 == 0 || t.iter == total {
            info!("sweep {}/{total}: tau {:.4}, pcg {}", t.iter, t.tau, t.pcg_iters);
        }
    });
    progress.flush()?;
    trace_csv.flush()?;
    if let Some(e) = io_err {
        return Err(e.into());
    }
    let out = result?;

    let mut post = BufWriter::new(File::create(dir.join(POSTERIOR_FILE))?);
    out.posterior.write_to(&mut post)?;
    post.flush()?;
    let summary = out.posterior.summarize(mcmc.interval_level)?;
    write_summary(dir, &summary)?;

    if let Some((truth, mask)) = &held_out {
        let report = score_summary(&summary, truth, mask, 1.0 - mcmc.interval_level, None)?;
        fs::write(dir.join("score.json"), report_json(&report)?)?;
        outputs.push("score.json");
    }

    let d = train.dims();
    let manifest = Manifest {
        tool: "bckl",
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: hex(&Sha256::digest(&raw)),
        seed: cfg.seed,
        dims: [d.m, d.t, d.p],
        observed: train.mask().count(),
        rank: mcmc.rank,
        q: mcmc.q,
        burn_in: mcmc.burn_in,
        samples: mcmc.samples,
        k3_mode: mcmc.k3_mode,
        interval_level: mcmc.interval_level,
        interval_includes_noise: mcmc.interval_includes_noise,
        exact_quantiles: out.posterior.is_exact(),
        solver_failures: out.solver_failures,
        final_tau: out.tau,
        outputs,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct SummarizeArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
}

pub fn summarize(a: &SummarizeArgs) -> Result<()> {
    let path = a.run.join(POSTERIOR_FILE);
    let mut r = std::io::BufReader::new(File::open(&path).with_context(|| format!("opening {}", path.display()))?);
    let acc = PosteriorAccumulator::read_from(&mut r)?;
    write_summary(&a.run, &acc.summarize(a.level)?)?;
    Ok(())
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub test_mask: PathBuf,
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Peak value for PSNR; defaults to the largest held-out truth.
    #[arg(long)]
    pub max_value: Option<f64>,
}

fn score_summary(s: &Summary, truth: &[f64], mask: &Mask, alpha: f64, max_value: Option<f64>) -> Result<ScoreReport> {
    if mask.dims() != s.dims || truth.len() != s.dims.len() {
        bail!(bckl_core::Error::Dimension(
            "truth, test mask and run disagree in shape".into()
        ));
    }
    let idx = mask.observed();
    let pick = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<_>>();
    let y = pick(truth);
    if y.iter().any(|v| !v.is_finite()) {
        bail!(bckl_core::Error::Validation(
            "truth is missing at a held-out entry".into()
        ));
    }
    Ok(metrics::score(
        &y,
        &pick(&s.mean),
        &pick(&s.std),
        &pick(&s.lower),
        &pick(&s.upper),
        alpha,
        max_value,
    )?)
}

fn report_json(r: &ScoreReport) -> Result<String> {
    Ok(serde_json::to_string_pretty(r)? + "\n")
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let mut parts = Vec::with_capacity(4);
    let mut dims = None;
    for name in SUMMARY_FILES {
        let (d, v) = load_values(&a.run.join(name)).with_context(|| format!("reading {name}"))?;
        if dims.is_some_and(|x| x != d) {
            bail!(bckl_core::Error::Format(format!("{name} has a different shape")));
        }
        dims = Some(d);
        parts.push(v);
    }
    let upper = parts.pop().expect("four parts");
    let lower = parts.pop().expect("four parts");
    let std = parts.pop().expect("four parts");
    let mean = parts.pop().expect("four parts");
    let dims = dims.expect("four parts");
    let summary = Summary {
        dims,
        mean,
        std,
        lower,
        upper,
        level: 1.0 - a.alpha,
    };
    let (_, truth) = load_values(&a.truth)?;
    let mask = load_mask(&a.test_mask)?;
    // Same arithmetic as `fit`, which scores at `1 - level`.
    let report = score_summary(&summary, &truth, &mask, 1.0 - summary.level, a.max_value)?;
    let json = report_json(&report)?;
    fs::write(a.run.join("score.json"), &json)?;
    print!("{json}");
    Ok(())
}
