mod commands;
mod config;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{exit_code, EvalArgs, FitArgs, MaskArgs, SummarizeArgs, SynthArgs};

/// Probabilistic tensor completion with a global CP factorization and local
/// tapered Gaussian processes.
#[derive(Parser, Debug)]
#[command(name = "bckl", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate the synthetic nonstationary field.
    Synth(SynthArgs),
    /// Hide entries of a tensor and write the training tensor and test mask.
    Mask(MaskArgs),
    /// Run the sampler described by a JSON config.
    Fit(FitArgs),
    /// Rebuild per-entry summaries from a finished run.
    Summarize(SummarizeArgs),
    /// Score a finished run on held-out entries.
    Eval(EvalArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match cli.command {
        Command::Synth(a) => commands::synth(&a),
        Command::Mask(a) => commands::mask(&a),
        Command::Fit(a) => commands::fit(&a),
        Command::Summarize(a) => commands::summarize(&a),
        Command::Eval(a) => commands::eval(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
