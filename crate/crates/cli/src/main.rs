//! Command-line front end: dataset synthesis, supervised and episodic
//! training, evaluation, complexity and latency reports, gradient checks.

mod commands;
mod errors;
mod manifest;
mod settings;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::errors::exit_code;

/// Environment variable holding the default worker-thread count.
pub const THREADS_ENV: &str = "ALWNN_THREADS";

#[derive(Parser, Debug)]
#[command(name = "alwnn", version, about = "Lifting-wavelet modulation classifier toolkit")]
struct Cli {
    /// Worker threads (defaults to $ALWNN_THREADS, then all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic IQ dataset.
    Synth(commands::SynthArgs),
    /// Train a classifier on a dataset.
    Train(commands::TrainArgs),
    /// Evaluate a classifier: accuracy per SNR, macro-F1, kappa, confusion.
    Eval(commands::EvalArgs),
    /// Parameter, MACC and FLOP counts.
    Complexity(commands::ComplexityArgs),
    /// Per-sample inference latency over batch sizes.
    Bench(commands::BenchArgs),
    /// Episodic prototypical training of an encoder.
    MetaTrain(commands::MetaTrainArgs),
    /// Few-shot evaluation of a frozen encoder on unseen classes.
    MetaEval(commands::MetaEvalArgs),
    /// Finite-difference check of every analytic gradient.
    Gradcheck(commands::GradcheckArgs),
    /// Re-run the command recorded in a manifest.
    Replay(ReplayArgs),
}

#[derive(Args, Debug)]
struct ReplayArgs {
    /// A manifest.json written by an earlier run.
    manifest: PathBuf,
    /// Where to write the reproduced artifacts.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn configure_threads(flag: Option<usize>) -> anyhow::Result<()> {
    let from_env = match std::env::var(THREADS_ENV) {
        Ok(v) => Some(
            v.trim()
                .parse::<usize>()
                .map_err(|_| errors::Usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?,
        ),
        Err(_) => None,
    };
    if let Some(n) = flag.or(from_env) {
        if n == 0 {
            return Err(errors::Usage("thread count must be positive".into()).into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    configure_threads(cli.threads)?;
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Train(a) => commands::train(a),
        Command::Eval(a) => commands::eval(a),
        Command::Complexity(a) => commands::complexity(a),
        Command::Bench(a) => commands::bench(a),
        Command::MetaTrain(a) => commands::meta_train(a),
        Command::MetaEval(a) => commands::meta_eval(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
        Command::Replay(a) => commands::replay(&a.manifest, &a.out, a.force),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(errors::USAGE) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
