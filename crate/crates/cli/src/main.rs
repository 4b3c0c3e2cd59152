mod commands;
mod config;
mod error;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{align, losses, metrics, separate, simulate, wiener};
use crate::error::CliResult;

#[derive(Parser)]
#[command(
    name = "mcsep",
    version,
    about = "Unsupervised multichannel separation experiments"
)]
struct Cli {
    /// TOML file with one section per command; flags override it.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Raise log verbosity (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic reverberant scene to WAV files.
    Simulate(simulate::SimulateOpts),
    /// Blind separation by alternating least squares.
    Separate(separate::SeparateOpts),
    /// Mixture-consistency loss over a grid of speaker mixtures.
    LossSurface(losses::SurfaceOpts),
    /// Mixture-consistency and magnitude-scattering losses of given estimates.
    LossEval(losses::EvalOpts),
    /// Time-domain Wiener mixture loss of given estimates.
    Wiener(wiener::WienerOpts),
    /// SI-SDR and SNR of estimates against reference images.
    Metrics(metrics::MetricsOpts),
    /// Resolve the frequency permutation of STFT-domain estimates.
    Align(align::AlignOpts),
}

fn run(cli: Cli) -> CliResult<()> {
    let file = cli.config.as_deref().map(config::read_file).transpose()?;
    let file = file.as_ref();
    match cli.command {
        Command::Simulate(o) => simulate::run(&o, file),
        Command::Separate(o) => separate::run(&o, file),
        Command::LossSurface(o) => losses::run_surface(&o, file),
        Command::LossEval(o) => losses::run_eval(&o, file),
        Command::Wiener(o) => wiener::run(&o, file),
        Command::Metrics(o) => metrics::run(&o, file),
        Command::Align(o) => align::run(&o, file),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
