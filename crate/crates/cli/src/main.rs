mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "skyscan",
    version,
    about = "LiDAR drone detection toolkit: scan simulation, data augmentation, sparse convolution benchmarks, evaluation and tracking"
)]
struct Cli {
    /// TOML configuration; built-in defaults are used when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Replaces every seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print the effective configuration as TOML.
    Config,
    /// Ray trace drone meshes into a point stream plus ground-truth boxes.
    Simulate(commands::SimulateArgs),
    /// Count returns of a mesh placed at every voxel of a region (CSV heat map).
    Directivity(commands::DirectivityArgs),
    /// Build the paired simulated and rigid-copy training sets.
    Augment(commands::AugmentArgs),
    /// Compare dense, sparse and submanifold convolution engines.
    BenchConv(commands::BenchConvArgs),
    /// Score detections against ground truth.
    DetectEval(commands::DetectEvalArgs),
    /// Replay frames and detections through the tracker.
    Track(commands::TrackArgs),
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = commands::load_config(cli.config.as_deref(), cli.seed).and_then(|cfg| match cli.command {
        Command::Config => commands::print_config(&cfg),
        Command::Simulate(a) => commands::simulate(&cfg, &a),
        Command::Directivity(a) => commands::directivity(&cfg, &a),
        Command::Augment(a) => commands::augment(&cfg, &a),
        Command::BenchConv(a) => commands::bench_conv(&cfg, &a),
        Command::DetectEval(a) => commands::detect_eval(&cfg, &a),
        Command::Track(a) => commands::track(&cfg, &a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
