use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use egopose::model::Task;
use egopose_cli::{execute, load_config, threads_from_env, CliError, Command, Options, RunConfig};

#[derive(Parser)]
#[command(name = "egopose", version, about = "Egocentric occlusion simulation, pose completion and IK post-processing")]
struct Cli {
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[arg(long, global = true, value_parser = parse_task)]
    task: Option<Task>,
    /// Fail when the network's occluded RMSJPE exceeds this many centimeters.
    #[arg(long = "threshold-cm", global = true)]
    threshold_cm: Option<f64>,
    /// Contact inflation in meters.
    #[arg(long, global = true)]
    inflation: Option<f64>,
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand)]
enum Sub {
    /// Write a synthetic BVH corpus.
    Synth,
    /// Parse and resample BVH files into the internal corpus.
    Ingest,
    /// Simulate headset occlusion for every corpus sequence.
    Simulate,
    /// Occlusion and contact statistics.
    Stats,
    /// Train the network on the training split.
    Train,
    /// Evaluate against the baseline on the test split.
    Eval,
    /// Print per-frame predictions for one BVH file as CSV.
    Predict {
        #[arg(long)]
        input: PathBuf,
    },
    /// Smooth, IK-solve and write predictions for one BVH file as BVH.
    Export {
        #[arg(long)]
        input: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    Task::parse(s).ok_or_else(|| format!("unknown task {s}; expected inside-out, three-point or finger"))
}

fn run(cli: Cli) -> Result<String, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(t) = cli.task {
        cfg.task = t;
    }
    if let Some(i) = cli.inflation {
        cfg.contact_inflation = i;
    }
    let mut opts = Options { threshold_cm: cli.threshold_cm, input: None, threads: threads_from_env() };
    let command = match cli.command {
        Sub::Synth => Command::Synth,
        Sub::Ingest => Command::Ingest,
        Sub::Simulate => Command::Simulate,
        Sub::Stats => Command::Stats,
        Sub::Train => Command::Train,
        Sub::Eval => Command::Eval,
        Sub::Predict { input } => {
            opts.input = Some(input);
            Command::Predict
        }
        Sub::Export { input } => {
            opts.input = Some(input);
            Command::Export
        }
    };
    execute(command, &cfg, &opts)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
