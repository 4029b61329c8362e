use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use csi_inpaint::commands::{self, Split, TrainArgs};
use csi_inpaint::{defaults, CliError};
use csi_inpaint_model::Mode;

#[derive(Parser)]
#[command(name = "csi-inpaint", version, about = "Occlusion removal from camera frames guided by WiFi CSI")]
struct Cli {
    /// Print a default config of the given kind and exit.
    #[arg(long, value_enum)]
    print_config: Option<ConfigKind>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ConfigKind {
    Simulate,
    Run,
    Experiment,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic room into a dataset directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a model and write a checkpoint.
    Train {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on one split.
    Eval {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment sweep.
    Sweep {
        #[arg(long)]
        experiment: PathBuf,
    },
    /// Print a results CSV as a markdown table.
    Report {
        #[arg(long)]
        results: PathBuf,
    },
}

fn print_json<T: serde::Serialize>(v: &T) {
    println!("{}", serde_json::to_string_pretty(v).expect("serializes"));
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(kind) = cli.print_config {
        match kind {
            ConfigKind::Simulate => print_json(&defaults::simulate()),
            ConfigKind::Run => print_json(&defaults::run()),
            ConfigKind::Experiment => print_json(&defaults::experiment()),
        }
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(CliError::config("no command given (see --help)"));
    };
    match command {
        Command::Simulate { config, out, seed } => {
            let m = commands::simulate(&config, &out, seed)?;
            for s in &m.image_streams {
                println!("camera {}: {:?}", s.id, s.shape);
            }
        }
        Command::Train {
            dataset,
            config,
            mode,
            out,
            seed,
            resume,
        } => {
            let s = commands::train(&TrainArgs {
                dataset,
                config,
                mode,
                out: out.clone(),
                seed,
                resume,
            })?;
            println!(
                "{} epochs in {:.1} s, final loss {:.6}; checkpoint {}",
                s.epochs,
                s.train_seconds,
                s.loss_curve.last().copied().unwrap_or(f64::NAN),
                out.display()
            );
        }
        Command::Eval {
            dataset,
            checkpoint,
            split,
            out,
        } => {
            let e = commands::eval(&dataset, &checkpoint, split, out.as_deref())?;
            println!(
                "mean PSNR {:.3} dB, mean SSIM {:.4} over {} samples; outputs in {}",
                e.record.mean_psnr,
                e.record.mean_ssim,
                e.samples.len(),
                e.dir.display()
            );
        }
        Command::Sweep { experiment } => {
            let r = commands::sweep(&experiment)?;
            let skipped = r.outcomes.iter().filter(|o| o.skipped).count();
            println!("{} points ({} already done)", r.outcomes.len(), skipped);
        }
        Command::Report { results } => print!("{}", commands::report(&results)?),
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
