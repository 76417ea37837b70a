use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rednet_cli::commands::{self, EvalOptions};
use rednet_cli::config::RunConfig;
use rednet_cli::{init_threads, CliError};

/// Train, apply and evaluate convolutional encoder-decoder restoration nets.
#[derive(Parser)]
#[command(name = "rednet", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a network and write its checkpoint and loss trace.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `train.seed`.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Restore one image with a trained checkpoint.
    Restore {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Average over the eight flips and rotations.
        #[arg(long)]
        ensemble: bool,
    },
    /// Corrupt, restore and score a directory of clean images.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        config: PathBuf,
        /// Overrides `eval.test_dir`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Overrides `output.metrics_csv`.
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        ensemble: bool,
    },
    /// Train a matched set of architectures and write one loss CSV each.
    Ablate {
        #[arg(long)]
        variant: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed } => {
            let cfg = RunConfig::load(&config)?;
            let out = commands::train(&cfg, seed)?;
            println!("trained {} iterations, final loss {:.6}", out.iterations, out.final_loss);
        }
        Command::Restore {
            ckpt,
            input,
            output,
            ensemble,
        } => {
            commands::restore_file(&ckpt, &input, &output, ensemble)?;
            println!("wrote {}", output.display());
        }
        Command::Eval {
            ckpt,
            config,
            input,
            output,
            seed,
            ensemble,
        } => {
            let cfg = RunConfig::load(&config)?;
            let opts = EvalOptions {
                seed,
                ensemble,
                input,
                output,
            };
            let report = commands::eval(&ckpt, &cfg, &opts)?;
            println!("level,psnr_db,ssim,input_psnr_db,images");
            for s in report.summaries() {
                println!(
                    "{},{:.4},{:.6},{:.4},{}",
                    s.level, s.psnr_db, s.ssim, s.input_psnr_db, s.images
                );
            }
        }
        Command::Ablate { variant, config, seed } => {
            let cfg = RunConfig::load(&config)?;
            for r in commands::ablate(&variant, &cfg, seed)? {
                println!(
                    "{}: final loss {:.6} ({})",
                    r.name,
                    r.trace.rows.last().map_or(f64::NAN, |x| x.1),
                    r.csv.display()
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = init_threads(std::env::var("REDNET_THREADS").ok().as_deref()).and_then(|()| run(cli));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
