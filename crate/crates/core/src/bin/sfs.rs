use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use sfs::pipeline::{self, SfsConfig};
use sfs::SfsError;

#[derive(Parser)]
#[command(name = "sfs", version, about = "Source-free domain adaptation for synthetic segmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config; unknown keys are rejected
    #[arg(long)]
    config: PathBuf,
    /// Output directory shared by all phases of a run
    #[arg(long)]
    out: PathBuf,
    /// Override the config's master seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the source and target splits into <out>/data
    GenerateData(Common),
    /// Train on the source splits and save the best checkpoint
    TrainSource(Common),
    /// Fit the internal distribution from the source model
    EstimateGmm(Common),
    /// Adapt to the target domain using only the model and mixture
    Adapt(Common),
    /// Score source-only and adapted models on the target test split
    Evaluate(Common),
    /// Run the config's ablation grid
    Ablate(Common),
}

impl Command {
    fn common(&self) -> &Common {
        match self {
            Command::GenerateData(c)
            | Command::TrainSource(c)
            | Command::EstimateGmm(c)
            | Command::Adapt(c)
            | Command::Evaluate(c)
            | Command::Ablate(c) => c,
        }
    }
}

fn run(cli: Cli) -> sfs::Result<()> {
    let common = cli.command.common();
    let mut cfg = SfsConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    let out = common.out.as_path();
    match &cli.command {
        Command::GenerateData(_) => {
            let splits = pipeline::run_generate(&cfg, out)?;
            println!(
                "wrote {} source / {} target images",
                splits.source_train.len() + splits.source_val.len(),
                splits.target_train.len() + splits.target_test.len()
            );
        }
        Command::TrainSource(_) => {
            let t = pipeline::run_train_source(&cfg, out)?;
            println!(
                "best validation macro Dice {:.4} at step {}",
                t.best_val_dice, t.best_step
            );
        }
        Command::EstimateGmm(_) => {
            let (_, counts) = pipeline::run_estimate(&cfg, out)?;
            println!("selected source pixels per class: {counts:?}");
        }
        Command::Adapt(_) => {
            let a = pipeline::run_adapt(&cfg, out)?;
            if let Some(last) = a.log.last() {
                println!("final step {}: ce {:.5} swd {:.5}", last.step, last.ce, last.swd);
            }
        }
        Command::Evaluate(_) => {
            let (pre, post) = pipeline::run_evaluate(&cfg, out)?;
            println!(
                "macro Dice: source-only {:.4}, adapted {:.4}",
                pre.summary.macro_dice.unwrap_or(f64::NAN),
                post.summary.macro_dice.unwrap_or(f64::NAN)
            );
        }
        Command::Ablate(_) => {
            for r in pipeline::run_ablate(&cfg, out)? {
                match (&r.error, r.macro_dice()) {
                    (Some(e), _) => println!("{:?} {}: failed: {e}", r.kind, r.value),
                    (None, d) => println!("{:?} {}: macro Dice {:.4}", r.kind, r.value, d.unwrap_or(f64::NAN)),
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                SfsError::Config(_) => 2,
                ref e if e.is_numerical() => 3,
                _ => 1,
            };
            ExitCode::from(code)
        }
    }
}
