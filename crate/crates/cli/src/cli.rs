use std::path::PathBuf;

use clap::{Parser, Subcommand};

use crate::commands::{self, EvalRequest, ReconstructRequest, TrainOptions, BEST_WEIGHTS};
use crate::config::{parse_acs, RunConfig, CONFIG_FILE};
use crate::error::Result;

/// Unrolled multi-coil MRI reconstruction on synthetic phantoms.
///
/// Configuration is read from `--config` (INI sections model, mask, data,
/// train, run, eval), then from `UMRI_<SECTION>_<KEY>` environment variables,
/// then from `--set section.key=value`. Exit codes: 0 ok, 2 configuration
/// error, 3 runtime error, 4 I/O or file format error.
#[derive(Debug, Parser)]
#[command(name = "umri", version)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,

    /// Override one key, e.g. `--set train.epochs=10`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE", global = true)]
    pub sets: Vec<String>,

    /// Suppress progress output.
    #[arg(long, short, global = true)]
    pub quiet: bool,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate phantoms, k-space volumes and the split manifest into `data.dir`.
    GenData,
    /// Train on the generated dataset, checkpointing into `run.out`.
    Train {
        /// Continue from the checkpoint in `run.out`.
        #[arg(long)]
        resume: bool,
        /// Stop after this many epochs; the run can be resumed later.
        #[arg(long)]
        max_epochs: Option<usize>,
    },
    /// Reconstruct one volume and report SSIM, PSNR and NMSE.
    Reconstruct {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        /// Defaults to `mask.acceleration`.
        #[arg(long)]
        acceleration: Option<usize>,
        /// `lines:<n>` or `fraction:<f>`; defaults to `mask.acs`.
        #[arg(long)]
        acs: Option<String>,
        #[arg(long, default_value = "recon")]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the `[eval]` grid and write `eval.csv`.
    Eval {
        /// Defaults to `best.umriw` in `run.out`.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Defaults to `eval` inside `run.out`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the sampled columns of an equispaced mask and its net acceleration.
    Maskgen {
        #[arg(long)]
        width: usize,
        #[arg(long)]
        acceleration: usize,
        /// `lines:<n>` or `fraction:<f>`.
        #[arg(long)]
        acs: String,
        /// Also write the mask as a text file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration.
    Config,
}

/// Configuration for `reconstruct`: an explicit `--config`, else the
/// `run.cfg` stored next to the checkpoint, else the defaults.
fn checkpoint_config(cli: &Cli, checkpoint: &std::path::Path) -> Result<RunConfig> {
    if cli.config.is_some() {
        return RunConfig::load(cli.config.as_deref(), &cli.sets);
    }
    let stored = checkpoint.parent().map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file());
    RunConfig::load(stored.as_deref(), &cli.sets)
}

pub fn run(cli: Cli) -> Result<()> {
    match &cli.command {
        Command::GenData => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
            let s = commands::gen_data(&cfg)?;
            println!(
                "wrote {} volumes to {} (train {}, val {}, test {})",
                s.train + s.val + s.test,
                cfg.data.dir.display(),
                s.train,
                s.val,
                s.test
            );
        }
        Command::Train { resume, max_epochs } => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
            let opts = TrainOptions {
                resume: *resume,
                max_epochs: *max_epochs,
                quiet: cli.quiet,
            };
            let s = commands::train(&cfg, &opts)?;
            let state = if s.finished { "finished" } else { "paused" };
            match s.best_epoch {
                Some(e) => println!("{state}: best val_ssim {:.6} at epoch {e}", s.best_val_ssim),
                None => println!("{state}: no epochs run"),
            }
        }
        Command::Reconstruct {
            checkpoint,
            volume,
            acceleration,
            acs,
            out,
        } => {
            let cfg = checkpoint_config(&cli, checkpoint)?;
            let req = ReconstructRequest {
                checkpoint: checkpoint.clone(),
                volume: volume.clone(),
                acceleration: acceleration.unwrap_or(cfg.mask.acceleration),
                acs: match acs {
                    Some(s) => parse_acs(s)?,
                    None => cfg.mask.acs,
                },
                out: out.clone(),
            };
            let r = commands::reconstruct(&cfg, &req)?;
            println!("{}", r.metric_line());
        }
        Command::Eval { checkpoint, out } => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
            let req = EvalRequest {
                checkpoint: checkpoint.clone().unwrap_or_else(|| cfg.run.out.join(BEST_WEIGHTS)),
                out: out.clone().unwrap_or_else(|| cfg.run.out.join("eval")),
            };
            let rows = commands::eval(&cfg, &req)?;
            println!(
                "wrote {} rows to {}",
                rows.len(),
                req.out.join(commands::EVAL_FILE).display()
            );
        }
        Command::Maskgen {
            width,
            acceleration,
            acs,
            out,
        } => {
            let mask = commands::maskgen(*width, *acceleration, parse_acs(acs)?, out.as_deref())?;
            print!("{}", commands::maskgen::column_listing(&mask));
        }
        Command::Config => {
            let cfg = RunConfig::load(cli.config.as_deref(), &cli.sets)?;
            print!("{}", cfg.to_ini_string());
        }
    }
    Ok(())
}
