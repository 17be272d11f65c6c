//! `dqc`: diffusion-residual image quality control.
//!
//! Subcommands: `synth` (generate the synthetic corpus), `train` (fit a
//! model on clean patches, optionally with an artifact corpus for the
//! enhanced variant), `score` (stitched error heatmap for an image), `qc`
//! (heatmap + binary artifact mask + report), `eval` (metrics against
//! ground truth).
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
//! failure.

mod commands;
mod config;

use clap::{Parser, Subcommand};
use config::RunConfig;
use dqc_core::error::Error;
use dqc_core::model::Mode;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dqc", version, about = "Diffusion-residual image quality control")]
struct Cli {
    /// Run configuration file (TOML). Defaults to $DQC_CONFIG when set.
    #[arg(long, env = "DQC_CONFIG", global = true)]
    config: Option<PathBuf>,

    /// Seed override: synth seed for `synth`, training seed for `train`,
    /// inference seed for `score` / `qc`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for patch scoring; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic train/test corpus with ground-truth masks.
    Synth {
        /// Output directory for the corpus splits.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a directory of clean patches.
    Train {
        /// Directory of clean training patches.
        #[arg(long)]
        clean: PathBuf,
        /// Directory of artifact patches (enhanced mode only).
        #[arg(long)]
        artifact: Option<PathBuf>,
        /// Output model file.
        #[arg(long)]
        out: PathBuf,
        /// Train the enhanced variant (contrastive adaptor).
        #[arg(long)]
        enhanced: bool,
        /// Optimization step count override.
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Score an image into a stitched error heatmap.
    Score {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output heatmap file (DQCH).
        #[arg(long)]
        out: PathBuf,
        /// Scoring timestep override.
        #[arg(long)]
        tstar: Option<usize>,
        /// Noise draws averaged per patch.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Full quality control: heatmap, binary artifact mask, and report.
    Qc {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        image: PathBuf,
        /// Output mask image (8-bit: 0 clean, 255 artifact).
        #[arg(long)]
        out_mask: PathBuf,
        /// Output heatmap file (DQCH).
        #[arg(long)]
        out_heatmap: PathBuf,
        /// Output key/value report.
        #[arg(long)]
        out_report: PathBuf,
        /// Confident lower bound override.
        #[arg(long)]
        vmin: Option<f64>,
        /// Confident upper bound override.
        #[arg(long)]
        vmax: Option<f64>,
        /// Scoring timestep override.
        #[arg(long)]
        tstar: Option<usize>,
        /// Noise draws averaged per patch.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Evaluate predicted masks against a ground-truth corpus split.
    Eval {
        /// Directory of predicted masks (and optional .dqch heatmaps).
        #[arg(long)]
        pred: PathBuf,
        /// Ground-truth split directory (images, masks, manifest).
        #[arg(long)]
        gt: PathBuf,
        /// Output metrics report.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> dqc_core::Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref())?;

    match cli.command {
        Command::Synth { out } => {
            if let Some(seed) = cli.seed {
                cfg.synth.seed = seed;
            }
            commands::cmd_synth(&cfg, &out)
        }
        Command::Train { clean, artifact, out, enhanced, steps } => {
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            if enhanced {
                cfg.train.mode = Mode::Enhanced;
            }
            if let Some(steps) = steps {
                cfg.train.steps = steps;
            }
            commands::cmd_train(&cfg, &clean, artifact.as_deref(), &out)
        }
        Command::Score { model, image, out, tstar, draws } => {
            if let Some(seed) = cli.seed {
                cfg.inference.seed = Some(seed);
            }
            if tstar.is_some() {
                cfg.inference.t_star = tstar;
            }
            if draws.is_some() {
                cfg.inference.draws = draws;
            }
            commands::cmd_score(&cfg, &model, &image, &out, cli.jobs)
        }
        Command::Qc {
            model,
            image,
            out_mask,
            out_heatmap,
            out_report,
            vmin,
            vmax,
            tstar,
            draws,
        } => {
            if let Some(seed) = cli.seed {
                cfg.inference.seed = Some(seed);
            }
            if tstar.is_some() {
                cfg.inference.t_star = tstar;
            }
            if draws.is_some() {
                cfg.inference.draws = draws;
            }
            if let Some(v) = vmin {
                cfg.postprocess.v_min = v;
            }
            if let Some(v) = vmax {
                cfg.postprocess.v_max = v;
            }
            commands::cmd_qc(&cfg, &model, &image, &out_mask, &out_heatmap, &out_report, cli.jobs)
        }
        Command::Eval { pred, gt, out } => commands::cmd_eval(&cfg, &pred, &gt, &out),
    }
}

fn exit_code_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) => ExitCode::from(2),
        Error::Shape(_) | Error::Data(_) | Error::Io { .. } | Error::Image { .. } => {
            ExitCode::from(3)
        }
        Error::Numeric(_) => ExitCode::from(4),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            exit_code_for(&err)
        }
    }
}
