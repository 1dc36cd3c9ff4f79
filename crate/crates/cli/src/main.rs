use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dyn4d_cli::{commands, CliError, ExperimentConfig, Invocation, Result};
use dyn4d_core::metrics::DepthAlignment;
use dyn4d_core::pose::MaskMode;

#[derive(Parser)]
#[command(name = "dyn4d", version, about = "Dynamic-scene geometry experiments and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "dyn4d-out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Align {
    Scale,
    #[value(name = "scale_shift")]
    ScaleShift,
    #[value(name = "per_frame")]
    PerFrame,
}

#[derive(Clone, Copy, ValueEnum)]
enum Policy {
    None,
    Hard,
    Soft,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scene and dump it with its correspondences and trajectory.
    Simulate(Common),
    /// Pose error against dynamic ratio, noise and mask policy.
    PoseSweep {
        #[command(flatten)]
        common: Common,
        /// Restrict to one policy.
        #[arg(long, value_enum)]
        policy: Option<Policy>,
    },
    /// ATE and RPE between two trajectory files.
    EvalTraj {
        pred: PathBuf,
        gt: PathBuf,
        #[command(flatten)]
        common: Common,
        /// Evaluate 10 uniformly spaced matched frames.
        #[arg(long)]
        sample10: bool,
        /// Timestamp association tolerance in seconds.
        #[arg(long)]
        tolerance: Option<f64>,
    },
    /// Abs Rel and threshold accuracy between two directories of PFM maps.
    EvalDepth {
        pred_dir: PathBuf,
        gt_dir: PathBuf,
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        align: Option<Align>,
    },
    /// Accuracy, completion and overall error between two PLY clouds.
    EvalPoints {
        pred: PathBuf,
        gt: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every analytic gradient.
    Gradcheck {
        #[command(flatten)]
        common: Common,
        /// Corrupt gradients of groups with this name prefix.
        #[arg(long, hide = true)]
        fault: Option<String>,
    },
    /// Replay a recorded run and compare its outputs byte for byte.
    Rerun {
        manifest: PathBuf,
        /// Replay directory; defaults to `rerun` beside the manifest.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let cfg = match &common.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let seed = common.seed.unwrap_or(cfg.seed);
    Ok(cfg.with_seed(seed))
}

fn input(path: &Path) -> Result<PathBuf> {
    std::fs::canonicalize(path).map_err(CliError::io(path))
}

fn dispatch(cli: Cli) -> Result<String> {
    let (inv, cfg, out) = match cli.command {
        Command::Rerun { manifest, out } => {
            let out = out.unwrap_or_else(|| manifest.parent().unwrap_or(Path::new(".")).join("rerun"));
            let replay = commands::rerun(&manifest, &out)?;
            if !replay.mismatched.is_empty() {
                return Err(CliError::Check(format!("outputs differ: {}", replay.mismatched.join(", "))));
            }
            return Ok(format!("reproduced {} outputs in {}\n", replay.checked, out.display()));
        }
        Command::Simulate(c) => (Invocation::Simulate, load_config(&c)?, c.out),
        Command::PoseSweep { common, policy } => {
            let mut cfg = load_config(&common)?;
            if let Some(p) = policy {
                cfg.sweep.policies = vec![match p {
                    Policy::None => MaskMode::None,
                    Policy::Hard => MaskMode::HardExclude,
                    Policy::Soft => MaskMode::SoftWeight,
                }];
            }
            (Invocation::PoseSweep, cfg, common.out)
        }
        Command::EvalTraj {
            pred,
            gt,
            common,
            sample10,
            tolerance,
        } => {
            let mut cfg = load_config(&common)?;
            cfg.trajectory.sample10 |= sample10;
            if let Some(t) = tolerance {
                cfg.trajectory.tolerance = t;
            }
            let inv = Invocation::EvalTraj {
                pred: input(&pred)?,
                gt: input(&gt)?,
            };
            (inv, cfg, common.out)
        }
        Command::EvalDepth {
            pred_dir,
            gt_dir,
            common,
            align,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(a) = align {
                cfg.depth.alignment = match a {
                    Align::Scale => DepthAlignment::Scale,
                    Align::ScaleShift => DepthAlignment::ScaleShift,
                    Align::PerFrame => DepthAlignment::PerFrame,
                };
            }
            let inv = Invocation::EvalDepth {
                pred_dir: input(&pred_dir)?,
                gt_dir: input(&gt_dir)?,
            };
            (inv, cfg, common.out)
        }
        Command::EvalPoints { pred, gt, common } => {
            let inv = Invocation::EvalPoints {
                pred: input(&pred)?,
                gt: input(&gt)?,
            };
            (inv, load_config(&common)?, common.out)
        }
        Command::Gradcheck { common, fault } => {
            let mut cfg = load_config(&common)?;
            if fault.is_some() {
                cfg.gradcheck.fault = fault;
            }
            (Invocation::Gradcheck, cfg, common.out)
        }
    };
    let (_, result) = commands::run(&inv, &cfg, &out)?;
    print!("{}", result.report);
    match result.failure {
        Some(f) => Err(CliError::Check(f)),
        None => Ok(format!("wrote {} outputs to {}\n", result.outputs.len(), out.display())),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("DYN4D_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(msg) => {
            print!("{msg}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
