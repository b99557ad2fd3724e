use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use orbit_splat::pipeline::{self, PipelineConfig, ViewSpec};
use orbit_splat::Result;

/// Fit an animatable Gaussian human to an orbital image sequence.
///
/// Exit codes: 0 success, 2 invalid input, 3 numerical failure, 4 I/O error.
/// ORBIT_SPLAT_THREADS sets the worker count; ORBIT_SPLAT_DETERMINISTIC=1
/// forces a single thread.
#[derive(Parser, Debug)]
#[command(name = "orbit-splat", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Common {
    /// Pipeline config file (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config value, e.g. `--set train.epochs=10`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Super-resolve and interpolate the source frames.
    Augment {
        #[command(flatten)]
        common: Common,
    },
    /// Fit the model to the augmented frames.
    Fit {
        #[command(flatten)]
        common: Common,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Render views of a fitted model to PNG.
    Render {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Turntable of N evenly spaced views.
        #[arg(long, conflicts_with_all = ["azimuth", "frame"])]
        orbit: Option<usize>,
        /// Comma-separated azimuths in degrees.
        #[arg(long, value_delimiter = ',', conflicts_with = "frame")]
        azimuth: Vec<f64>,
        /// Comma-separated training frames (1-based), with learned motion.
        #[arg(long, value_delimiter = ',')]
        frame: Vec<usize>,
        /// Output directory (default: <output>/renders).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score the evaluation views against ground-truth images.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Directory with <view>.png (default: eval.ground_truth).
        #[arg(long)]
        ground_truth: Option<PathBuf>,
    },
    /// Write the Gaussians as a PLY point cloud.
    Export {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Pose as this training frame (1-based) instead of canonical.
        #[arg(long)]
        frame: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(common: &Common) -> Result<PipelineConfig> {
    PipelineConfig::load(&common.config, &common.overrides)
}

fn run(cli: Cli) -> Result<()> {
    let threads = pipeline::configure_threads()?;
    log::debug!("{threads} worker thread(s)");
    match cli.command {
        Command::Augment { common } => {
            let s = pipeline::cmd_augment(&load(&common)?)?;
            println!("{} source frames -> {} frames ({} interpolated) at {}x{}", s.sources, s.frames, s.interpolated, s.resolution.0, s.resolution.1);
        }
        Command::Fit { common, resume } => {
            let s = pipeline::cmd_fit(&load(&common)?, resume.as_deref())?;
            match s.final_loss {
                Some(l) => println!("{} steps, final loss {:.6}, checkpoint {}", s.steps, l.total, s.checkpoint.display()),
                None => println!("nothing to do; checkpoint {}", s.checkpoint.display()),
            }
        }
        Command::Render { common, checkpoint, orbit, azimuth, frame, out } => {
            let spec = match (orbit, azimuth.is_empty(), frame.is_empty()) {
                (Some(n), _, _) => ViewSpec::Orbit(n),
                (None, false, _) => ViewSpec::Azimuths(azimuth),
                (None, true, false) => ViewSpec::TrainingFrames(frame),
                (None, true, true) => ViewSpec::Orbit(21),
            };
            let written = pipeline::cmd_render(&load(&common)?, checkpoint.as_deref(), &spec, out.as_deref())?;
            for p in written {
                println!("{}", p.display());
            }
        }
        Command::Eval { common, checkpoint, ground_truth } => {
            let (rows, path) = pipeline::cmd_eval(&load(&common)?, checkpoint.as_deref(), ground_truth.as_deref())?;
            print!("{}", orbit_splat::loss::format_metric_report(&rows));
            println!("report written to {}", path.display());
        }
        Command::Export { common, checkpoint, frame, out } => {
            let path = pipeline::cmd_export(&load(&common)?, checkpoint.as_deref(), frame, out.as_deref())?;
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::from(pipeline::EXIT_OK as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(pipeline::exit_code(&e) as u8)
        }
    }
}
