//! Command-line front end: `register`, `simulate` and `evaluate`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use crate::io::{self, ParseError};
use crate::pipeline::{register, PipelineConfig, RegistrationError};
use crate::sim::{campaign, campaign_csv, trial_scene, SimError};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_REGISTRATION: i32 = 3;
pub const EXIT_IO: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "vpreg", version, about = "2D-3D line registration through vanishing directions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the camera pose from image and scene segments.
    Register {
        #[arg(long)]
        lines2d: PathBuf,
        #[arg(long)]
        lines3d: PathBuf,
        #[arg(long)]
        intrinsics: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// key=value overrides for cluster.*, ransac.*, refine.* and seed.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Leave wall-clock timings out of the report.
        #[arg(long)]
        no_timings: bool,
    },
    /// Write a synthetic scene and its ground truth.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a Monte Carlo campaign and write the summary table.
    Evaluate {
        #[arg(long)]
        campaign: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Write the runtime column as zero.
        #[arg(long)]
        no_timings: bool,
    },
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Input { path: PathBuf, source: ParseError },
    #[error("{path}: {source}")]
    Config { path: PathBuf, source: ParseError },
    #[error("invalid simulation settings: {0}")]
    Sim(#[from] SimError),
    #[error("registration failed: {0}")]
    Registration(#[from] RegistrationError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Io { .. } | CliError::Input { .. } => EXIT_IO,
            CliError::Config { .. } | CliError::Sim(_) => EXIT_USAGE,
            CliError::Registration(_) => EXIT_REGISTRATION,
        }
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn input<V>(path: &Path, parse: impl FnOnce(&str) -> Result<V, ParseError>) -> Result<V, CliError> {
    parse(&read(path)?).map_err(|source| CliError::Input { path: path.into(), source })
}

fn config<V>(path: &Path, parse: impl FnOnce(&str) -> Result<V, ParseError>) -> Result<V, CliError> {
    parse(&read(path)?).map_err(|source| CliError::Config { path: path.into(), source })
}

pub fn execute(command: Command) -> Result<(), CliError> {
    match command {
        Command::Register { lines2d, lines3d, intrinsics, out, seed, config: cfg_path, no_timings } => {
            let mut cfg = match &cfg_path {
                Some(p) => config(p, io::parse_pipeline_config::<f64>)?,
                None => PipelineConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let segs2d = input(&lines2d, io::parse_segments_2d::<f64>)?;
            let segs3d = input(&lines3d, io::parse_segments_3d::<f64>)?;
            let k = input(&intrinsics, io::parse_intrinsics::<f64>)?;
            let reg = register(&segs2d, &segs3d, &k, &cfg)?;
            write(&out, &io::write_report(&reg, !no_timings))
        }
        Command::Simulate { config: cfg_path, out_dir } => {
            let cfg = config(&cfg_path, io::parse_sim_config)?;
            cfg.validate()?;
            let scene = trial_scene(&cfg, cfg.rng_seed)?;
            fs::create_dir_all(&out_dir).map_err(|source| CliError::Io { path: out_dir.clone(), source })?;
            write(&out_dir.join("lines2d.csv"), &io::write_segments_2d(&scene.segs2d))?;
            write(&out_dir.join("lines3d.csv"), &io::write_segments_3d(&scene.segs3d))?;
            write(&out_dir.join("intrinsics.txt"), &io::write_intrinsics(&scene.intrinsics))?;
            write(&out_dir.join("ground_truth.txt"), &io::write_ground_truth(&scene.gt, &scene.pairing))
        }
        Command::Evaluate { campaign: cfg_path, out, no_timings } => {
            let cfg = config(&cfg_path, io::parse_campaign_config)?;
            let result = campaign(&cfg)?;
            write(&out, &campaign_csv(&result.rows, !no_timings))
        }
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit code; diagnostics go to standard error.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("vpreg: {e}");
            e.exit_code()
        }
    }
}
