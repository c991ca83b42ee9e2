//! Command-line front end. Exit status: 0 success, 1 usage error,
//! 2 validation or data error, 3 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::config;
use crate::dataset::{RgbImage, FRAMES_DIR};
use crate::error::{Error, Result};
use crate::eval::{evaluate, export_predictions, write_records};
use crate::gendata::{gen_data, Dataset, GenDataConfig};
use crate::synth::{write_synthetic, SynthConfig};
use crate::train::{train, TrainConfig};

/// Seed used when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 0;

pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sfmdepth", version, about = "Depth estimation supervised by sparse SfM reconstructions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// TOML file with configuration keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Override one configuration key; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic scene and write it as a reconstruction directory.
    Synth(Common),
    /// Build sparse depth and mask arrays plus a manifest from a
    /// reconstruction directory.
    GenData(Common),
    /// Train a depth network.
    Train {
        #[command(flatten)]
        common: Common,
        /// Prepare batches on the training thread.
        #[arg(long)]
        serial: bool,
    },
    /// Write depth arrays and colorized images for every frame.
    Predict(Common),
    /// Print and record sparse (and dense, when available) metrics.
    Eval(Common),
    /// Run the finite-difference gradient checks.
    Gradcheck(Common),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictConfig {
    pub checkpoint: PathBuf,
    /// Directory containing `frames/<id>.png`.
    pub input: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    /// Dataset directory or manifest written by `gen-data`.
    pub dataset: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub instances: usize,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            instances: sfmdepth_core::gradcheck::DEFAULT_INSTANCES,
        }
    }
}

fn require_out(c: &Common) -> Result<&Path> {
    c.out
        .as_deref()
        .ok_or_else(|| Error::Config("--out is required for this command".into()))
}

fn load<T: serde::de::DeserializeOwned>(c: &Common) -> Result<T> {
    config::load(c.config.as_deref(), &c.overrides)
}

/// Frames of a directory, ordered by numeric id.
pub fn list_frames(dir: &Path) -> Result<Vec<(u32, RgbImage)>> {
    let frames = dir.join(FRAMES_DIR);
    let mut ids = Vec::new();
    for entry in fs::read_dir(&frames).map_err(|e| Error::io(&frames, e))? {
        let path = entry.map_err(|e| Error::io(&frames, e))?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("png") {
            continue;
        }
        if let Some(id) = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u32>().ok()) {
            ids.push((id, path));
        }
    }
    ids.sort_by_key(|(id, _)| *id);
    ids.into_iter().map(|(id, p)| Ok((id, RgbImage::load(&p)?))).collect()
}

/// Executes a parsed command and returns the process exit status.
pub fn execute(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Synth(c) => {
            let cfg: SynthConfig = load(&c)?;
            let out = require_out(&c)?;
            let recon = write_synthetic(c.seed.unwrap_or(DEFAULT_SEED), &cfg, out)?;
            println!(
                "wrote {} frames and {} points to {}",
                recon.frames.len(),
                recon.points.len(),
                out.display()
            );
        }
        Command::GenData(c) => {
            let cfg: GenDataConfig = load(&c)?;
            let out = require_out(&c)?;
            let m = gen_data(&cfg, out)?;
            println!("wrote {} frames to {} (sigma {})", m.frames.len(), out.display(), m.sigma);
        }
        Command::Train { common, serial } => {
            let mut overrides = common.overrides.clone();
            if let Some(s) = common.seed {
                overrides.push(format!("seed={s}"));
            }
            if serial {
                overrides.push("serial=true".into());
            }
            let cfg: TrainConfig = config::load(common.config.as_deref(), &overrides)?;
            let out = require_out(&common)?;
            let history = train(&cfg, out)?;
            for r in &history {
                let val = r.validation.map(|v| format!(" val {:.6}", v.total)).unwrap_or_default();
                println!(
                    "epoch {:>3}  sfl {:.6}  dcl {:.6}  total {:.6}{val}{}",
                    r.epoch,
                    r.train.sfl,
                    r.train.dcl,
                    r.train.total,
                    if r.best { "  *" } else { "" }
                );
            }
        }
        Command::Predict(c) => {
            let cfg: PredictConfig = load(&c)?;
            let out = require_out(&c)?;
            let ck = Checkpoint::load(&cfg.checkpoint)?;
            let frames = list_frames(&cfg.input)?;
            export_predictions(&ck.net, &frames, out)?;
            println!("wrote {} predictions to {}", frames.len(), out.display());
        }
        Command::Eval(c) => {
            let cfg: EvalConfig = load(&c)?;
            let ck = Checkpoint::load(&cfg.checkpoint)?;
            let data = Dataset::load(&cfg.dataset)?;
            let report = evaluate(&ck.net, &data)?;
            print!("{}", report.table());
            if let Some(out) = &c.out {
                fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
                write_records(&out.join("metrics.jsonl"), &report.records())?;
            }
        }
        Command::Gradcheck(c) => {
            let cfg: GradcheckConfig = load(&c)?;
            let reports = sfmdepth_core::gradcheck::run_suite(c.seed.unwrap_or(DEFAULT_SEED), cfg.instances);
            println!(
                "{:<24} {:>9} {:>9} {:>12} {:>9}",
                "check", "instances", "redrawn", "worst_rel", "result"
            );
            let mut ok = true;
            for r in &reports {
                ok &= r.passed();
                println!(
                    "{:<24} {:>9} {:>9} {:>12.3e} {:>9}",
                    r.name,
                    r.instances,
                    r.rejected,
                    r.worst_error,
                    if r.passed() { "PASS" } else { "FAIL" }
                );
            }
            if !ok {
                return Ok(EXIT_NUMERICAL);
            }
        }
    }
    Ok(0)
}

/// Parses `args` and runs; never panics on bad input.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    match execute(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
