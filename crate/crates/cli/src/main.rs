//! `cookstate`: dataset manifests, splits, parameter accounting, training,
//! the experiment grid, evaluation and augmentation previews.

mod data_cmds;
mod model_cmds;
mod run_cmds;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use cookstate::train::ExperimentConfig;
use cookstate::{Error, Result};

#[derive(Parser)]
#[command(name = "cookstate", version, about = "Cooking-state classifier toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Debug)]
pub struct Global {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Run models in f64 instead of f32.
    #[arg(long, global = true)]
    float64: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Scan `<root>/<class>/*.ppm` into a manifest.
    Manifest { root: PathBuf },
    /// Partition a manifest into train/val/test.
    Split(data_cmds::SplitArgs),
    /// Parameter counts per freeze boundary.
    CountParams,
    /// Mixed-block indices and the freeze boundaries they define.
    FreezeMap,
    /// Search head layouts against the published parameter counts.
    Reconcile {
        /// Candidates to list.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Train one experiment.
    Train,
    /// Run the optimizer × batch size × freeze grid.
    Grid(run_cmds::GridArgs),
    /// Evaluate a checkpoint on a split.
    Eval(run_cmds::EvalArgs),
    /// Emit CSV and SVG curves from a training log.
    Curves { log: PathBuf },
    /// Write augmented copies of an image.
    AugmentPreview(data_cmds::PreviewArgs),
}

/// Reads `--config` (or the defaults) and applies `--seed`.
pub fn load_config(g: &Global) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_json(&read_text(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `text` to `--out` when given, else prints it.
pub fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => write_text(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Dimension(_) | Error::Domain(_) | Error::Json(_) => 2,
        Error::Data(_) | Error::Import(_) => 3,
        Error::Numeric(_) => 4,
        Error::Io { .. } => 5,
    }
}

fn run(cli: Cli) -> Result<()> {
    let g = &cli.global;
    match cli.command {
        Command::Manifest { root } => data_cmds::manifest(g, &root),
        Command::Split(a) => data_cmds::split(g, &a),
        Command::CountParams => model_cmds::count_params(g),
        Command::FreezeMap => model_cmds::freeze_map(g),
        Command::Reconcile { top } => model_cmds::reconcile(top),
        Command::Train => run_cmds::train(g),
        Command::Grid(a) => run_cmds::grid(g, &a),
        Command::Eval(a) => run_cmds::eval(g, &a),
        Command::Curves { log } => run_cmds::curves(g, &log),
        Command::AugmentPreview(a) => data_cmds::augment_preview(g, &a),
    }
}

/// Exits quietly when stdout is closed early (`cookstate eval ... | head`).
fn quiet_broken_pipe() {
    let default = std::panic::take_hook();
    std::panic::set_hook(Box::new(move |info| {
        let msg = info
            .payload()
            .downcast_ref::<String>()
            .map(String::as_str)
            .or_else(|| info.payload().downcast_ref::<&str>().copied())
            .unwrap_or("");
        if msg.starts_with("failed printing to stdout") && msg.contains("Broken pipe") {
            std::process::exit(0);
        }
        default(info);
    }));
}

fn main() -> ExitCode {
    quiet_broken_pipe();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
