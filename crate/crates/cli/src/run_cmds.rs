use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use clap::{Args, ValueEnum};
use cookstate::data::{split_dataset, Batches, SplitPlan};
use cookstate::error::Result;
use cookstate::graph::FreezeSpec;
use cookstate::metrics::{accuracy, classification_report, confusion_matrix, confusion_svg, render_normalized};
use cookstate::optim::OptimizerConfig;
use cookstate::train::{
    emit_curves, load_data, predict_labels, records_from_csv, run_experiment, Checkpoint, ExperimentConfig, StopReason,
    TrainingLog,
};
use cookstate::{Error, Scalar};

use crate::{load_config, read_text, write_text, Global};

fn out_dir(g: &Global, cfg: &ExperimentConfig) -> PathBuf {
    g.out.clone().unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name))
}

fn summarize(log: &TrainingLog) -> String {
    let best = log.best().expect("non-empty log");
    let stop = match log.stop_reason {
        StopReason::Completed => "completed",
        StopReason::EarlyStopped => "early stop",
    };
    format!(
        "{} epochs ({stop}); best epoch {}: val_loss {:.4} val_acc {:.4}",
        log.records.len(),
        log.best_epoch,
        best.val_loss,
        best.val_acc
    )
}

fn train_as<T: Scalar>(cfg: &ExperimentConfig, out: &Path) -> Result<TrainingLog> {
    Ok(run_experiment::<T>(cfg, Some(out))?.log)
}

pub fn train(g: &Global) -> Result<()> {
    let cfg = load_config(g)?;
    let out = out_dir(g, &cfg);
    let log = if g.float64 {
        train_as::<f64>(&cfg, &out)?
    } else {
        train_as::<f32>(&cfg, &out)?
    };
    if let Some(c) = &log.initial_loss {
        let verdict = if c.passed { "ok" } else { "FAILED" };
        println!("initial loss {:.4} (bound {:.4}) {verdict}", c.value, c.bound);
    }
    println!("{}", summarize(&log));
    println!("outputs in {}", out.display());
    Ok(())
}

#[derive(Args, Debug)]
pub struct GridArgs {
    #[arg(long, value_delimiter = ',', default_values_t = ["sgd".to_string(), "rmsprop".into(), "adam".into()])]
    optimizers: Vec<String>,
    #[arg(long, value_delimiter = ',', default_values_t = [16usize, 32, 64])]
    batch_sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["none".to_string(), "0-100".into(), "0-132".into(), "0-164".into()])]
    freezes: Vec<String>,
    /// Skip cells whose log already exists for the same config.
    #[arg(long)]
    resume: bool,
    /// Cells to run concurrently.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

struct Cell {
    id: String,
    cfg: ExperimentConfig,
}

fn grid_cells(base: &ExperimentConfig, a: &GridArgs) -> Result<Vec<Cell>> {
    let mut cells = Vec::new();
    for opt in &a.optimizers {
        let optimizer = OptimizerConfig::by_name(opt)?;
        for &bs in &a.batch_sizes {
            for fz in &a.freezes {
                let id = format!("{}-b{bs}-f{fz}", optimizer.name());
                let mut cfg = base.clone();
                cfg.name = id.clone();
                cfg.train.optimizer = optimizer;
                cfg.train.batch_size = bs;
                cfg.train.freeze = fz.parse::<FreezeSpec>().expect("infallible");
                cfg.train.checkpoint_dir = None;
                cfg.validate()?;
                cells.push(Cell { id, cfg });
            }
        }
    }
    if cells.is_empty() {
        return Err(Error::Config("the grid has no cells".into()));
    }
    Ok(cells)
}

fn finished(dir: &Path, cfg: &ExperimentConfig) -> Option<TrainingLog> {
    TrainingLog::read_json(dir.join("log.json"))
        .ok()
        .filter(|l| l.config_hash == cfg.hash())
}

pub fn grid(g: &Global, a: &GridArgs) -> Result<()> {
    let base = load_config(g)?;
    let out = out_dir(g, &base);
    let cells = grid_cells(&base, a)?;
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let results: Vec<Mutex<Option<Result<TrainingLog>>>> = cells.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let worker = || loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        let Some(cell) = cells.get(i) else { break };
        let dir = out.join(&cell.id);
        let r = match finished(&dir, &cell.cfg).filter(|_| a.resume) {
            Some(log) => {
                eprintln!("[{}] already complete, skipping", cell.id);
                Ok(log)
            }
            None => {
                eprintln!("[{}] training", cell.id);
                let r = if g.float64 {
                    train_as::<f64>(&cell.cfg, &dir)
                } else {
                    train_as::<f32>(&cell.cfg, &dir)
                };
                match &r {
                    Ok(log) => eprintln!("[{}] {}", cell.id, summarize(log)),
                    Err(e) => eprintln!("[{}] failed: {e}", cell.id),
                }
                r
            }
        };
        *results[i].lock().expect("poisoned") = Some(r);
    };
    std::thread::scope(|s| {
        for _ in 0..a.jobs.clamp(1, cells.len()) {
            s.spawn(worker);
        }
    });

    let mut csv = String::from("run_id,optimizer,batch_size,freeze,epochs,best_epoch,val_loss,val_acc\n");
    let mut first_err = None;
    for (cell, slot) in cells.iter().zip(results) {
        match slot.into_inner().expect("poisoned").expect("every cell ran") {
            Ok(log) => {
                let b = log.best().expect("non-empty log");
                csv += &format!(
                    "{},{},{},{},{},{},{},{}\n",
                    cell.id,
                    cell.cfg.train.optimizer.name(),
                    cell.cfg.train.batch_size,
                    cell.cfg.train.freeze,
                    log.records.len(),
                    log.best_epoch,
                    b.val_loss,
                    b.val_acc
                );
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    let summary = out.join("summary.csv");
    write_text(&summary, &csv)?;
    print!("{csv}");
    match first_err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Subset {
    Train,
    Val,
    Test,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Checkpoint directory (e.g. `<run>/checkpoints/best`).
    #[arg(long)]
    checkpoint: PathBuf,
    /// Split plan JSON; recomputed from the config seed when absent.
    #[arg(long)]
    split: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Subset::Val)]
    subset: Subset,
}

fn eval_as<T: Scalar>(g: &Global, a: &EvalArgs) -> Result<()> {
    let cfg = load_config(g)?;
    let ck = Checkpoint::read(&a.checkpoint)?;
    if ck.meta.config_hash != cfg.hash() {
        eprintln!(
            "warning: checkpoint was trained under config hash {} but the given config hashes to {}",
            ck.meta.config_hash,
            cfg.hash()
        );
    }
    let data = load_data(&cfg)?;
    let plan: SplitPlan = match &a.split {
        Some(p) => serde_json::from_str(&read_text(p)?).map_err(|e| Error::Data(format!("{}: {e}", p.display())))?,
        None => split_dataset(&data.labels, cfg.train.seed, &cfg.split, cfg.stratified)?,
    };
    let idx = match a.subset {
        Subset::Train => &plan.train,
        Subset::Val => &plan.val,
        Subset::Test => &plan.test,
    };
    let graph = ck.restore::<T>()?;
    let batches = Batches::new(&data, idx, cfg.train.batch_size, None, 0, &cfg.pipeline, false)?;
    let (truth, pred) = predict_labels(&graph, batches)?;
    let cm = confusion_matrix(&truth, &pred, data.classes.len())?.with_classes(&data.classes)?;
    let report = classification_report(&cm);
    println!(
        "accuracy {:.4} on {} samples ({:?})",
        accuracy(&cm)?,
        truth.len(),
        a.subset
    );
    println!("\nconfusion matrix (rows true, columns predicted)\n{}", cm.render());
    println!("normalized (%)\n{}", render_normalized(&cm));
    print!("{}", report.render());
    if let Some(out) = &g.out {
        write_text(&out.join("confusion.csv"), &cm.to_csv())?;
        write_text(
            &out.join("confusion.svg"),
            &confusion_svg(&cm, "Normalized confusion matrix"),
        )?;
        write_text(&out.join("report.csv"), &report.to_csv())?;
        write_text(&out.join("report.txt"), &report.render())?;
    }
    Ok(())
}

pub fn eval(g: &Global, a: &EvalArgs) -> Result<()> {
    if g.float64 {
        eval_as::<f64>(g, a)
    } else {
        eval_as::<f32>(g, a)
    }
}

pub fn curves(g: &Global, log: &Path) -> Result<()> {
    let records = if log.extension().is_some_and(|e| e == "csv") {
        records_from_csv(&read_text(log)?)?
    } else {
        TrainingLog::read_json(log)?.records
    };
    let out = g
        .out
        .clone()
        .unwrap_or_else(|| log.parent().map(Path::to_path_buf).unwrap_or_default().join("curves"));
    for p in emit_curves(&records, &out)? {
        println!("{}", p.display());
    }
    Ok(())
}
