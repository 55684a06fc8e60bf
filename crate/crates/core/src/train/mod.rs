//! The epoch loop: early stopping, best-weight checkpoints, curves.

mod checkpoint;
mod config;
mod log;
mod stopping;

use std::path::{Path, PathBuf};
use std::time::Instant;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use config::{DataSource, ExperimentConfig, ModelSpec, Monitor, TrainConfig};
pub use log::{
    emit_curves, line_chart, records_from_csv, records_to_csv, EpochRecord, InitialLossCheck, StopReason, TrainingLog,
};
pub use stopping::{stop_epoch, Decision, EarlyStopping};

use crate::data::{preprocess_all, split_dataset, synthetic, Batches, Dataset, DatasetManifest, Pipeline, SplitPlan};
use crate::error::{bail, Error, Result};
use crate::graph::LayerGraph;
use crate::layers::{per_sample_cross_entropy, softmax_cross_entropy, Mode, Targets};
use crate::optim::{self, OptimizerState};
use crate::rng::derive_seed;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const INIT_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const DROPOUT_STREAM: u64 = 3;

/// Preprocessed tensors are cached when they fit in this many elements.
const CACHE_LIMIT: usize = 1 << 28;

/// Initial-loss margin above ln K.
pub const INITIAL_LOSS_MARGIN: f64 = 0.15;

/// Row-wise argmax of an `N×K` score matrix.
pub fn argmax_rows<T: Scalar>(scores: &Tensor<T>) -> Vec<usize> {
    let k = scores.dim(1);
    scores
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = j;
                }
            }
            best
        })
        .collect()
}

/// Sample-weighted mean cross-entropy and accuracy over a stream, with the
/// graph in inference mode.
pub fn evaluate_epoch<T: Scalar>(
    graph: &LayerGraph<T>,
    batches: impl IntoIterator<Item = Result<(Tensor<f32>, Vec<usize>)>>,
) -> Result<(f64, f64)> {
    let (mut loss, mut correct, mut n) = (0.0f64, 0usize, 0usize);
    for b in batches {
        let (x, y) = b?;
        let logits = graph.logits(&x.cast::<T>())?;
        for l in per_sample_cross_entropy(&logits, Targets::Indices(&y))? {
            loss += l.to_f64().unwrap_or(f64::NAN);
        }
        correct += argmax_rows(&logits).iter().zip(&y).filter(|(p, t)| p == t).count();
        n += y.len();
    }
    if n == 0 {
        bail!(Config, "cannot evaluate an empty stream");
    }
    Ok((loss / n as f64, correct as f64 / n as f64))
}

/// True and predicted labels over a stream, in inference mode.
pub fn predict_labels<T: Scalar>(
    graph: &LayerGraph<T>,
    batches: impl IntoIterator<Item = Result<(Tensor<f32>, Vec<usize>)>>,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for b in batches {
        let (x, y) = b?;
        pred.extend(argmax_rows(&graph.logits(&x.cast::<T>())?));
        truth.extend(y);
    }
    Ok((truth, pred))
}

/// Validation loss of a freshly initialized graph against `ln K + margin`.
pub fn initial_loss_check<T: Scalar>(
    graph: &LayerGraph<T>,
    x: &Tensor<T>,
    labels: &[usize],
    num_classes: usize,
) -> Result<InitialLossCheck> {
    let logits = graph.logits(x)?;
    let (loss, _) = softmax_cross_entropy(&logits, Targets::Indices(labels))?;
    let value = loss.to_f64().unwrap_or(f64::NAN);
    let bound = (num_classes as f64).ln() + INITIAL_LOSS_MARGIN;
    Ok(InitialLossCheck {
        value,
        bound,
        passed: value <= bound,
    })
}

/// Training and validation data for one run.
pub struct Splits<'a> {
    pub train: &'a Dataset,
    pub val: &'a Dataset,
    pub pipeline: &'a Pipeline,
}

pub struct TrainOutcome {
    pub log: TrainingLog,
    pub best: Checkpoint,
}

fn cache_fits(d: &Dataset, p: &Pipeline) -> bool {
    d.len() * 3 * p.target.0 * p.target.1 <= CACHE_LIMIT
}

/// Runs up to `cfg.epochs` epochs, checkpointing whenever validation loss
/// improves and stopping early per [`EarlyStopping`]. On return `graph`
/// holds the best weights.
pub fn train<T: Scalar>(
    graph: &mut LayerGraph<T>,
    splits: &Splits<'_>,
    cfg: &TrainConfig,
    config_hash: &str,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if splits.train.is_empty() || splits.val.is_empty() {
        bail!(Config, "training needs non-empty train and validation splits");
    }
    let p = splits.pipeline;
    let train_idx: Vec<usize> = (0..splits.train.len()).collect();
    let val_idx: Vec<usize> = (0..splits.val.len()).collect();
    let val_cache = if cache_fits(splits.val, p) {
        Some(preprocess_all(splits.val, p)?)
    } else {
        None
    };
    let train_cache = if p.augment.is_none() && cache_fits(splits.train, p) {
        Some(preprocess_all(splits.train, p)?)
    } else {
        None
    };
    let shuffle_seed = derive_seed(cfg.seed, &[SHUFFLE_STREAM]);
    let mut opt = OptimizerState::<T>::new();
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut records: Vec<EpochRecord> = Vec::new();
    let mut best: Option<Checkpoint> = None;
    let mut stop_reason = StopReason::Completed;
    let dir = cfg.checkpoint_dir.as_deref();

    for epoch in 0..cfg.epochs {
        let t0 = Instant::now();
        let lr = cfg.optimizer.lr(epoch, opt.step);
        let mut batches = Batches::new(
            splits.train,
            &train_idx,
            cfg.batch_size,
            Some(shuffle_seed),
            epoch,
            p,
            true,
        )?;
        if let Some(c) = &train_cache {
            batches = batches.with_cache(c)?;
        }
        let (mut loss_sum, mut correct, mut n) = (0.0f64, 0usize, 0usize);
        for (b, batch) in batches.enumerate() {
            let (x, y) = batch?;
            let step = (|| {
                let seed = derive_seed(cfg.seed, &[DROPOUT_STREAM, epoch as u64, b as u64]);
                let mut trace = graph.forward(&x.cast::<T>(), Mode::Train, seed)?;
                let (loss, dlogits) = softmax_cross_entropy(&trace.logits, Targets::Indices(&y))?;
                let loss = loss.to_f64().unwrap_or(f64::NAN);
                if !loss.is_finite() {
                    bail!(Numeric, "training loss diverged ({loss}) at epoch {epoch}, batch {b}");
                }
                let hits = argmax_rows(&trace.logits)
                    .iter()
                    .zip(&y)
                    .filter(|(p, t)| p == t)
                    .count();
                let grads = graph.backward(&trace, &dlogits)?;
                let bn = std::mem::take(&mut trace.bn_updates);
                optim::step(&cfg.optimizer, &mut opt, graph, &grads, epoch)?;
                graph.apply_bn_updates(bn)?;
                Ok((loss, hits))
            })();
            let (loss, hits) = match step {
                Ok(v) => v,
                Err(e) => {
                    if let (Error::Numeric(_), Some(d)) = (&e, dir) {
                        let _ = std::fs::create_dir_all(d);
                        let _ = std::fs::write(d.join("log.partial.csv"), records_to_csv(&records)?);
                    }
                    return Err(e);
                }
            };
            loss_sum += loss * y.len() as f64;
            correct += hits;
            n += y.len();
        }

        let mut val = Batches::new(splits.val, &val_idx, cfg.batch_size, None, 0, p, false)?;
        if let Some(c) = &val_cache {
            val = val.with_cache(c)?;
        }
        let (val_loss, val_acc) = evaluate_epoch(graph, val)?;
        if !val_loss.is_finite() {
            bail!(Numeric, "validation loss diverged ({val_loss}) at epoch {epoch}");
        }
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss: loss_sum / n as f64,
            train_acc: correct as f64 / n as f64,
            val_loss,
            val_acc,
            wall_time: t0.elapsed().as_secs_f64(),
        });

        let decision = stopper.update(epoch, val_loss);
        let latest = Checkpoint::capture(graph, &opt, epoch, val_loss, config_hash)?;
        if let Some(d) = dir {
            latest.write(d.join("latest"))?;
            if decision.improved {
                latest.write(d.join("best"))?;
            }
        }
        if decision.improved {
            best = Some(latest);
        }
        if decision.stop {
            stop_reason = StopReason::EarlyStopped;
            break;
        }
    }

    let best = best.expect("first epoch always improves");
    graph.import_weights(&best.weights, true)?;
    Ok(TrainOutcome {
        log: TrainingLog {
            config_hash: config_hash.to_string(),
            initial_loss: None,
            best_epoch: best.meta.epoch,
            records,
            stop_reason,
        },
        best,
    })
}

/// Loads or generates the configured dataset.
pub fn load_data(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.data {
        DataSource::Manifest { path } => Dataset::load(&DatasetManifest::read(path)?),
        DataSource::Synthetic { per_class, size, seed } => synthetic::synthetic_dataset(*per_class, *size, *seed),
    }
}

pub struct RunOutput<T> {
    pub plan: SplitPlan,
    pub log: TrainingLog,
    pub best: Checkpoint,
    /// The graph holding the best weights.
    pub graph: LayerGraph<T>,
}

/// The whole workflow for one experiment: data, split, model, initial-loss
/// check and training. With `out`, writes the config, split plan, log,
/// curves and checkpoints there.
pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<RunOutput<T>> {
    cfg.validate()?;
    let data = load_data(cfg)?;
    let k = cfg.model.num_classes();
    if data.classes.len() != k {
        bail!(
            Config,
            "model predicts {} classes but the data has {}",
            k,
            data.classes.len()
        );
    }
    run_on_data(cfg, &data, out)
}

/// As [`run_experiment`] with the dataset already in memory.
pub fn run_on_data<T: Scalar>(cfg: &ExperimentConfig, data: &Dataset, out: Option<&Path>) -> Result<RunOutput<T>> {
    let seed = cfg.train.seed;
    let plan = split_dataset(&data.labels, seed, &cfg.split, cfg.stratified)?;
    let train_set = data.subset(&plan.train)?;
    let val_set = data.subset(&plan.val)?;

    let mut graph = LayerGraph::<T>::init(cfg.model.build()?, derive_seed(seed, &[INIT_STREAM]))?;
    graph.apply_freeze(&cfg.train.freeze)?;

    let mut tc = cfg.train.clone();
    if let Some(o) = out {
        std::fs::create_dir_all(o).map_err(|e| Error::io(o, e))?;
        write_text(o.join("config.json"), &cfg.to_json())?;
        write_text(o.join("split.json"), &serde_json::to_string_pretty(&plan)?)?;
        if tc.checkpoint_dir.is_none() {
            tc.checkpoint_dir = Some(o.join("checkpoints"));
        }
    }

    let first_val: Vec<usize> = (0..val_set.len().min(cfg.train.batch_size)).collect();
    let initial = match Batches::new(
        &val_set,
        &first_val,
        first_val.len().max(1),
        None,
        0,
        &cfg.pipeline,
        false,
    )?
    .next()
    {
        Some(b) => {
            let (x, y) = b?;
            Some(initial_loss_check(&graph, &x.cast::<T>(), &y, cfg.model.num_classes())?)
        }
        None => None,
    };

    let splits = Splits {
        train: &train_set,
        val: &val_set,
        pipeline: &cfg.pipeline,
    };
    let TrainOutcome { mut log, best } = train(&mut graph, &splits, &tc, &cfg.hash())?;
    log.initial_loss = initial;
    if let Some(o) = out {
        log.write_json(o.join("log.json"))?;
        emit_curves(&log.records, o)?;
    }
    Ok(RunOutput { plan, log, best, graph })
}

fn write_text(path: PathBuf, text: &str) -> Result<()> {
    std::fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{NodeKind, Topology};

    #[test]
    fn uniform_initial_loss_is_ln_k() {
        let mut t = Topology::new("flat", &[3]).unwrap();
        let d = t
            .add(
                "dense",
                NodeKind::Dense {
                    units: 7,
                    use_bias: true,
                },
                &[0],
            )
            .unwrap();
        t.add("softmax", NodeKind::Softmax, &[d]).unwrap();
        let mut g = LayerGraph::<f64>::init(t, 0).unwrap();
        for (_, p) in g.named_params_mut() {
            p.value = Tensor::zeros(p.value.shape().to_vec());
        }
        let x = Tensor::from_fn([4, 3], |i| i as f64);
        let c = initial_loss_check(&g, &x, &[0, 1, 2, 3], 7).unwrap();
        assert!((c.value - 7f64.ln()).abs() < 1e-12);
        assert!(c.passed);
    }
}
