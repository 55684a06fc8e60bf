use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{AugmentConfig, Pipeline, SplitSpec};
use crate::error::{bail, Result};
use crate::graph::{build_inception_v3, build_mini_inception, FreezeSpec, HeadConfig, MiniConfig, Topology};
use crate::optim::OptimizerConfig;

/// Quantity watched for early stopping and best-weight selection.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Monitor {
    #[default]
    ValLoss,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: OptimizerConfig,
    pub patience: usize,
    /// An epoch improves only when `val_loss < best - min_delta`.
    pub min_delta: f64,
    pub monitor: Monitor,
    pub seed: u64,
    pub freeze: FreezeSpec,
    /// Where `best/` and `latest/` checkpoints go; none keeps them in memory.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            optimizer: OptimizerConfig::default(),
            patience: 5,
            min_delta: 0.0,
            monitor: Monitor::ValLoss,
            seed: 0,
            freeze: FreezeSpec::default(),
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            bail!(Config, "epochs must be at least 1");
        }
        if self.batch_size == 0 {
            bail!(Config, "batch_size must be at least 1");
        }
        if !(self.min_delta >= 0.0 && self.min_delta.is_finite()) {
            bail!(
                Config,
                "min_delta must be a finite non-negative number, got {}",
                self.min_delta
            );
        }
        self.optimizer.validate()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelSpec {
    Inception { input_shape: [usize; 3], head: HeadConfig },
    Mini(MiniConfig),
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec::Inception {
            input_shape: [3, 299, 299],
            head: HeadConfig::reconciled(),
        }
    }
}

impl ModelSpec {
    pub fn build(&self) -> Result<Topology> {
        match self {
            ModelSpec::Inception { input_shape, head } => build_inception_v3(*input_shape, head),
            ModelSpec::Mini(cfg) => build_mini_inception(cfg),
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        match self {
            ModelSpec::Inception { input_shape, .. } => *input_shape,
            ModelSpec::Mini(cfg) => cfg.input_shape,
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            ModelSpec::Inception { head, .. } => head.num_classes,
            ModelSpec::Mini(cfg) => cfg.head.num_classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    /// A manifest written by the `manifest` command.
    Manifest { path: PathBuf },
    /// Procedural textures, `per_class` images of `size`×`size`.
    Synthetic { per_class: usize, size: usize, seed: u64 },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Manifest {
            path: PathBuf::from("manifest.json"),
        }
    }
}

/// One experiment as a single JSON document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub name: String,
    pub data: DataSource,
    pub split: SplitSpec,
    pub stratified: bool,
    pub model: ModelSpec,
    pub pipeline: Pipeline,
    pub train: TrainConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            name: "experiment".into(),
            data: DataSource::default(),
            split: SplitSpec::Nested { test: 0.15, val: 0.2 },
            stratified: false,
            model: ModelSpec::default(),
            pipeline: Pipeline::default(),
            train: TrainConfig::default(),
        }
    }
}

impl ExperimentConfig {
    /// The small synthetic setup: seven texture classes at 32×32 and the
    /// scaled-down Inception.
    pub fn synthetic(per_class: usize, seed: u64) -> Self {
        let mini = MiniConfig::default();
        let [_, h, w] = mini.input_shape;
        ExperimentConfig {
            name: "synthetic".into(),
            data: DataSource::Synthetic {
                per_class,
                size: h,
                seed,
            },
            model: ModelSpec::Mini(mini),
            pipeline: Pipeline {
                target: (h, w),
                per_channel: false,
                augment: Some(AugmentConfig::default()),
            },
            train: TrainConfig {
                seed,
                ..TrainConfig::default()
            },
            ..ExperimentConfig::default()
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            serde_json::from_str(text).map_err(|e| crate::Error::Config(format!("experiment config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        if let Some(a) = &self.pipeline.augment {
            a.validate()?;
        }
        let [c, h, w] = self.model.input_shape();
        if c != 3 || (h, w) != self.pipeline.target {
            bail!(
                Config,
                "pipeline target {:?} does not match model input {:?}",
                self.pipeline.target,
                [c, h, w]
            );
        }
        if let DataSource::Synthetic { per_class, size, .. } = self.data {
            if per_class == 0 || size < 4 {
                bail!(Config, "synthetic data needs per_class ≥ 1 and size ≥ 4");
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, ignoring the checkpoint location.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.checkpoint_dir = None;
        let bytes = serde_json::to_vec(&c).expect("config serializes");
        Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
    }
}
