use serde::{Deserialize, Serialize};

use super::image::{read_ppm, ImageSample};
use super::manifest::DatasetManifest;
use super::transform::{augment, preprocess, AugmentConfig};
use crate::error::{bail, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Images held in memory with their labels.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub images: Vec<ImageSample>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn load(manifest: &DatasetManifest) -> Result<Self> {
        manifest.validate()?;
        let images = manifest
            .samples
            .iter()
            .map(|s| read_ppm(&s.path))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset {
            classes: manifest.classes.clone(),
            images,
            labels: manifest.labels(),
        })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.len()) {
            bail!(Data, "index {} outside dataset of {}", bad, self.len());
        }
        Ok(Dataset {
            classes: self.classes.clone(),
            images: indices.iter().map(|&i| self.images[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
        })
    }
}

/// Per-sample preparation shared by every stream.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Pipeline {
    pub target: (usize, usize),
    pub per_channel: bool,
    /// Applied to training streams only.
    pub augment: Option<AugmentConfig>,
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            target: (299, 299),
            per_channel: false,
            augment: Some(AugmentConfig::default()),
        }
    }
}

/// Sample order for one epoch: a fresh permutation per epoch derived from
/// `seed`, or the given order when `seed` is `None`.
pub fn epoch_order(indices: &[usize], seed: Option<u64>, epoch: usize) -> Vec<usize> {
    let mut order = indices.to_vec();
    if let Some(s) = seed {
        Rng::new(derive_seed(s, &[epoch as u64]), 0).shuffle(&mut order);
    }
    order
}

/// One epoch of `(N×3×H×W, labels)` batches; the last may be short.
pub struct Batches<'a> {
    data: &'a Dataset,
    pipeline: &'a Pipeline,
    cache: Option<&'a [Tensor<f32>]>,
    order: Vec<usize>,
    batch_size: usize,
    pos: usize,
    augment_seed: Option<(u64, usize)>,
}

impl<'a> Batches<'a> {
    /// `split` indexes into `data`. When `train` is set and the pipeline has
    /// an augmentation config, each sample is augmented with a generator
    /// derived from `(seed, epoch, position)`.
    pub fn new(
        data: &'a Dataset,
        split: &[usize],
        batch_size: usize,
        shuffle_seed: Option<u64>,
        epoch: usize,
        pipeline: &'a Pipeline,
        train: bool,
    ) -> Result<Self> {
        if batch_size == 0 {
            bail!(Config, "batch size must be at least 1");
        }
        if split.is_empty() {
            bail!(Config, "cannot iterate over an empty split");
        }
        if let Some(&bad) = split.iter().find(|&&i| i >= data.len()) {
            bail!(Data, "split index {} outside dataset of {}", bad, data.len());
        }
        let augment_seed = match (train, pipeline.augment, shuffle_seed) {
            (true, Some(a), s) => {
                a.validate()?;
                Some((s.unwrap_or(0), epoch))
            }
            _ => None,
        };
        Ok(Batches {
            data,
            pipeline,
            cache: None,
            order: epoch_order(split, shuffle_seed, epoch),
            batch_size,
            pos: 0,
            augment_seed,
        })
    }

    /// Serves preprocessed tensors from `cache` (indexed like the dataset)
    /// instead of recomputing them. Only valid without augmentation.
    pub fn with_cache(mut self, cache: &'a [Tensor<f32>]) -> Result<Self> {
        if self.augment_seed.is_some() || cache.len() != self.data.len() {
            bail!(
                Config,
                "a preprocessing cache needs an unaugmented stream over the whole dataset"
            );
        }
        self.cache = Some(cache);
        Ok(self)
    }

    pub fn num_batches(&self) -> usize {
        self.order.len().div_ceil(self.batch_size)
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    fn prepare(&self, position: usize, i: usize) -> Result<Tensor<f32>> {
        if let Some(c) = self.cache {
            return Ok(c[i].clone());
        }
        let img = &self.data.images[i];
        let p = self.pipeline;
        match (self.augment_seed, &p.augment) {
            (Some((seed, epoch)), Some(cfg)) => {
                let mut rng = Rng::new(derive_seed(seed, &[epoch as u64, position as u64]), 1);
                let (aug, _) = augment(img, cfg, &mut rng)?;
                preprocess(&aug, p.target, p.per_channel)
            }
            _ => preprocess(img, p.target, p.per_channel),
        }
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<(Tensor<f32>, Vec<usize>)>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pos >= self.order.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(self.order.len());
        let range = self.pos..end;
        self.pos = end;
        let out = range
            .map(|k| self.prepare(k, self.order[k]))
            .collect::<Result<Vec<_>>>()
            .and_then(|xs| Tensor::stack(&xs))
            .map(|x| {
                let labels = self.order[self.pos - x.dim(0)..self.pos]
                    .iter()
                    .map(|&i| self.data.labels[i])
                    .collect();
                (x, labels)
            });
        Some(out)
    }
}

/// Preprocesses every image once, without augmentation.
pub fn preprocess_all(data: &Dataset, pipeline: &Pipeline) -> Result<Vec<Tensor<f32>>> {
    data.images
        .iter()
        .map(|img| preprocess(img, pipeline.target, pipeline.per_channel))
        .collect()
}
