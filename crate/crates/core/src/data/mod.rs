//! Manifests, splits, preprocessing, augmentation and batching.

mod batch;
mod image;
mod manifest;
mod split;
pub mod synthetic;
mod transform;

pub use batch::{epoch_order, preprocess_all, Batches, Dataset, Pipeline};
pub use image::{decode_ppm, encode_ppm, ppm_header, read_ppm, write_ppm, ImageSample, PixelRange};
pub use manifest::{
    build_manifest, CountReport, DatasetManifest, Sample, Skipped, CLASSES, PUBLISHED_COUNTS, PUBLISHED_TOTAL,
};
pub use split::{split_dataset, SplitPlan, SplitSpec};
pub use transform::{
    apply_affine, augment, preprocess, resize_bilinear, AugmentConfig, AugmentParams, FillMode, STD_FLOOR,
};
