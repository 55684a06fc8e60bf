//! Procedural stand-in for the cooking-state images: one texture family per
//! class, each drawn at a random orientation, phase, position and palette so
//! that neither color nor orientation identifies the class.

use std::f64::consts::PI;
use std::path::Path;

use super::batch::Dataset;
use super::image::{write_ppm, ImageSample};
use super::manifest::CLASSES;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, Rng};
use crate::tensor::Tensor;

/// Intensity field in [0, 1] for class `label` at pixel `(x, y)`.
fn texture(label: usize, rng: &mut Rng, size: usize) -> Vec<f64> {
    let s = size as f64;
    let theta = rng.uniform_range(0.0, PI);
    let (st, ct) = theta.sin_cos();
    let phase = rng.uniform_range(0.0, 2.0 * PI);
    let jitter = rng.uniform_range(0.9, 1.1);
    let cx = rng.uniform_range(0.35, 0.65) * s;
    let cy = rng.uniform_range(0.35, 0.65) * s;
    let blobs: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| {
            (
                rng.uniform_range(0.0, s),
                rng.uniform_range(0.0, s),
                rng.uniform_range(0.15, 0.3) * s,
            )
        })
        .collect();
    let noise: Vec<f64> = (0..size * size).map(|_| rng.uniform()).collect();
    let radius = rng.uniform_range(0.22, 0.32) * s;
    let mut out = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64, y as f64);
            let along = fx * ct + fy * st;
            let across = -fx * st + fy * ct;
            let wave = |period: f64, t: f64| 0.5 + 0.5 * (2.0 * PI * t / (period * jitter) + phase).sin();
            let v = match label {
                // creamy: smooth, low-contrast swirls
                0 => {
                    let b: f64 = blobs
                        .iter()
                        .map(|&(bx, by, r)| (-((fx - bx).powi(2) + (fy - by).powi(2)) / (2.0 * r * r)).exp())
                        .sum();
                    0.3 + 0.4 * (b / 2.0).min(1.0)
                }
                // diced: checkerboard of small cubes
                1 => {
                    let a = wave(8.0, along) > 0.5;
                    let b = wave(8.0, across) > 0.5;
                    if a ^ b {
                        0.9
                    } else {
                        0.1
                    }
                }
                // grated: fine speckle
                2 => 0.2 + 0.6 * noise[y * size + x],
                // juiced: concentric ripples
                3 => wave(5.0, ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt()),
                // julienne: thin dense strips
                4 => {
                    if wave(4.0, along) > 0.5 {
                        0.85
                    } else {
                        0.15
                    }
                }
                // sliced: broad bands
                5 => {
                    if wave(12.0, along) > 0.5 {
                        0.85
                    } else {
                        0.15
                    }
                }
                // whole: a single round object
                _ => {
                    let d = ((fx - cx).powi(2) + (fy - cy).powi(2)).sqrt();
                    if d < radius {
                        0.85
                    } else {
                        0.15
                    }
                }
            };
            out.push(v);
        }
    }
    out
}

/// One `3×size×size` raw image of class `label`.
pub fn synthetic_image(label: usize, size: usize, rng: &mut Rng) -> Result<ImageSample> {
    let field = texture(label, rng, size);
    let dark: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(0.0, 100.0));
    let light: [f64; 3] = std::array::from_fn(|_| rng.uniform_range(155.0, 255.0));
    let (lo, hi) = if rng.bernoulli(0.5) {
        (dark, light)
    } else {
        (light, dark)
    };
    let noise = rng.uniform_range(0.0, 12.0);
    let hw = size * size;
    let mut px = vec![0f32; 3 * hw];
    for c in 0..3 {
        for i in 0..hw {
            let v = lo[c] + (hi[c] - lo[c]) * field[i] + noise * rng.normal();
            px[c * hw + i] = v.clamp(0.0, 255.0).round() as f32;
        }
    }
    ImageSample::raw(Tensor::new([3, size, size], px)?)
}

/// `per_class` images of each of the seven classes, class-major order.
pub fn synthetic_dataset(per_class: usize, size: usize, seed: u64) -> Result<Dataset> {
    let mut images = Vec::with_capacity(per_class * CLASSES.len());
    let mut labels = Vec::with_capacity(images.capacity());
    for label in 0..CLASSES.len() {
        for k in 0..per_class {
            let mut rng = Rng::new(derive_seed(seed, &[label as u64, k as u64]), 0);
            images.push(synthetic_image(label, size, &mut rng)?);
            labels.push(label);
        }
    }
    Ok(Dataset {
        classes: CLASSES.iter().map(|s| s.to_string()).collect(),
        images,
        labels,
    })
}

/// Writes the dataset as `root/<class>/<class>_<k>.ppm`.
pub fn write_dataset_tree(data: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let mut counters = vec![0usize; data.classes.len()];
    for class in &data.classes {
        let d = root.join(class);
        std::fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    for (img, &label) in data.images.iter().zip(&data.labels) {
        let name = &data.classes[label];
        let path = root.join(name).join(format!("{}_{:04}.ppm", name, counters[label]));
        counters[label] += 1;
        write_ppm(path, img)?;
    }
    Ok(())
}
