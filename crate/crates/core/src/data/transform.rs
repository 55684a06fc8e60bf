use serde::{Deserialize, Serialize};

use super::image::{ImageSample, PixelRange};
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Floor on the per-sample standard deviation.
pub const STD_FLOOR: f64 = 1e-7;

/// Bilinear resize with half-pixel centers; sample coordinates are clamped
/// to the image, so equal sizes give an exact copy.
pub fn resize_bilinear(x: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    let &[c, h, w] = x.shape() else {
        bail!(Data, "resize expects C×H×W, got {:?}", x.shape());
    };
    if height == 0 || width == 0 {
        bail!(Data, "resize target {}×{} has zero area", height, width);
    }
    if (h, w) == (height, width) {
        return Ok(x.clone());
    }
    let axis = |out: usize, inp: usize| -> Vec<(usize, usize, f32)> {
        let scale = inp as f64 / out as f64;
        (0..out)
            .map(|o| {
                let s = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (inp - 1) as f64);
                let i0 = s.floor() as usize;
                let i1 = (i0 + 1).min(inp - 1);
                (i0, i1, (s - i0 as f64) as f32)
            })
            .collect()
    };
    let (ys, xs) = (axis(height, h), axis(width, w));
    let src = x.data();
    let mut out = Vec::with_capacity(c * height * width);
    for ch in 0..c {
        let p = &src[ch * h * w..(ch + 1) * h * w];
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::new([c, height, width], out)
}

/// Resize, subtract the sample mean, divide by the sample standard
/// deviation (population, floored at `STD_FLOOR`). Statistics cover all
/// channels jointly unless `per_channel` is set. Accumulation is in `f64`.
pub fn preprocess(img: &ImageSample, target: (usize, usize), per_channel: bool) -> Result<Tensor<f32>> {
    if img.range != PixelRange::Raw {
        bail!(Data, "preprocess expects a raw 0–255 image");
    }
    let mut x = resize_bilinear(&img.pixels, target.0, target.1)?;
    let groups = if per_channel { 3 } else { 1 };
    let len = x.len() / groups;
    for g in x.data_mut().chunks_exact_mut(len) {
        let n = g.len() as f64;
        let mean = g.iter().map(|&v| v as f64).sum::<f64>() / n;
        let var = g.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
        let std = var.sqrt().max(STD_FLOOR);
        for v in g.iter_mut() {
            *v = ((*v as f64 - mean) / std) as f32;
        }
    }
    Ok(x)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FillMode {
    /// Replicate the nearest edge pixel.
    Nearest,
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub rotation_max_deg: f64,
    pub width_shift_frac: f64,
    pub height_shift_frac: f64,
    pub horizontal_flip_prob: f64,
    /// Maximum shear angle, radians.
    pub shear_frac: f64,
    pub zoom_frac: f64,
    pub fill_mode: FillMode,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_max_deg: 90.0,
            width_shift_frac: 0.3,
            height_shift_frac: 0.3,
            horizontal_flip_prob: 0.3,
            shear_frac: 0.3,
            zoom_frac: 0.3,
            fill_mode: FillMode::Nearest,
        }
    }
}

impl AugmentConfig {
    /// No transformation at all.
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_max_deg: 0.0,
            width_shift_frac: 0.0,
            height_shift_frac: 0.0,
            horizontal_flip_prob: 0.0,
            shear_frac: 0.0,
            zoom_frac: 0.0,
            fill_mode: FillMode::Nearest,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if !(0.0..=180.0).contains(&self.rotation_max_deg)
            || ![
                self.width_shift_frac,
                self.height_shift_frac,
                self.horizontal_flip_prob,
                self.shear_frac,
                self.zoom_frac,
            ]
            .into_iter()
            .all(unit)
        {
            bail!(Config, "augmentation parameters out of range: {:?}", self);
        }
        Ok(())
    }

    /// Draws one transform. Always consumes the same number of variates.
    pub fn sample(&self, rng: &mut Rng, height: usize, width: usize) -> AugmentParams {
        let r = self.rotation_max_deg;
        let rotation_deg = rng.uniform_range(-r, r);
        let shift_x = rng.uniform_range(-self.width_shift_frac, self.width_shift_frac) * width as f64;
        let shift_y = rng.uniform_range(-self.height_shift_frac, self.height_shift_frac) * height as f64;
        let shear = rng.uniform_range(-self.shear_frac, self.shear_frac);
        let zoom = rng.uniform_range(1.0 - self.zoom_frac, 1.0 + self.zoom_frac);
        let flip = rng.bernoulli(self.horizontal_flip_prob);
        AugmentParams {
            rotation_deg,
            shift_x,
            shift_y,
            shear,
            zoom,
            flip,
            fill_mode: self.fill_mode,
        }
    }
}

/// One concrete transform. Positive rotation turns the content
/// counter-clockwise; shifts are in pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub rotation_deg: f64,
    pub shift_x: f64,
    pub shift_y: f64,
    pub shear: f64,
    pub zoom: f64,
    pub flip: bool,
    pub fill_mode: FillMode,
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            rotation_deg: 0.0,
            shift_x: 0.0,
            shift_y: 0.0,
            shear: 0.0,
            zoom: 1.0,
            flip: false,
            fill_mode: FillMode::Nearest,
        }
    }
}

/// sin/cos of an angle in degrees, exact at multiples of 90°.
fn sin_cos_deg(deg: f64) -> (f64, f64) {
    if deg.rem_euclid(90.0) == 0.0 {
        match (deg / 90.0).rem_euclid(4.0) as u8 {
            0 => (0.0, 1.0),
            1 => (1.0, 0.0),
            2 => (0.0, -1.0),
            _ => (-1.0, 0.0),
        }
    } else {
        deg.to_radians().sin_cos()
    }
}

/// Resamples `img` through the transform.
///
/// For each output pixel `p` (coordinates relative to the center
/// `((W−1)/2, (H−1)/2)`, x right, y down) the source position is
/// `R·Sh·Z·(F·p + t)`: optional mirror `F`, shift `t`, isotropic zoom `Z`,
/// shear `Sh = [[1, −sin s], [0, cos s]]`, then rotation `R`. Sampling is
/// bilinear and the result is clamped to [0, 255].
pub fn apply_affine(img: &ImageSample, p: &AugmentParams) -> Result<ImageSample> {
    let &[c, h, w] = img.pixels.shape() else {
        bail!(Data, "augment expects C×H×W, got {:?}", img.pixels.shape());
    };
    let (sin, cos) = sin_cos_deg(p.rotation_deg);
    let (ssin, scos) = if p.shear == 0.0 { (0.0, 1.0) } else { p.shear.sin_cos() };
    // R·Sh·Z
    let z = p.zoom;
    let m = [
        [cos * z, (-cos * ssin - sin * scos) * z],
        [sin * z, (-sin * ssin + cos * scos) * z],
    ];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);
    let src = img.pixels.data();
    let zero_fill = p.fill_mode == FillMode::Zero;
    let mut out = vec![0f32; c * h * w];
    for oy in 0..h {
        for ox in 0..w {
            let mut u = ox as f64 - cx;
            if p.flip {
                u = -u;
            }
            let (u, v) = (u + p.shift_x, oy as f64 - cy + p.shift_y);
            let sx = m[0][0] * u + m[0][1] * v + cx;
            let sy = m[1][0] * u + m[1][1] * v + cy;
            let (sx, sy) = if zero_fill {
                (sx, sy)
            } else {
                (sx.clamp(0.0, (w - 1) as f64), sy.clamp(0.0, (h - 1) as f64))
            };
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = ((sx - x0) as f32, (sy - y0) as f32);
            let (x0, y0) = (x0 as isize, y0 as isize);
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let at = |yy: isize, xx: isize| -> f32 {
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        0.0
                    } else {
                        plane[yy as usize * w + xx as usize]
                    }
                };
                let tap = |yy: isize, f: f32| {
                    if f == 0.0 {
                        at(yy, x0)
                    } else {
                        at(yy, x0) * (1.0 - f) + at(yy, x0 + 1) * f
                    }
                };
                let top = tap(y0, fx);
                let val = if fy == 0.0 {
                    top
                } else {
                    top * (1.0 - fy) + tap(y0 + 1, fx) * fy
                };
                out[ch * h * w + oy * w + ox] = val.clamp(0.0, 255.0);
            }
        }
    }
    ImageSample::raw(Tensor::new([c, h, w], out)?)
}

pub fn augment(img: &ImageSample, cfg: &AugmentConfig, rng: &mut Rng) -> Result<(ImageSample, AugmentParams)> {
    let p = cfg.sample(rng, img.height(), img.width());
    Ok((apply_affine(img, &p)?, p))
}
