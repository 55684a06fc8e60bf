use serde::{Deserialize, Serialize};

use super::expect_rank4;
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{Padding, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoolSpec {
    pub window: (usize, usize),
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl PoolSpec {
    pub fn new(window: (usize, usize), stride: (usize, usize), padding: Padding) -> Self {
        PoolSpec {
            window,
            stride,
            padding,
        }
    }
}

struct Window {
    out_h: usize,
    out_w: usize,
    pad_top: usize,
    pad_left: usize,
}

fn window(h: usize, w: usize, spec: &PoolSpec) -> Result<Window> {
    let (pad_top, _, out_h) = spec.padding.resolve(h, spec.window.0, spec.stride.0)?;
    let (pad_left, _, out_w) = spec.padding.resolve(w, spec.window.1, spec.stride.1)?;
    Ok(Window {
        out_h,
        out_w,
        pad_top,
        pad_left,
    })
}

impl Window {
    /// In-bounds input range `[lo, hi)` covered by output index `o` on one axis.
    fn span(o: usize, stride: usize, k: usize, pad: usize, extent: usize) -> (usize, usize) {
        let start = (o * stride) as isize - pad as isize;
        let lo = start.max(0) as usize;
        let hi = ((start + k as isize).max(0) as usize).min(extent);
        (lo, hi)
    }
}

#[derive(Clone, Debug)]
pub struct MaxPoolCache {
    in_shape: Vec<usize>,
    /// Flat input index of the selected element for each output element.
    argmax: Vec<usize>,
}

/// Windowed maximum; padded positions never win. Ties go to the first
/// element in row-major window order.
pub fn maxpool_forward<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, MaxPoolCache)> {
    let (n, c, h, w) = expect_rank4(x, "maxpool")?;
    let win = window(h, w, &spec)?;
    let mut y = Vec::with_capacity(n * c * win.out_h * win.out_w);
    let mut argmax = Vec::with_capacity(y.capacity());
    let xs = x.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..win.out_h {
            let (y0, y1) = Window::span(oy, spec.stride.0, spec.window.0, win.pad_top, h);
            for ox in 0..win.out_w {
                let (x0, x1) = Window::span(ox, spec.stride.1, spec.window.1, win.pad_left, w);
                if y0 >= y1 || x0 >= x1 {
                    bail!(Dimension, "pooling window at ({oy},{ox}) covers no input");
                }
                let mut best = base + y0 * w + x0;
                for iy in y0..y1 {
                    for ix in x0..x1 {
                        let i = base + iy * w + ix;
                        if xs[i] > xs[best] {
                            best = i;
                        }
                    }
                }
                y.push(xs[best]);
                argmax.push(best);
            }
        }
    }
    let out = Tensor::new([n, c, win.out_h, win.out_w], y)?;
    Ok((
        out,
        MaxPoolCache {
            in_shape: x.shape().to_vec(),
            argmax,
        },
    ))
}

pub fn maxpool_backward<T: Scalar>(dy: &Tensor<T>, cache: &MaxPoolCache) -> Result<Tensor<T>> {
    if dy.len() != cache.argmax.len() {
        bail!(
            Dimension,
            "maxpool backward: cotangent {:?} does not match cache",
            dy.shape()
        );
    }
    let mut dx = Tensor::zeros(cache.in_shape.clone());
    let d = dx.data_mut();
    for (&i, &g) in cache.argmax.iter().zip(dy.data()) {
        d[i] += g;
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct AvgPoolCache {
    in_shape: Vec<usize>,
    spec: PoolSpec,
}

/// Windowed mean over the in-bounds elements only (padding is not counted).
pub fn avgpool_forward<T: Scalar>(x: &Tensor<T>, spec: PoolSpec) -> Result<(Tensor<T>, AvgPoolCache)> {
    let (n, c, h, w) = expect_rank4(x, "avgpool")?;
    let win = window(h, w, &spec)?;
    let xs = x.data();
    let mut y = Vec::with_capacity(n * c * win.out_h * win.out_w);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..win.out_h {
            let (y0, y1) = Window::span(oy, spec.stride.0, spec.window.0, win.pad_top, h);
            for ox in 0..win.out_w {
                let (x0, x1) = Window::span(ox, spec.stride.1, spec.window.1, win.pad_left, w);
                let count = (y1 - y0) * (x1 - x0);
                if count == 0 {
                    bail!(Dimension, "pooling window at ({oy},{ox}) covers no input");
                }
                let mut s = T::zero();
                for iy in y0..y1 {
                    for &v in &xs[base + iy * w + x0..base + iy * w + x1] {
                        s += v;
                    }
                }
                y.push(s / T::of(count as f64));
            }
        }
    }
    let out = Tensor::new([n, c, win.out_h, win.out_w], y)?;
    Ok((
        out,
        AvgPoolCache {
            in_shape: x.shape().to_vec(),
            spec,
        },
    ))
}

pub fn avgpool_backward<T: Scalar>(dy: &Tensor<T>, cache: &AvgPoolCache) -> Result<Tensor<T>> {
    let &[n, c, h, w] = cache.in_shape.as_slice() else {
        bail!(Dimension, "avgpool cache has shape {:?}", cache.in_shape);
    };
    let spec = cache.spec;
    let win = window(h, w, &spec)?;
    if dy.shape() != [n, c, win.out_h, win.out_w] {
        bail!(
            Dimension,
            "avgpool backward: cotangent {:?} does not match forward output",
            dy.shape()
        );
    }
    let mut dx = Tensor::zeros(cache.in_shape.clone());
    let d = dx.data_mut();
    let g = dy.data();
    let mut o = 0;
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..win.out_h {
            let (y0, y1) = Window::span(oy, spec.stride.0, spec.window.0, win.pad_top, h);
            for ox in 0..win.out_w {
                let (x0, x1) = Window::span(ox, spec.stride.1, spec.window.1, win.pad_left, w);
                let share = g[o] / T::of(((y1 - y0) * (x1 - x0)) as f64);
                for iy in y0..y1 {
                    for v in &mut d[base + iy * w + x0..base + iy * w + x1] {
                        *v += share;
                    }
                }
                o += 1;
            }
        }
    }
    Ok(dx)
}

/// Spatial mean per sample and channel: `N×C×H×W → N×C`.
pub fn global_average_pool<T: Scalar>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = expect_rank4(x, "global_average_pool")?;
    let hw = T::of((h * w) as f64);
    let y = x
        .data()
        .chunks_exact(h * w)
        .map(|p| crate::tensor::sum_slice(p) / hw)
        .collect();
    Tensor::new([n, c], y)
}

pub fn global_average_pool_backward<T: Scalar>(dy: &Tensor<T>, in_shape: &[usize]) -> Result<Tensor<T>> {
    let &[n, c, h, w] = in_shape else {
        bail!(Dimension, "global pool input shape {:?}", in_shape);
    };
    if dy.shape() != [n, c] {
        bail!(
            Dimension,
            "global pool backward: cotangent {:?}, expected [{n}, {c}]",
            dy.shape()
        );
    }
    let inv = T::one() / T::of((h * w) as f64);
    let mut dx = Vec::with_capacity(n * c * h * w);
    for &g in dy.data() {
        dx.extend(std::iter::repeat_n(g * inv, h * w));
    }
    Tensor::new(in_shape, dx)
}
