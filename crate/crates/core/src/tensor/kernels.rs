//! Numeric kernels over flat slices.
//!
//! Reductions accumulate in eight interleaved lanes that are combined in a
//! fixed order, so results are identical from run to run.

use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{bail, Result};
use crate::scalar::Scalar;

const LANES: usize = 8;
const TILE_N: usize = 256;
const TILE_K: usize = 128;

#[inline]
fn combine<T: Scalar>(acc: [T; LANES]) -> T {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

pub(crate) fn sum<T: Scalar>(x: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let chunks = x.chunks_exact(LANES);
    let tail = chunks.remainder();
    for c in chunks {
        for l in 0..LANES {
            acc[l] += c[l];
        }
    }
    tail.iter().fold(combine(acc), |s, &v| s + v)
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    ta.iter().zip(tb).fold(combine(acc), |s, (&x, &y)| s + x * y)
}

#[inline]
fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// `c (m×n) = a (m×k) · b (k×n)`, or `+=` when `accumulate` is set.
pub fn matmul_into<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize, accumulate: bool) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    debug_assert_eq!(c.len(), m * n);
    if !accumulate {
        c.fill(T::zero());
    }
    for n0 in (0..n).step_by(TILE_N) {
        let n1 = (n0 + TILE_N).min(n);
        for k0 in (0..k).step_by(TILE_K) {
            let k1 = (k0 + TILE_K).min(k);
            for i in 0..m {
                let crow = &mut c[i * n + n0..i * n + n1];
                let arow = &a[i * k..(i + 1) * k];
                for p in k0..k1 {
                    axpy(arow[p], &b[p * n + n0..p * n + n1], crow);
                }
            }
        }
    }
}

/// `c (m×n) = a (m×k) · bᵀ` where `b` is stored `n×k`.
pub fn matmul_a_bt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), n * k);
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] = dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// `c (m×n) += aᵀ · b` where `a` is stored `k×m` and `b` is `k×n`.
pub fn matmul_at_b_acc<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    debug_assert_eq!(a.len(), k * m);
    debug_assert_eq!(b.len(), k * n);
    for n0 in (0..n).step_by(TILE_N) {
        let n1 = (n0 + TILE_N).min(n);
        for p in 0..k {
            let brow = &b[p * n + n0..p * n + n1];
            for i in 0..m {
                axpy(a[p * m + i], brow, &mut c[i * n + n0..i * n + n1]);
            }
        }
    }
}

pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0) {
        bail!(
            Dimension,
            "matmul needs [M×K]·[K×N], got {:?} · {:?}",
            a.shape(),
            b.shape()
        );
    }
    let (m, k, n) = (a.dim(0), a.dim(1), b.dim(1));
    let mut c = vec![T::zero(); m * n];
    matmul_into(a.data(), b.data(), &mut c, m, k, n, false);
    Tensor::new([m, n], c)
}

/// Zero-fill padding modes, resolved with the TensorFlow convention
/// (extra odd padding goes after).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

impl Padding {
    /// Returns `(pad_before, pad_after, output_extent)` for one spatial axis.
    pub fn resolve(self, input: usize, kernel: usize, stride: usize) -> Result<(usize, usize, usize)> {
        if stride == 0 || kernel == 0 {
            bail!(Dimension, "kernel and stride must be positive");
        }
        match self {
            Padding::Valid => {
                if kernel > input {
                    bail!(Dimension, "kernel extent {} larger than input extent {}", kernel, input);
                }
                Ok((0, 0, (input - kernel) / stride + 1))
            }
            Padding::Same => {
                let out = input.div_ceil(stride);
                let total = ((out - 1) * stride + kernel).saturating_sub(input);
                Ok((total / 2, total - total / 2, out))
            }
        }
    }
}

/// Resolved geometry of a 2-D sliding window over a `C×H×W` input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad_top: usize,
    pub pad_left: usize,
    pub out_h: usize,
    pub out_w: usize,
}

impl ConvGeometry {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
    ) -> Result<Self> {
        let (pad_top, _, out_h) = padding.resolve(height, kernel.0, stride.0)?;
        let (pad_left, _, out_w) = padding.resolve(width, kernel.1, stride.1)?;
        Ok(ConvGeometry {
            channels,
            height,
            width,
            kernel,
            stride,
            pad_top,
            pad_left,
            out_h,
            out_w,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.channels * self.kernel.0 * self.kernel.1
    }

    pub fn out_len(&self) -> usize {
        self.out_h * self.out_w
    }

    pub fn in_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    /// Output columns `[lo, hi)` whose input column `ox*sw + kj - pad` is inside the image.
    #[inline]
    fn valid_cols(&self, kj: usize) -> (usize, usize) {
        let sw = self.stride.1;
        let off = kj as isize - self.pad_left as isize;
        let lo = if off >= 0 { 0 } else { ((-off) as usize).div_ceil(sw) };
        let last = self.width as isize - 1 - off;
        let hi = if last < 0 {
            0
        } else {
            (last as usize / sw + 1).min(self.out_w)
        };
        (lo.min(hi), hi)
    }

    #[inline]
    fn in_row(&self, oy: usize, ki: usize) -> Option<usize> {
        let iy = (oy * self.stride.0 + ki) as isize - self.pad_top as isize;
        (iy >= 0 && (iy as usize) < self.height).then_some(iy as usize)
    }
}

/// Patch-matrix of one image: row `(c·Kh + ki)·Kw + kj`, column `oy·Wo + ox`.
pub fn im2col_into<T: Scalar>(x: &[T], g: &ConvGeometry, cols: &mut [T]) {
    debug_assert_eq!(x.len(), g.in_len());
    debug_assert_eq!(cols.len(), g.patch_len() * g.out_len());
    let (kh, kw) = g.kernel;
    let (hw, ow) = (g.height * g.width, g.out_w);
    let sw = g.stride.1;
    for c in 0..g.channels {
        let plane = &x[c * hw..(c + 1) * hw];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let dst_row = &mut cols[row * g.out_len()..(row + 1) * g.out_len()];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let dst = &mut dst_row[oy * ow..(oy + 1) * ow];
                    let Some(iy) = g.in_row(oy, ki) else {
                        dst.fill(T::zero());
                        continue;
                    };
                    dst[..lo].fill(T::zero());
                    dst[hi..].fill(T::zero());
                    let src = &plane[iy * g.width..(iy + 1) * g.width];
                    let ix0 = lo * sw + kj - g.pad_left;
                    if sw == 1 {
                        dst[lo..hi].copy_from_slice(&src[ix0..ix0 + (hi - lo)]);
                    } else {
                        for (o, d) in dst[lo..hi].iter_mut().enumerate() {
                            *d = src[ix0 + o * sw];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col_into`]: scatters patch columns back, accumulating into `dx`.
pub fn col2im_into<T: Scalar>(cols: &[T], g: &ConvGeometry, dx: &mut [T]) {
    debug_assert_eq!(dx.len(), g.in_len());
    let (kh, kw) = g.kernel;
    let (hw, ow) = (g.height * g.width, g.out_w);
    let sw = g.stride.1;
    for c in 0..g.channels {
        let plane = &mut dx[c * hw..(c + 1) * hw];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (c * kh + ki) * kw + kj;
                let src_row = &cols[row * g.out_len()..(row + 1) * g.out_len()];
                let (lo, hi) = g.valid_cols(kj);
                for oy in 0..g.out_h {
                    let Some(iy) = g.in_row(oy, ki) else { continue };
                    let src = &src_row[oy * ow..(oy + 1) * ow];
                    let dst = &mut plane[iy * g.width..(iy + 1) * g.width];
                    let ix0 = lo * sw + kj - g.pad_left;
                    for o in lo..hi {
                        dst[ix0 + (o - lo) * sw] += src[o];
                    }
                }
            }
        }
    }
}

pub fn im2col<T: Scalar>(
    x: &Tensor<T>,
    kernel: (usize, usize),
    stride: (usize, usize),
    padding: Padding,
) -> Result<Tensor<T>> {
    if x.rank() != 3 {
        bail!(Dimension, "im2col expects C×H×W, got {:?}", x.shape());
    }
    let g = ConvGeometry::new(x.dim(0), x.dim(1), x.dim(2), kernel, stride, padding)?;
    let mut cols = vec![T::zero(); g.patch_len() * g.out_len()];
    im2col_into(x.data(), &g, &mut cols);
    Tensor::new([g.patch_len(), g.out_len()], cols)
}

pub fn col2im<T: Scalar>(cols: &Tensor<T>, g: &ConvGeometry) -> Result<Tensor<T>> {
    if cols.shape() != [g.patch_len(), g.out_len()] {
        bail!(
            Dimension,
            "col2im expects [{}×{}], got {:?}",
            g.patch_len(),
            g.out_len(),
            cols.shape()
        );
    }
    let mut dx = vec![T::zero(); g.in_len()];
    col2im_into(cols.data(), g, &mut dx);
    Tensor::new([g.channels, g.height, g.width], dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    Mean,
    Max,
}

/// Reduces `x` over `axes`, removing them from the shape. Reducing every
/// axis yields a one-element tensor of shape `[1]`.
pub fn reduce<T: Scalar>(x: &Tensor<T>, axes: &[usize], mode: Reduction) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut reduced = vec![false; rank];
    for &a in axes {
        if a >= rank {
            bail!(Domain, "axis {} out of range for rank {}", a, rank);
        }
        if reduced[a] {
            bail!(Domain, "axis {} listed twice", a);
        }
        reduced[a] = true;
    }
    if axes.is_empty() {
        bail!(Domain, "empty reduction extent: no axes given");
    }
    let out_shape: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).map(|a| x.dim(a)).collect();
    let count: usize = axes.iter().map(|&a| x.dim(a)).product();
    let out_len: usize = out_shape.iter().product();
    let init = match mode {
        Reduction::Max => T::neg_infinity(),
        _ => T::zero(),
    };
    let mut out = vec![init; out_len.max(1)];
    // Walk the input in row-major order, tracking the output offset.
    let mut index = vec![0usize; rank];
    let mut out_strides = vec![0usize; rank];
    let mut s = 1;
    for a in (0..rank).rev() {
        if !reduced[a] {
            out_strides[a] = s;
            s *= x.dim(a);
        }
    }
    let mut o = 0usize;
    for &v in x.data() {
        match mode {
            Reduction::Max => out[o] = out[o].max(v),
            _ => out[o] += v,
        }
        for a in (0..rank).rev() {
            index[a] += 1;
            o += out_strides[a];
            if index[a] < x.dim(a) {
                break;
            }
            o -= out_strides[a] * index[a];
            index[a] = 0;
        }
    }
    if mode == Reduction::Mean {
        let n = T::of(count as f64);
        out.iter_mut().for_each(|v| *v /= n);
    }
    let shape = if out_shape.is_empty() { vec![1] } else { out_shape };
    Tensor::new(shape, out)
}
