use serde::{Deserialize, Serialize};

use super::{expect_rank4, Backward, LayerParams};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{
    col2im_into, im2col_into, matmul_a_bt, matmul_at_b_acc, matmul_into, sum_slice, ConvGeometry, Padding, Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: Padding,
}

impl Conv2dSpec {
    pub fn new(stride: (usize, usize), padding: Padding) -> Self {
        Conv2dSpec { stride, padding }
    }
}

#[derive(Clone, Debug)]
pub struct Conv2dCache<T> {
    x: Tensor<T>,
    kernel: Tensor<T>,
    has_bias: bool,
    geom: ConvGeometry,
}

impl ConvGeometry {
    /// A 1×1, stride-1, unpadded window: the patch matrix is the input itself.
    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad_top == 0 && self.pad_left == 0
    }
}

/// Cross-correlation of `x (N×C×H×W)` with `kernel (Cout×C×Kh×Kw)` plus
/// optional per-channel `bias`.
pub fn conv2d_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &LayerParams<T>,
    spec: Conv2dSpec,
) -> Result<(Tensor<T>, Conv2dCache<T>)> {
    let (n, c, h, w) = expect_rank4(x, "conv2d")?;
    let kernel = params.require("kernel")?;
    let &[cout, cin, kh, kw] = kernel.shape() else {
        bail!(
            Dimension,
            "conv kernel must be Cout×Cin×Kh×Kw, got {:?}",
            kernel.shape()
        );
    };
    if cin != c {
        bail!(
            Dimension,
            "conv kernel expects {} input channels, input {:?} has {}",
            cin,
            x.shape(),
            c
        );
    }
    let bias = params.get("bias");
    if let Some(b) = bias {
        if b.shape() != [cout] {
            bail!(Dimension, "conv bias shape {:?}, expected [{}]", b.shape(), cout);
        }
    }
    let geom = ConvGeometry::new(c, h, w, (kh, kw), spec.stride, spec.padding)?;
    let (k, hw) = (geom.patch_len(), geom.out_len());
    let mut y = vec![T::zero(); n * cout * hw];
    let mut cols = if geom.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); k * hw]
    };
    for s in 0..n {
        let xs = x.outer(s);
        let patches: &[T] = if geom.is_pointwise() {
            xs
        } else {
            im2col_into(xs, &geom, &mut cols);
            &cols
        };
        let ys = &mut y[s * cout * hw..(s + 1) * cout * hw];
        matmul_into(kernel.data(), patches, ys, cout, k, hw, false);
        if let Some(b) = bias {
            for (o, row) in ys.chunks_exact_mut(hw).enumerate() {
                let bo = b.data()[o];
                row.iter_mut().for_each(|v| *v += bo);
            }
        }
    }
    let out = Tensor::new([n, cout, geom.out_h, geom.out_w], y)?;
    let cache = Conv2dCache {
        x: x.clone(),
        kernel: kernel.clone(),
        has_bias: bias.is_some(),
        geom,
    };
    Ok((out, cache))
}

pub fn conv2d_backward<T: Scalar>(dy: &Tensor<T>, cache: &Conv2dCache<T>) -> Result<Backward<T>> {
    let g = &cache.geom;
    let n = cache.x.dim(0);
    let cout = cache.kernel.dim(0);
    let expected = [n, cout, g.out_h, g.out_w];
    if dy.shape() != expected {
        bail!(
            Dimension,
            "conv2d backward: cotangent {:?} does not match forward output {:?}",
            dy.shape(),
            expected
        );
    }
    let (k, hw) = (g.patch_len(), g.out_len());
    let pointwise = g.is_pointwise();
    let mut dx = vec![T::zero(); cache.x.len()];
    let mut dk = vec![T::zero(); cout * k];
    let mut dk_s = vec![T::zero(); cout * k];
    let mut db = vec![T::zero(); cout];
    let mut cols = if pointwise { Vec::new() } else { vec![T::zero(); k * hw] };
    let mut dcols = vec![T::zero(); k * hw];
    for s in 0..n {
        let xs = cache.x.outer(s);
        let dys = dy.outer(s);
        let patches: &[T] = if pointwise {
            xs
        } else {
            im2col_into(xs, g, &mut cols);
            &cols
        };
        matmul_a_bt(dys, patches, &mut dk_s, cout, hw, k);
        dk.iter_mut().zip(&dk_s).for_each(|(a, &b)| *a += b);
        if cache.has_bias {
            for (o, row) in dys.chunks_exact(hw).enumerate() {
                db[o] += sum_slice(row);
            }
        }
        let dxs = &mut dx[s * g.in_len()..(s + 1) * g.in_len()];
        if pointwise {
            matmul_at_b_acc(cache.kernel.data(), dys, dxs, k, cout, hw);
        } else {
            dcols.fill(T::zero());
            matmul_at_b_acc(cache.kernel.data(), dys, &mut dcols, k, cout, hw);
            col2im_into(&dcols, g, dxs);
        }
    }
    let mut dparams = vec![("kernel", Tensor::new(cache.kernel.shape(), dk)?)];
    if cache.has_bias {
        dparams.push(("bias", Tensor::new([cout], db)?));
    }
    Ok(Backward {
        dx: Tensor::new(cache.x.shape(), dx)?,
        dparams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamRole;
    use crate::rng::Rng;

    fn params(kernel: Tensor<f64>, bias: Option<Tensor<f64>>) -> LayerParams<f64> {
        let mut p = LayerParams::new();
        p.insert("kernel", kernel, ParamRole::Learned).unwrap();
        if let Some(b) = bias {
            p.insert("bias", b, ParamRole::Learned).unwrap();
        }
        p
    }

    /// Direct six-loop cross-correlation, valid padding.
    fn direct_conv(x: &Tensor<f64>, k: &Tensor<f64>, stride: usize) -> Tensor<f64> {
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let (co, kh, kw) = (k.dim(0), k.dim(2), k.dim(3));
        let (ho, wo) = ((h - kh) / stride + 1, (w - kw) / stride + 1);
        let mut y = Tensor::zeros([n, co, ho, wo]);
        for s in 0..n {
            for o in 0..co {
                for i in 0..ho {
                    for j in 0..wo {
                        let mut acc = 0.0;
                        for ci in 0..c {
                            for a in 0..kh {
                                for b in 0..kw {
                                    acc += x.get(&[s, ci, i * stride + a, j * stride + b]) * k.get(&[o, ci, a, b]);
                                }
                            }
                        }
                        let idx = y.flat_index(&[s, o, i, j]);
                        y.data_mut()[idx] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn identity_kernel() {
        let x = Tensor::<f64>::new([1, 1, 1, 1], vec![5.0]).unwrap();
        let p = params(Tensor::full([1, 1, 1, 1], 1.0), Some(Tensor::zeros([1])));
        let (y, _) = conv2d_forward(&x, &p, Conv2dSpec::new((1, 1), Padding::Valid)).unwrap();
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn im2col_path_matches_direct_loops() {
        let mut rng = Rng::new(11, 0);
        let x = Tensor::from_fn([1, 3, 5, 5], |_| rng.uniform_range(-1.0, 1.0));
        let k = Tensor::from_fn([4, 3, 3, 3], |_| rng.uniform_range(-1.0, 1.0));
        let (y, _) = conv2d_forward(&x, &params(k.clone(), None), Conv2dSpec::new((1, 1), Padding::Valid)).unwrap();
        assert!(y.sub(&direct_conv(&x, &k, 1)).unwrap().max_abs() < 1e-5);
        let x = Tensor::from_fn([2, 2, 7, 6], |_| rng.uniform_range(-1.0, 1.0));
        let k = Tensor::from_fn([3, 2, 3, 2], |_| rng.uniform_range(-1.0, 1.0));
        let (y, _) = conv2d_forward(&x, &params(k.clone(), None), Conv2dSpec::new((2, 2), Padding::Valid)).unwrap();
        assert!(y.sub(&direct_conv(&x, &k, 2)).unwrap().max_abs() < 1e-12);
    }

    #[test]
    fn stem_output_shape() {
        let x = Tensor::<f32>::zeros([1, 3, 299, 299]);
        let mut p = LayerParams::new();
        p.insert("kernel", Tensor::zeros([32, 3, 3, 3]), ParamRole::Learned)
            .unwrap();
        let (y, _) = conv2d_forward(&x, &p, Conv2dSpec::new((2, 2), Padding::Valid)).unwrap();
        assert_eq!(y.shape(), &[1, 32, 149, 149]);
    }

    #[test]
    fn channel_mismatch_is_dimension_error() {
        let x = Tensor::<f64>::zeros([1, 2, 3, 3]);
        let p = params(Tensor::zeros([1, 3, 1, 1]), None);
        let err = conv2d_forward(&x, &p, Conv2dSpec::new((1, 1), Padding::Valid)).unwrap_err();
        assert!(matches!(err, crate::Error::Dimension(_)));
    }

    #[test]
    fn backward_zero_and_scalar_cases() {
        let x = Tensor::<f64>::new([1, 1, 1, 1], vec![3.0]).unwrap();
        let p = params(Tensor::full([1, 1, 1, 1], -2.0), Some(Tensor::zeros([1])));
        let spec = Conv2dSpec::new((1, 1), Padding::Valid);
        let (_, cache) = conv2d_forward(&x, &p, spec).unwrap();
        let zero = conv2d_backward(&Tensor::zeros([1, 1, 1, 1]), &cache).unwrap();
        assert_eq!(zero.dx.max_abs(), 0.0);
        assert_eq!(zero.dparam("kernel").unwrap().max_abs(), 0.0);
        let dy = Tensor::new([1, 1, 1, 1], vec![0.5]).unwrap();
        let g = conv2d_backward(&dy, &cache).unwrap();
        assert_eq!(g.dparam("kernel").unwrap().data(), &[0.5 * 3.0]);
        assert_eq!(g.dx.data(), &[0.5 * -2.0]);
        assert_eq!(g.dparam("bias").unwrap().data(), &[0.5]);
        assert!(conv2d_backward(&Tensor::zeros([1, 2, 1, 1]), &cache).is_err());
    }
}
