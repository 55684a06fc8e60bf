use super::{Backward, LayerParams};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::{matmul_a_bt, matmul_at_b_acc, matmul_into, Tensor};

#[derive(Clone, Debug)]
pub struct DenseCache<T> {
    x: Tensor<T>,
    kernel: Tensor<T>,
    has_bias: bool,
}

/// `y = x·W + b` with `x: N×F`, `W: F×U`, `b: U`.
pub fn dense_forward<T: Scalar>(x: &Tensor<T>, params: &LayerParams<T>) -> Result<(Tensor<T>, DenseCache<T>)> {
    let kernel = params.require("kernel")?;
    let (&[n, f], &[fk, u]) = (x.shape(), kernel.shape()) else {
        bail!(
            Dimension,
            "dense expects x: N×F and kernel: F×U, got {:?} and {:?}",
            x.shape(),
            kernel.shape()
        );
    };
    if f != fk {
        bail!(
            Dimension,
            "dense feature mismatch: input {:?}, kernel {:?}",
            x.shape(),
            kernel.shape()
        );
    }
    let mut y = vec![T::zero(); n * u];
    matmul_into(x.data(), kernel.data(), &mut y, n, f, u, false);
    let bias = params.get("bias");
    if let Some(b) = bias {
        if b.shape() != [u] {
            bail!(Dimension, "dense bias shape {:?}, expected [{}]", b.shape(), u);
        }
        for row in y.chunks_exact_mut(u) {
            row.iter_mut().zip(b.data()).for_each(|(v, &bb)| *v += bb);
        }
    }
    Ok((
        Tensor::new([n, u], y)?,
        DenseCache {
            x: x.clone(),
            kernel: kernel.clone(),
            has_bias: bias.is_some(),
        },
    ))
}

pub fn dense_backward<T: Scalar>(dy: &Tensor<T>, cache: &DenseCache<T>) -> Result<Backward<T>> {
    let (n, f) = (cache.x.dim(0), cache.x.dim(1));
    let u = cache.kernel.dim(1);
    if dy.shape() != [n, u] {
        bail!(
            Dimension,
            "dense backward: cotangent {:?}, expected [{n}, {u}]",
            dy.shape()
        );
    }
    let mut dx = vec![T::zero(); n * f];
    matmul_a_bt(dy.data(), cache.kernel.data(), &mut dx, n, u, f);
    let mut dk = vec![T::zero(); f * u];
    matmul_at_b_acc(cache.x.data(), dy.data(), &mut dk, f, n, u);
    let mut dparams = vec![("kernel", Tensor::new([f, u], dk)?)];
    if cache.has_bias {
        let mut db = vec![T::zero(); u];
        for row in dy.data().chunks_exact(u) {
            db.iter_mut().zip(row).for_each(|(a, &g)| *a += g);
        }
        dparams.push(("bias", Tensor::new([u], db)?));
    }
    Ok(Backward {
        dx: Tensor::new([n, f], dx)?,
        dparams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamRole;

    #[test]
    fn identity_and_hand_case() {
        let x = Tensor::<f64>::from_rows(&[&[1.0, -2.0, 3.0]]);
        let p = LayerParams::new()
            .with("kernel", Tensor::eye(3), ParamRole::Learned)
            .unwrap()
            .with("bias", Tensor::zeros([3]), ParamRole::Learned)
            .unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap().0, x);

        let x = Tensor::<f64>::from_rows(&[&[1.0, 2.0]]);
        let p = LayerParams::new()
            .with("kernel", Tensor::from_rows(&[&[1.0], &[1.0]]), ParamRole::Learned)
            .unwrap()
            .with("bias", Tensor::new([1], vec![3.0]).unwrap(), ParamRole::Learned)
            .unwrap();
        assert_eq!(dense_forward(&x, &p).unwrap().0.data(), &[6.0]);
    }

    #[test]
    fn feature_mismatch() {
        let x = Tensor::<f64>::zeros([2, 3]);
        let p = LayerParams::new()
            .with("kernel", Tensor::zeros([4, 2]), ParamRole::Learned)
            .unwrap();
        assert!(matches!(dense_forward(&x, &p), Err(crate::Error::Dimension(_))));
    }
}
