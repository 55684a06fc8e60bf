use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug)]
pub struct ReluCache {
    active: Vec<bool>,
}

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> (Tensor<T>, ReluCache) {
    let active: Vec<bool> = x.data().iter().map(|&v| v > T::zero()).collect();
    let y = x.map(|v| if v > T::zero() { v } else { T::zero() });
    (y, ReluCache { active })
}

pub fn relu_backward<T: Scalar>(dy: &Tensor<T>, cache: &ReluCache) -> Result<Tensor<T>> {
    if dy.len() != cache.active.len() {
        bail!(
            Dimension,
            "relu backward: cotangent {:?} does not match cache",
            dy.shape()
        );
    }
    let mut dx = dy.clone();
    for (g, &a) in dx.data_mut().iter_mut().zip(&cache.active) {
        if !a {
            *g = T::zero();
        }
    }
    Ok(dx)
}

#[derive(Clone, Debug)]
pub struct ConcatCache {
    channels: Vec<usize>,
}

/// Concatenates `N×Cᵢ×H×W` (or `N×Cᵢ`) tensors along the channel axis.
pub fn concat_forward<T: Scalar>(inputs: &[&Tensor<T>]) -> Result<(Tensor<T>, ConcatCache)> {
    let Some(first) = inputs.first() else {
        bail!(Dimension, "concat of zero tensors");
    };
    let n = first.dim(0);
    let rest = &first.shape()[2..];
    for t in inputs {
        if t.rank() != first.rank() || t.dim(0) != n || &t.shape()[2..] != rest {
            bail!(
                Dimension,
                "concat inputs disagree off the channel axis: {:?} vs {:?}",
                first.shape(),
                t.shape()
            );
        }
    }
    let channels: Vec<usize> = inputs.iter().map(|t| t.dim(1)).collect();
    let total: usize = channels.iter().sum();
    let mut data = Vec::with_capacity(n * total * rest.iter().product::<usize>());
    for s in 0..n {
        for t in inputs {
            data.extend_from_slice(t.outer(s));
        }
    }
    let mut shape = vec![n, total];
    shape.extend_from_slice(rest);
    Ok((Tensor::new(shape, data)?, ConcatCache { channels }))
}

/// Splits the cotangent back into the original channel extents.
pub fn concat_backward<T: Scalar>(dy: &Tensor<T>, cache: &ConcatCache) -> Result<Vec<Tensor<T>>> {
    let total: usize = cache.channels.iter().sum();
    if dy.rank() < 2 || dy.dim(1) != total {
        bail!(
            Dimension,
            "concat backward: cotangent {:?}, expected {} channels",
            dy.shape(),
            total
        );
    }
    let n = dy.dim(0);
    let rest: Vec<usize> = dy.shape()[2..].to_vec();
    let plane: usize = rest.iter().product();
    let mut outs: Vec<Vec<T>> = cache
        .channels
        .iter()
        .map(|&c| Vec::with_capacity(n * c * plane))
        .collect();
    for s in 0..n {
        let mut off = 0;
        let sample = dy.outer(s);
        for (o, &c) in outs.iter_mut().zip(&cache.channels) {
            o.extend_from_slice(&sample[off..off + c * plane]);
            off += c * plane;
        }
    }
    outs.into_iter()
        .zip(&cache.channels)
        .map(|(d, &c)| {
            let mut shape = vec![n, c];
            shape.extend_from_slice(&rest);
            Tensor::new(shape, d)
        })
        .collect()
}
