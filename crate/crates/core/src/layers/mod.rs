//! Forward/backward pairs for every layer kind the model uses.
//!
//! Each layer is a pair of free functions: `*_forward` returns the output
//! and a cache; `*_backward` consumes the cotangent and the cache and
//! returns the input gradient plus named parameter gradients. Nothing here
//! holds state between calls.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
mod loss;
mod pool;

pub use activation::{
    concat_backward, concat_forward, relu_backward, relu_forward, Activation, ConcatCache, ReluCache,
};
pub use batchnorm::{batchnorm_backward, batchnorm_forward, BatchNormCache, BatchNormState};
pub use conv::{conv2d_backward, conv2d_forward, Conv2dCache, Conv2dSpec};
pub use dense::{dense_backward, dense_forward, DenseCache};
pub use dropout::{dropout_backward, dropout_forward, DropoutConfig};
pub use loss::{per_sample_cross_entropy, softmax, softmax_cross_entropy, Targets};
pub use pool::{
    avgpool_backward, avgpool_forward, global_average_pool, global_average_pool_backward, maxpool_backward,
    maxpool_forward, AvgPoolCache, MaxPoolCache, PoolSpec,
};

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamRole {
    /// Updated by the optimizer (kernels, biases, gamma, beta).
    Learned,
    /// Running statistics; never trainable.
    Statistic,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub role: ParamRole,
    pub trainable: bool,
}

impl<T> Param<T> {
    pub fn is_trainable(&self) -> bool {
        self.role == ParamRole::Learned && self.trainable
    }
}

/// Named parameters of one layer, in declaration order.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams<T> {
    params: Vec<Param<T>>,
}

impl<T> Default for LayerParams<T> {
    fn default() -> Self {
        LayerParams { params: Vec::new() }
    }
}

impl<T: Scalar> LayerParams<T> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor<T>, role: ParamRole) -> Result<()> {
        if self.params.iter().any(|p| p.name == name) {
            bail!(Config, "duplicate parameter name {:?}", name);
        }
        self.params.push(Param {
            name: name.to_string(),
            value,
            role,
            trainable: role == ParamRole::Learned,
        });
        Ok(())
    }

    pub fn with(mut self, name: &str, value: Tensor<T>, role: ParamRole) -> Result<Self> {
        self.insert(name, value, role)?;
        Ok(self)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.iter().find(|p| p.name == name).map(|p| &p.value)
    }

    pub fn require(&self, name: &str) -> Result<&Tensor<T>> {
        match self.get(name) {
            Some(t) => Ok(t),
            None => bail!(Config, "missing parameter {:?}", name),
        }
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.params.iter_mut().find(|p| p.name == name)
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, Param<T>> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn set_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable && p.role == ParamRole::Learned;
        }
    }
}

/// Input gradient plus gradients of the named learned parameters.
#[derive(Clone, Debug)]
pub struct Backward<T> {
    pub dx: Tensor<T>,
    pub dparams: Vec<(&'static str, Tensor<T>)>,
}

impl<T> Backward<T> {
    pub fn dparam(&self, name: &str) -> Option<&Tensor<T>> {
        self.dparams.iter().find(|(n, _)| *n == name).map(|(_, t)| t)
    }
}

/// Splits an `N×C×H×W` (or `N×C`) shape into `(N, C, H·W)`.
pub(crate) fn nc_spatial(shape: &[usize]) -> Result<(usize, usize, usize)> {
    match shape {
        [n, c] => Ok((*n, *c, 1)),
        [n, c, h, w] => Ok((*n, *c, h * w)),
        _ => bail!(Dimension, "expected N×C or N×C×H×W, got {:?}", shape),
    }
}

pub(crate) fn expect_rank4(t: &Tensor<impl Scalar>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match t.shape() {
        &[n, c, h, w] => Ok((n, c, h, w)),
        s => bail!(Dimension, "{} expects N×C×H×W, got {:?}", what, s),
    }
}
