use super::Mode;
use crate::error::{bail, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Inverted dropout: survivors are scaled by `1/(1 − rate)` during training
/// so that inference is the identity.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutConfig {
    pub rate: f64,
    pub mode: Mode,
    pub seed: u64,
    pub stream: u64,
}

/// Returns the output and, in training mode, the multiplicative mask.
pub fn dropout_forward<T: Scalar>(x: &Tensor<T>, config: &DropoutConfig) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
    if !(0.0..1.0).contains(&config.rate) {
        bail!(Config, "dropout rate {} outside [0, 1)", config.rate);
    }
    if config.mode == Mode::Inference || config.rate == 0.0 {
        return Ok((x.clone(), None));
    }
    let mut rng = Rng::new(config.seed, config.stream);
    let keep = T::of(1.0 / (1.0 - config.rate));
    let mask = Tensor::from_fn(x.shape().to_vec(), |_| {
        if rng.bernoulli(config.rate) {
            T::zero()
        } else {
            keep
        }
    });
    let y = x.zip_map(&mask, |a, m| a * m)?;
    Ok((y, Some(mask)))
}

pub fn dropout_backward<T: Scalar>(dy: &Tensor<T>, mask: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    match mask {
        Some(m) => dy.zip_map(m, |g, k| g * k),
        None => Ok(dy.clone()),
    }
}
