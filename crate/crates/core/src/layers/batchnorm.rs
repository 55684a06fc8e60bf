use super::{nc_spatial, Backward, LayerParams, Mode};
use crate::error::{bail, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Running statistics of a batch-norm layer.
///
/// Moving averages follow `m ← momentum·m + (1 − momentum)·batch`, with the
/// population (divide-by-count) batch variance.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormState<T> {
    pub moving_mean: Tensor<T>,
    pub moving_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Scalar> BatchNormState<T> {
    pub fn new(channels: usize, momentum: T, epsilon: T) -> Self {
        BatchNormState {
            moving_mean: Tensor::zeros([channels]),
            moving_var: Tensor::full([channels], T::one()),
            momentum,
            epsilon,
        }
    }
}

#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    gamma: Option<Vec<T>>,
    has_beta: bool,
    mode: Mode,
}

/// Per-channel normalization of `N×C×H×W` or `N×C` input.
///
/// `params` may hold `gamma` (scale) and/or `beta` (center), each of shape
/// `[C]`; a missing one acts as 1 or 0 respectively. Returns the updated
/// state, which equals the input state in inference mode.
pub fn batchnorm_forward<T: Scalar>(
    x: &Tensor<T>,
    params: &LayerParams<T>,
    state: &BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>, BatchNormState<T>)> {
    let (n, c, hw) = nc_spatial(x.shape())?;
    let count = n * hw;
    if count == 0 {
        bail!(Domain, "batch norm over an empty batch extent");
    }
    if state.moving_mean.shape() != [c] || state.moving_var.shape() != [c] {
        bail!(
            Dimension,
            "batch norm state has {:?} channels, input {:?}",
            state.moving_mean.shape(),
            x.shape()
        );
    }
    let gamma = params.get("gamma").map(|g| g.data().to_vec());
    let beta = params.get("beta").map(|b| b.data().to_vec());
    for p in [&gamma, &beta].into_iter().flatten() {
        if p.len() != c {
            bail!(
                Dimension,
                "batch norm parameter has {} entries for {} channels",
                p.len(),
                c
            );
        }
    }
    let xs = x.data();
    let plane = |s: usize, ch: usize| &xs[(s * c + ch) * hw..(s * c + ch + 1) * hw];

    let (mean, var) = match mode {
        Mode::Train => {
            let inv = T::one() / T::of(count as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for b in 0..n {
                    s += crate::tensor::sum_slice(plane(b, ch));
                }
                let m = s * inv;
                let mut v = T::zero();
                for b in 0..n {
                    v += plane(b, ch).iter().map(|&z| (z - m) * (z - m)).sum::<T>();
                }
                mean[ch] = m;
                var[ch] = v * inv;
            }
            (mean, var)
        }
        Mode::Inference => (state.moving_mean.data().to_vec(), state.moving_var.data().to_vec()),
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + state.epsilon).sqrt()).collect();

    let mut xhat = vec![T::zero(); x.len()];
    let mut y = vec![T::zero(); x.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            let g = gamma.as_ref().map_or(T::one(), |g| g[ch]);
            let be = beta.as_ref().map_or(T::zero(), |b| b[ch]);
            for i in off..off + hw {
                let h = (xs[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                y[i] = g * h + be;
            }
        }
    }

    let new_state = match mode {
        Mode::Train => {
            let m = state.momentum;
            let blend =
                |old: &Tensor<T>, new: &[T]| Tensor::from_fn([c], |i| m * old.data()[i] + (T::one() - m) * new[i]);
            BatchNormState {
                moving_mean: blend(&state.moving_mean, &mean),
                moving_var: blend(&state.moving_var, &var),
                momentum: state.momentum,
                epsilon: state.epsilon,
            }
        }
        Mode::Inference => state.clone(),
    };
    let cache = BatchNormCache {
        xhat: Tensor::new(x.shape(), xhat)?,
        inv_std,
        gamma,
        has_beta: beta.is_some(),
        mode,
    };
    Ok((Tensor::new(x.shape(), y)?, cache, new_state))
}

pub fn batchnorm_backward<T: Scalar>(dy: &Tensor<T>, cache: &BatchNormCache<T>) -> Result<Backward<T>> {
    cache.xhat.expect_same_shape(dy)?;
    let (n, c, hw) = nc_spatial(dy.shape())?;
    let count = T::of((n * hw) as f64);
    let (dys, xh) = (dy.data(), cache.xhat.data());
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dbeta[ch] += dys[i];
                dgamma[ch] += dys[i] * xh[i];
            }
        }
    }
    let mut dx = vec![T::zero(); dy.len()];
    for ch in 0..c {
        let g = cache.gamma.as_ref().map_or(T::one(), |g| g[ch]);
        let k = g * cache.inv_std[ch];
        // With batch statistics the mean and variance also depend on x.
        let (mean_term, xhat_term) = match cache.mode {
            Mode::Train => (dbeta[ch] / count, dgamma[ch] / count),
            Mode::Inference => (T::zero(), T::zero()),
        };
        for b in 0..n {
            let off = (b * c + ch) * hw;
            for i in off..off + hw {
                dx[i] = k * (dys[i] - mean_term - xh[i] * xhat_term);
            }
        }
    }
    let mut dparams = Vec::new();
    if cache.gamma.is_some() {
        dparams.push(("gamma", Tensor::new([c], dgamma)?));
    }
    if cache.has_beta {
        dparams.push(("beta", Tensor::new([c], dbeta)?));
    }
    Ok(Backward {
        dx: Tensor::new(dy.shape(), dx)?,
        dparams,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamRole;
    use crate::rng::Rng;

    fn unit_params(c: usize) -> LayerParams<f64> {
        LayerParams::new()
            .with("gamma", Tensor::full([c], 1.0), ParamRole::Learned)
            .unwrap()
            .with("beta", Tensor::zeros([c]), ParamRole::Learned)
            .unwrap()
    }

    #[test]
    fn constant_input_normalizes_to_zero() {
        let x = Tensor::<f64>::full([2, 3, 2, 2], 4.2);
        let st = BatchNormState::new(3, 0.99, 1e-3);
        let (y, _, _) = batchnorm_forward(&x, &unit_params(3), &st, Mode::Train).unwrap();
        assert!(y.max_abs() < 1e-12);
    }

    #[test]
    fn two_values_hand_case() {
        let x = Tensor::<f64>::new([2, 1], vec![1.0, 3.0]).unwrap();
        let st = BatchNormState::new(1, 0.99, 1e-3);
        let (y, _, st2) = batchnorm_forward(&x, &unit_params(1), &st, Mode::Train).unwrap();
        let want = 1.0 / (1.0f64 + 1e-3).sqrt();
        assert!((y.data()[0] + want).abs() < 1e-12);
        assert!((y.data()[1] - want).abs() < 1e-12);
        assert!((want - 0.99950).abs() < 1e-5);
        // moving stats: 0.99·0 + 0.01·2, 0.99·1 + 0.01·1
        assert!((st2.moving_mean.data()[0] - 0.02).abs() < 1e-15);
        assert!((st2.moving_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inference_with_neutral_stats_is_identity() {
        let x = Tensor::<f64>::from_fn([2, 2, 3, 3], |i| i as f64 - 7.0);
        let st = BatchNormState::new(2, 0.99, 0.0);
        let (y, _, st2) = batchnorm_forward(&x, &unit_params(2), &st, Mode::Inference).unwrap();
        assert_eq!(y, x);
        assert_eq!(st2, st);
    }

    #[test]
    fn train_output_statistics() {
        let mut rng = Rng::new(2, 0);
        let x = Tensor::<f64>::from_fn([4, 3, 5, 5], |_| 3.0 + 2.0 * rng.normal());
        let st = BatchNormState::new(3, 0.99, 1e-3);
        let (y, cache, _) = batchnorm_forward(&x, &unit_params(3), &st, Mode::Train).unwrap();
        for ch in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|b| y.outer(b)[ch * 25..(ch + 1) * 25].to_vec())
                .collect();
            let m = vals.iter().sum::<f64>() / vals.len() as f64;
            let v = vals.iter().map(|z| (z - m) * (z - m)).sum::<f64>() / vals.len() as f64;
            let var_in = 1.0 / (cache.inv_std[ch] * cache.inv_std[ch]) - 1e-3;
            assert!(m.abs() < 1e-5);
            assert!((v - var_in / (var_in + 1e-3)).abs() < 1e-3);
        }
    }

    #[test]
    fn scale_free_variant_has_only_beta_grad() {
        let x = Tensor::<f64>::from_fn([2, 2], |i| i as f64);
        let p = LayerParams::new()
            .with("beta", Tensor::zeros([2]), ParamRole::Learned)
            .unwrap();
        let st = BatchNormState::new(2, 0.99, 1e-3);
        let (_, cache, _) = batchnorm_forward(&x, &p, &st, Mode::Train).unwrap();
        let g = batchnorm_backward(&Tensor::full([2, 2], 1.0), &cache).unwrap();
        assert!(g.dparam("gamma").is_none());
        assert_eq!(g.dparam("beta").unwrap().data(), &[2.0, 2.0]);
    }
}
