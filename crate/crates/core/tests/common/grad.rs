//! Finite-difference checks shared by the gradient tests and the acceptance
//! report. Each returns the largest norm-wise relative error it saw.

use super::{numeric_grad, project, random_tensor, rel_error};
use cookstate::graph::{build_mini_inception, LayerGraph, MiniConfig};
use cookstate::layers::*;
use cookstate::rng::Rng;
use cookstate::tensor::Padding;
use cookstate::{Result, Tensor64};

pub const SEEDS: u64 = 20;

fn pick<T: Copy>(rng: &mut Rng, items: &[T]) -> T {
    items[rng.below(items.len() as u64) as usize]
}

fn size(rng: &mut Rng, lo: usize, hi: usize) -> usize {
    lo + rng.below((hi - lo + 1) as u64) as usize
}

fn params(entries: &[(&str, &Tensor64)]) -> LayerParams64 {
    let mut lp = LayerParams64::new();
    for (name, t) in entries {
        lp.insert(name, (*t).clone(), cookstate::layers::ParamRole::Learned)
            .unwrap();
    }
    lp
}

type LayerParams64 = cookstate::layers::LayerParams<f64>;

/// Checks dx and every named parameter gradient against central differences.
fn check(
    seed: u64,
    x: &Tensor64,
    ps: &[(&str, Tensor64)],
    forward: impl Fn(&Tensor64, &[(&str, Tensor64)]) -> Result<Tensor64>,
    analytic: impl Fn(&Tensor64, &[(&str, Tensor64)], &Tensor64) -> Result<(Tensor64, Vec<(&'static str, Tensor64)>)>,
) -> f64 {
    let mut rng = Rng::new(seed, 99);
    let y = forward(x, ps).unwrap();
    let r = random_tensor(&mut rng, y.shape());
    let (dx, dps) = analytic(x, ps, &r).unwrap();
    let num = numeric_grad(x, |x| project(&forward(x, ps).unwrap(), &r));
    let mut worst = rel_error(dx.data(), &num);
    for (k, (name, p)) in ps.iter().enumerate() {
        let num = numeric_grad(p, |p| {
            let mut ps2 = ps.to_vec();
            ps2[k].1 = p.clone();
            project(&forward(x, &ps2).unwrap(), &r)
        });
        let got = dps
            .iter()
            .find(|(n, _)| n == name)
            .unwrap_or_else(|| panic!("no gradient for {name}"));
        worst = worst.max(rel_error(got.1.data(), &num));
    }
    worst
}

fn lp_of(ps: &[(&str, Tensor64)]) -> LayerParams64 {
    params(&ps.iter().map(|(n, t)| (*n, t)).collect::<Vec<_>>())
}

pub fn conv2d() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 1);
        let (n, c, f) = (size(&mut rng, 1, 3), size(&mut rng, 1, 3), size(&mut rng, 1, 3));
        let (kh, kw) = (size(&mut rng, 1, 3), size(&mut rng, 1, 3));
        let (h, w) = (size(&mut rng, kh.max(3), 6), size(&mut rng, kw.max(3), 6));
        let spec = Conv2dSpec::new(
            (size(&mut rng, 1, 2), size(&mut rng, 1, 2)),
            pick(&mut rng, &[Padding::Valid, Padding::Same]),
        );
        let x = random_tensor(&mut rng, &[n, c, h, w]);
        let mut ps = vec![("kernel", random_tensor(&mut rng, &[f, c, kh, kw]))];
        if rng.bernoulli(0.5) {
            ps.push(("bias", random_tensor(&mut rng, &[f])));
        }
        worst = worst.max(check(
            seed,
            &x,
            &ps,
            |x, ps| Ok(conv2d_forward(x, &lp_of(ps), spec)?.0),
            |x, ps, r| {
                let (_, cache) = conv2d_forward(x, &lp_of(ps), spec)?;
                let b = conv2d_backward(r, &cache)?;
                Ok((b.dx, b.dparams))
            },
        ));
    }
    worst
}

pub fn batchnorm(mode: Mode) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 2);
        let (n, c) = (size(&mut rng, 2, 4), size(&mut rng, 1, 3));
        let shape = if rng.bernoulli(0.5) {
            vec![n, c, size(&mut rng, 1, 4), size(&mut rng, 1, 4)]
        } else {
            vec![n, c]
        };
        let x = random_tensor(&mut rng, &shape);
        let mut ps = Vec::new();
        if rng.bernoulli(0.7) {
            ps.push(("gamma", random_tensor(&mut rng, &[c])));
        }
        if rng.bernoulli(0.7) {
            ps.push(("beta", random_tensor(&mut rng, &[c])));
        }
        let mut state = BatchNormState::new(c, 0.99, 1e-3);
        state.moving_mean = random_tensor(&mut rng, &[c]);
        state.moving_var = Tensor64::from_fn([c], |_| 0.5 + rng.uniform());
        worst = worst.max(check(
            seed,
            &x,
            &ps,
            |x, ps| Ok(batchnorm_forward(x, &lp_of(ps), &state, mode)?.0),
            |x, ps, r| {
                let (_, cache, _) = batchnorm_forward(x, &lp_of(ps), &state, mode)?;
                let b = batchnorm_backward(r, &cache)?;
                Ok((b.dx, b.dparams))
            },
        ));
    }
    worst
}

pub fn dense() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 3);
        let (n, fin, units) = (size(&mut rng, 1, 4), size(&mut rng, 1, 6), size(&mut rng, 1, 5));
        let x = random_tensor(&mut rng, &[n, fin]);
        let mut ps = vec![("kernel", random_tensor(&mut rng, &[fin, units]))];
        if rng.bernoulli(0.5) {
            ps.push(("bias", random_tensor(&mut rng, &[units])));
        }
        worst = worst.max(check(
            seed,
            &x,
            &ps,
            |x, ps| Ok(dense_forward(x, &lp_of(ps))?.0),
            |x, ps, r| {
                let (_, cache) = dense_forward(x, &lp_of(ps))?;
                let b = dense_backward(r, &cache)?;
                Ok((b.dx, b.dparams))
            },
        ));
    }
    worst
}

fn pool_spec(rng: &mut Rng) -> (PoolSpec, usize, usize) {
    let (kh, kw) = (size(rng, 1, 3), size(rng, 1, 3));
    let spec = PoolSpec::new(
        (kh, kw),
        (size(rng, 1, 2), size(rng, 1, 2)),
        pick(rng, &[Padding::Valid, Padding::Same]),
    );
    (spec, size(rng, kh.max(3), 6), size(rng, kw.max(3), 6))
}

pub fn max_pool() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 4);
        let (spec, h, w) = pool_spec(&mut rng);
        let shape = [size(&mut rng, 1, 3), size(&mut rng, 1, 3), h, w];
        let x = random_tensor(&mut rng, &shape);
        worst = worst.max(check(
            seed,
            &x,
            &[],
            |x, _| Ok(maxpool_forward(x, spec)?.0),
            |x, _, r| {
                let (_, cache) = maxpool_forward(x, spec)?;
                Ok((maxpool_backward(r, &cache)?, vec![]))
            },
        ));
    }
    worst
}

pub fn avg_pool() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 5);
        let (spec, h, w) = pool_spec(&mut rng);
        let shape = [size(&mut rng, 1, 3), size(&mut rng, 1, 3), h, w];
        let x = random_tensor(&mut rng, &shape);
        worst = worst.max(check(
            seed,
            &x,
            &[],
            |x, _| Ok(avgpool_forward(x, spec)?.0),
            |x, _, r| {
                let (_, cache) = avgpool_forward(x, spec)?;
                Ok((avgpool_backward(r, &cache)?, vec![]))
            },
        ));
    }
    worst
}

fn nchw(rng: &mut Rng) -> [usize; 4] {
    [size(rng, 1, 3), size(rng, 1, 4), size(rng, 1, 4), size(rng, 1, 4)]
}

pub fn global_pool() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 6);
        let shape = nchw(&mut rng);
        let x = random_tensor(&mut rng, &shape);
        worst = worst.max(check(
            seed,
            &x,
            &[],
            |x, _| global_average_pool(x),
            |x, _, r| Ok((global_average_pool_backward(r, x.shape())?, vec![])),
        ));
    }
    worst
}

pub fn relu() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 9);
        let shape = nchw(&mut rng);
        let x = random_tensor(&mut rng, &shape);
        worst = worst.max(check(
            seed,
            &x,
            &[],
            |x, _| Ok(relu_forward(x).0),
            |x, _, r| Ok((relu_backward(r, &relu_forward(x).1)?, vec![])),
        ));
    }
    worst
}

pub fn concat() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 10);
        let shape = nchw(&mut rng);
        let x = random_tensor(&mut rng, &shape);
        let mut other_shape = shape;
        other_shape[1] = size(&mut rng, 1, 3);
        let other = random_tensor(&mut rng, &other_shape);
        // the second input enters as a fixed parameter-like operand
        worst = worst.max(check(
            seed,
            &x,
            &[("other", other)],
            |x, ps| Ok(concat_forward(&[x, &ps[0].1])?.0),
            |x, ps, r| {
                let (_, cache) = concat_forward(&[x, &ps[0].1])?;
                let mut parts = concat_backward(r, &cache)?;
                let d_other = parts.pop().unwrap();
                Ok((parts.pop().unwrap(), vec![("other", d_other)]))
            },
        ));
    }
    worst
}

pub fn dropout() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 7);
        let shape = [size(&mut rng, 1, 4), size(&mut rng, 1, 6)];
        let x = random_tensor(&mut rng, &shape);
        let cfg = DropoutConfig {
            rate: pick(&mut rng, &[0.1, 0.5, 0.8]),
            mode: Mode::Train,
            seed,
            stream: 3,
        };
        worst = worst.max(check(
            seed,
            &x,
            &[],
            |x, _| Ok(dropout_forward(x, &cfg)?.0),
            |x, _, r| {
                let (_, mask) = dropout_forward(x, &cfg)?;
                Ok((dropout_backward(r, mask.as_ref())?, vec![]))
            },
        ));
    }
    worst
}

pub fn softmax_ce() -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..SEEDS {
        let mut rng = Rng::new(seed, 8);
        let (n, k) = (size(&mut rng, 1, 5), size(&mut rng, 2, 7));
        let logits = random_tensor(&mut rng, &[n, k]).scale(3.0);
        let labels: Vec<usize> = (0..n).map(|_| rng.below(k as u64) as usize).collect();
        let (_, grad) = softmax_cross_entropy(&logits, Targets::Indices(&labels)).unwrap();
        let num = numeric_grad(&logits, |l| {
            softmax_cross_entropy(l, Targets::Indices(&labels)).unwrap().0
        });
        worst = worst.max(rel_error(grad.data(), &num));
    }
    worst
}

/// Every per-layer check with its name.
pub fn all_layers() -> Vec<(&'static str, f64)> {
    vec![
        ("conv2d", conv2d()),
        ("batchnorm/train", batchnorm(Mode::Train)),
        ("batchnorm/inference", batchnorm(Mode::Inference)),
        ("dense", dense()),
        ("maxpool", max_pool()),
        ("avgpool", avg_pool()),
        ("global_average_pool", global_pool()),
        ("relu", relu()),
        ("concat", concat()),
        ("dropout", dropout()),
        ("softmax_cross_entropy", softmax_ce()),
    ]
}

/// Loss gradient of the 2-block mini Inception on 4 samples, probed at up to
/// 6 coordinates of every trainable tensor. Returns (error, coordinates).
pub fn mini_inception() -> (f64, usize) {
    let cfg = MiniConfig::default();
    let mut g = LayerGraph::<f64>::init(build_mini_inception(&cfg).unwrap(), 11).unwrap();
    let mut rng = Rng::new(12, 0);
    // perturb the zero-initialized shifts so every parameter has a generic gradient
    for (_, p) in g.named_params_mut() {
        if p.is_trainable() {
            for v in p.value.data_mut() {
                *v += 0.1 * rng.normal();
            }
        }
    }
    let [c, h, w] = cfg.input_shape;
    let x = random_tensor(&mut rng, &[4, c, h, w]);
    let labels = [0, 3, 5, 6];
    let dropout_seed = 77;
    let (_, grads, _) = g.loss_and_grads(&x, &labels, dropout_seed).unwrap();

    let names: Vec<String> = g
        .named_params()
        .filter(|(_, p)| p.is_trainable())
        .map(|(n, _)| n)
        .collect();
    assert_eq!(grads.len(), names.len());
    let (mut analytic, mut numeric) = (Vec::new(), Vec::new());
    let step = 1e-6;
    for name in &names {
        let len = g.named_params().find(|(n, _)| n == name).unwrap().1.value.len();
        let picks: Vec<usize> = if len <= 6 {
            (0..len).collect()
        } else {
            (0..6).map(|_| rng.below(len as u64) as usize).collect()
        };
        for i in picks {
            let nudge = |g: &mut LayerGraph<f64>, delta: f64| {
                for (n, p) in g.named_params_mut() {
                    if &n == name {
                        p.value.data_mut()[i] += delta;
                    }
                }
            };
            nudge(&mut g, step);
            let up = g.loss_and_grads(&x, &labels, dropout_seed).unwrap().0;
            nudge(&mut g, -2.0 * step);
            let down = g.loss_and_grads(&x, &labels, dropout_seed).unwrap().0;
            nudge(&mut g, step);
            numeric.push((up - down) / (2.0 * step));
            analytic.push(grads.get(name).unwrap().data()[i]);
        }
    }
    (rel_error(&analytic, &numeric), analytic.len())
}
