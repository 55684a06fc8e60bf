use super::topology::{FreezeSpec, NodeKind, ParamCount, Topology};
use crate::error::{bail, Result};
use crate::layers::*;
use crate::rng::{derive_seed, Rng};
use crate::scalar::Scalar;
use crate::sstf::Sstf;
use crate::tensor::Tensor;

/// Truncated-normal draws are rescaled by this so the kept distribution
/// (|z| ≤ 2) has unit standard deviation.
const TRUNC_STD: f64 = 0.879_625_661_034_239_8;

/// Standard deviation of the output classifier's weights. Small enough that
/// a fresh model predicts close to uniformly.
pub const CLASSIFIER_STD: f64 = 0.01;

/// Batch-norm statistics to commit after a training step, by node.
type BnUpdates<T> = Vec<(usize, BatchNormState<T>)>;
type NodeOutput<T> = (Tensor<T>, Cache<T>, Option<BatchNormState<T>>);
type RawTrace<T> = (Tensor<T>, Vec<Cache<T>>, BnUpdates<T>);

/// A topology plus parameter values.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerGraph<T> {
    topo: Topology,
    params: Vec<LayerParams<T>>,
}

/// Parameter gradients keyed `"<node>/<param>"`, in node order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients<T> {
    entries: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, name: String, grad: Tensor<T>) {
        self.entries.push((name, grad));
    }
}

enum Cache<T> {
    None,
    Conv(Conv2dCache<T>),
    Bn(BatchNormCache<T>),
    Relu(ReluCache),
    Max(MaxPoolCache),
    Avg(AvgPoolCache),
    Concat(ConcatCache),
    Gap(Vec<usize>),
    Dense(DenseCache<T>),
    Dropout(Option<Tensor<T>>),
}

/// Everything a training-mode forward pass leaves behind.
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
    /// Pre-softmax scores.
    pub logits: Tensor<T>,
    /// Batch-norm moving statistics to commit after the step.
    pub bn_updates: Vec<(usize, BatchNormState<T>)>,
}

impl<T: Scalar> LayerGraph<T> {
    /// Allocates and initializes every parameter deterministically from `seed`.
    ///
    /// Convolutions and hidden dense layers use a He fan-in truncated normal;
    /// the output classifier uses `CLASSIFIER_STD`; biases and shifts start
    /// at 0, scales at 1, moving statistics at mean 0 / variance 1.
    pub fn init(topo: Topology, seed: u64) -> Result<Self> {
        let logits = topo.logits_node();
        let mut params = Vec::with_capacity(topo.len());
        for i in 0..topo.len() {
            let mut lp = LayerParams::new();
            for (k, ps) in topo.param_shapes(i).into_iter().enumerate() {
                let value = match ps.name {
                    "kernel" => {
                        let fan_in: usize = ps.shape[1..].iter().product::<usize>();
                        let fan_in = match topo.node(i).kind {
                            NodeKind::Dense { .. } => ps.shape[0],
                            _ => fan_in,
                        };
                        let std = if i == logits {
                            CLASSIFIER_STD
                        } else {
                            (2.0 / fan_in as f64).sqrt()
                        };
                        let mut rng = Rng::new(derive_seed(seed, &[i as u64, k as u64]), 0);
                        Tensor::from_fn(ps.shape.clone(), |_| T::of(rng.truncated_normal() * std / TRUNC_STD))
                    }
                    "gamma" | "moving_variance" => Tensor::full(ps.shape.clone(), T::one()),
                    _ => Tensor::zeros(ps.shape.clone()),
                };
                lp.insert(ps.name, value, ps.role)?;
            }
            lp.set_trainable(topo.node(i).trainable);
            params.push(lp);
        }
        Ok(LayerGraph { topo, params })
    }

    pub fn topology(&self) -> &Topology {
        &self.topo
    }

    pub fn params(&self, node: usize) -> &LayerParams<T> {
        &self.params[node]
    }

    pub fn count_params(&self) -> ParamCount {
        self.topo.count_params()
    }

    pub fn apply_freeze(&mut self, spec: &FreezeSpec) -> Result<Option<usize>> {
        let b = self.topo.apply_freeze(spec)?;
        for (i, lp) in self.params.iter_mut().enumerate() {
            lp.set_trainable(self.topo.node(i).trainable);
        }
        Ok(b)
    }

    /// Every parameter as `("<node>/<param>", param)`, in node order.
    pub fn named_params(&self) -> impl Iterator<Item = (String, &Param<T>)> {
        self.topo
            .nodes()
            .iter()
            .zip(&self.params)
            .flat_map(|(n, lp)| lp.iter().map(move |p| (format!("{}/{}", n.name, p.name), p)))
    }

    pub fn named_params_mut(&mut self) -> impl Iterator<Item = (String, &mut Param<T>)> {
        self.topo
            .nodes()
            .iter()
            .zip(&mut self.params)
            .flat_map(|(n, lp)| lp.iter_mut().map(move |p| (format!("{}/{}", n.name, p.name), p)))
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        if x.rank() != self.topo.input_shape().len() + 1 || &x.shape()[1..] != self.topo.input_shape() {
            bail!(
                Dimension,
                "input {:?} does not match model input N×{:?}",
                x.shape(),
                self.topo.input_shape()
            );
        }
        Ok(())
    }

    fn bn_state(&self, i: usize) -> Result<BatchNormState<T>> {
        let NodeKind::BatchNorm { momentum, epsilon, .. } = self.topo.node(i).kind else {
            bail!(Config, "node {} is not a batch norm", i);
        };
        let lp = &self.params[i];
        Ok(BatchNormState {
            moving_mean: lp.require("moving_mean")?.clone(),
            moving_var: lp.require("moving_variance")?.clone(),
            momentum: T::of(momentum),
            epsilon: T::of(epsilon),
        })
    }

    /// Runs node `i` on its inputs. Frozen batch-norm layers always use their
    /// moving statistics.
    fn run_node(&self, i: usize, inputs: &[&Tensor<T>], mode: Mode, dropout_seed: u64) -> Result<NodeOutput<T>> {
        let node = self.topo.node(i);
        let lp = &self.params[i];
        let x = inputs[0];
        Ok(match &node.kind {
            NodeKind::Input => (x.clone(), Cache::None, None),
            NodeKind::Conv2d { stride, padding, .. } => {
                let (y, c) = conv2d_forward(x, lp, Conv2dSpec::new(*stride, *padding))?;
                (y, Cache::Conv(c), None)
            }
            NodeKind::BatchNorm { .. } => {
                let bn_mode = if node.trainable { mode } else { Mode::Inference };
                let (y, c, s) = batchnorm_forward(x, lp, &self.bn_state(i)?, bn_mode)?;
                let upd = (bn_mode == Mode::Train).then_some(s);
                (y, Cache::Bn(c), upd)
            }
            NodeKind::Activation { function } => match function {
                Activation::Relu => {
                    let (y, c) = relu_forward(x);
                    (y, Cache::Relu(c), None)
                }
                Activation::Linear => (x.clone(), Cache::None, None),
            },
            NodeKind::MaxPool { spec } => {
                let (y, c) = maxpool_forward(x, *spec)?;
                (y, Cache::Max(c), None)
            }
            NodeKind::AvgPool { spec } => {
                let (y, c) = avgpool_forward(x, *spec)?;
                (y, Cache::Avg(c), None)
            }
            NodeKind::Concat => {
                let (y, c) = concat_forward(inputs)?;
                (y, Cache::Concat(c), None)
            }
            NodeKind::GlobalAvgPool => (global_average_pool(x)?, Cache::Gap(x.shape().to_vec()), None),
            NodeKind::Dense { .. } => {
                let (y, c) = dense_forward(x, lp)?;
                (y, Cache::Dense(c), None)
            }
            NodeKind::Dropout { rate } => {
                let cfg = DropoutConfig {
                    rate: *rate,
                    mode,
                    seed: dropout_seed,
                    stream: i as u64,
                };
                let (y, mask) = dropout_forward(x, &cfg)?;
                (y, Cache::Dropout(mask), None)
            }
            NodeKind::Softmax => (softmax(x)?, Cache::None, None),
        })
    }

    /// Last consumer of each node's output (itself if unused).
    fn last_use(&self) -> Vec<usize> {
        let mut last: Vec<usize> = (0..self.topo.len()).collect();
        for (i, n) in self.topo.nodes().iter().enumerate() {
            for &j in &n.inputs {
                last[j] = last[j].max(i);
            }
        }
        last
    }

    fn forward_impl(&self, x: &Tensor<T>, mode: Mode, dropout_seed: u64, keep: bool) -> Result<RawTrace<T>> {
        self.check_input(x)?;
        let n = self.topo.len();
        let stop = self.topo.logits_node();
        let last = self.last_use();
        let mut outs: Vec<Option<Tensor<T>>> = (0..n).map(|_| None).collect();
        let mut caches: Vec<Cache<T>> = Vec::with_capacity(if keep { n } else { 0 });
        let mut bn_updates = Vec::new();
        for i in 0..=stop {
            let node = self.topo.node(i);
            let (y, cache, upd) = if i == 0 {
                (x.clone(), Cache::None, None)
            } else {
                let ins: Vec<&Tensor<T>> = node
                    .inputs
                    .iter()
                    .map(|&j| outs[j].as_ref().expect("input computed"))
                    .collect();
                self.run_node(i, &ins, mode, dropout_seed)?
            };
            if !y.is_finite() {
                bail!(
                    Numeric,
                    "non-finite output at node {:?} ({})",
                    node.name,
                    node.kind.label()
                );
            }
            if keep {
                caches.push(cache);
            }
            if let Some(s) = upd {
                bn_updates.push((i, s));
            }
            outs[i] = Some(y);
            for &j in &node.inputs {
                if last[j] == i && j != stop {
                    outs[j] = None;
                }
            }
        }
        let logits = outs[stop].take().expect("logits computed");
        Ok((logits, caches, bn_updates))
    }

    /// Training-mode (or `mode`) forward pass keeping what backward needs.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, dropout_seed: u64) -> Result<Trace<T>> {
        let (logits, caches, bn_updates) = self.forward_impl(x, mode, dropout_seed, true)?;
        Ok(Trace {
            caches,
            logits,
            bn_updates,
        })
    }

    /// Inference-mode logits; intermediates are freed as soon as possible.
    pub fn logits(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(self.forward_impl(x, Mode::Inference, 0, false)?.0)
    }

    /// Inference-mode class probabilities.
    pub fn predict(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        softmax(&self.logits(x)?)
    }

    /// Backpropagates `dlogits` through the trace. Gradients are returned
    /// only for trainable parameters; propagation stops below the first
    /// trainable node.
    pub fn backward(&self, trace: &Trace<T>, dlogits: &Tensor<T>) -> Result<Gradients<T>> {
        let stop = self.topo.logits_node();
        if trace.caches.len() != stop + 1 {
            bail!(Config, "trace was not recorded for backward");
        }
        trace.logits.expect_same_shape(dlogits)?;
        let first = (0..=stop).find(|&i| self.params[i].iter().any(|p| p.is_trainable()));
        let Some(first) = first else {
            return Ok(Gradients::default());
        };
        let mut grads: Vec<Option<Tensor<T>>> = (0..=stop).map(|_| None).collect();
        grads[stop] = Some(dlogits.clone());
        let mut per_node: Vec<Vec<(String, Tensor<T>)>> = (0..=stop).map(|_| Vec::new()).collect();
        for i in (first..=stop).rev() {
            let Some(dy) = grads[i].take() else { continue };
            let node = self.topo.node(i);
            let mut dparams = Vec::new();
            let dxs: Vec<Tensor<T>> = match &trace.caches[i] {
                Cache::None => match node.kind {
                    NodeKind::Input => vec![],
                    _ => vec![dy],
                },
                Cache::Conv(c) => {
                    let b = conv2d_backward(&dy, c)?;
                    dparams = b.dparams;
                    vec![b.dx]
                }
                Cache::Bn(c) => {
                    let b = batchnorm_backward(&dy, c)?;
                    dparams = b.dparams;
                    vec![b.dx]
                }
                Cache::Dense(c) => {
                    let b = dense_backward(&dy, c)?;
                    dparams = b.dparams;
                    vec![b.dx]
                }
                Cache::Relu(c) => vec![relu_backward(&dy, c)?],
                Cache::Max(c) => vec![maxpool_backward(&dy, c)?],
                Cache::Avg(c) => vec![avgpool_backward(&dy, c)?],
                Cache::Concat(c) => concat_backward(&dy, c)?,
                Cache::Gap(shape) => vec![global_average_pool_backward(&dy, shape)?],
                Cache::Dropout(mask) => vec![dropout_backward(&dy, mask.as_ref())?],
            };
            for (name, g) in dparams {
                if self.params[i].iter().any(|p| p.name == name && p.is_trainable()) {
                    if !g.is_finite() {
                        bail!(Numeric, "non-finite gradient for {}/{}", node.name, name);
                    }
                    per_node[i].push((format!("{}/{}", node.name, name), g));
                }
            }
            if i == first {
                continue;
            }
            for (&j, dx) in node.inputs.iter().zip(dxs) {
                match &mut grads[j] {
                    Some(acc) => acc.add_assign(&dx)?,
                    slot => *slot = Some(dx),
                }
            }
        }
        let mut out = Gradients::default();
        for (name, g) in per_node.into_iter().flatten() {
            out.push(name, g);
        }
        Ok(out)
    }

    /// Mean cross-entropy, its parameter gradients and pending batch-norm
    /// updates for one training batch.
    pub fn loss_and_grads(
        &self,
        x: &Tensor<T>,
        labels: &[usize],
        dropout_seed: u64,
    ) -> Result<(T, Gradients<T>, BnUpdates<T>)> {
        let trace = self.forward(x, Mode::Train, dropout_seed)?;
        let (loss, dlogits) = softmax_cross_entropy(&trace.logits, Targets::Indices(labels))?;
        if !loss.is_finite() {
            bail!(Numeric, "non-finite training loss");
        }
        let grads = self.backward(&trace, &dlogits)?;
        Ok((loss, grads, trace.bn_updates))
    }

    /// Commits moving statistics produced by a training-mode forward pass.
    pub fn apply_bn_updates(&mut self, updates: Vec<(usize, BatchNormState<T>)>) -> Result<()> {
        for (i, s) in updates {
            let lp = &mut self.params[i];
            for (name, v) in [("moving_mean", s.moving_mean), ("moving_variance", s.moving_var)] {
                match lp.param_mut(name) {
                    Some(p) => p.value = v,
                    None => bail!(Config, "node {} has no {}", i, name),
                }
            }
        }
        Ok(())
    }

    /// All parameters keyed `"<node>/<param>"`.
    pub fn export_weights(&self) -> Result<Sstf> {
        let mut s = Sstf::new();
        for (name, p) in self.named_params() {
            s.push(name, &p.value)?;
        }
        Ok(s)
    }

    /// Loads parameters by name. Strict mode requires every graph parameter
    /// to be present; by-name mode loads the matching subset and returns the
    /// names of graph parameters left untouched. A matched name with the
    /// wrong shape is always an import error.
    pub fn import_weights(&mut self, container: &Sstf, strict: bool) -> Result<Vec<String>> {
        let mut staged = Vec::new();
        let mut unmatched = Vec::new();
        for (name, p) in self.named_params() {
            match container.get(&name) {
                Some(t) if t.shape() != p.value.shape() => bail!(
                    Import,
                    "tensor {:?} has shape {:?}, model expects {:?}",
                    name,
                    t.shape(),
                    p.value.shape()
                ),
                Some(t) => staged.push((name, t.to::<T>())),
                None if strict => bail!(Import, "tensor {:?} missing from container", name),
                None => unmatched.push(name),
            }
        }
        let mut staged = staged.into_iter().peekable();
        for (name, p) in self.named_params_mut() {
            if staged.peek().is_some_and(|(n, _)| *n == name) {
                p.value = staged.next().expect("peeked").1;
            }
        }
        Ok(unmatched)
    }
}
