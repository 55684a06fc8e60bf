//! SGD (optionally Nesterov), RMSprop and Adam, with learning-rate schedules.
//!
//! Updates, with `t` the number of steps already taken:
//!
//! * SGD: `v ← μv − η·g`; plain `w ← w + v`, Nesterov `w ← w + μv − η·g`,
//!   where `η` comes from the epoch schedule.
//! * RMSprop: `s ← ρs + (1−ρ)g²`, `w ← w − η_t·g/(√s + ε)`.
//! * Adam: `m ← β₁m + (1−β₁)g`, `v ← β₂v + (1−β₂)g²`,
//!   `w ← w − η_t·m̂/(√v̂ + ε)` with `m̂ = m/(1−β₁^{t+1})`, `v̂ = v/(1−β₂^{t+1})`.
//!
//! For RMSprop and Adam `η_t = η·decay^t` when `use_decay` is set.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::graph::{Gradients, LayerGraph};
use crate::layers::Param;
use crate::scalar::Scalar;
use crate::sstf::Sstf;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScheduleKind {
    Constant,
    StepDecay,
    /// `base · factor^epoch`.
    MultiplicativeDecay,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub kind: ScheduleKind,
    pub base_lr: f64,
    pub drop_factor: f64,
    pub drop_every: usize,
}

impl ScheduleSpec {
    pub fn constant(base_lr: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::Constant,
            base_lr,
            drop_factor: 1.0,
            drop_every: 1,
        }
    }

    /// Halves the rate every 10 epochs.
    pub fn step_decay(base_lr: f64) -> Self {
        ScheduleSpec {
            kind: ScheduleKind::StepDecay,
            base_lr,
            drop_factor: 0.5,
            drop_every: 10,
        }
    }

    // negated so NaN is rejected too
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        if !(self.base_lr > 0.0) || !(self.drop_factor > 0.0 && self.drop_factor <= 1.0) || self.drop_every == 0 {
            bail!(
                Config,
                "schedule needs base_lr > 0, drop_factor in (0, 1] and drop_every ≥ 1, got {:?}",
                self
            );
        }
        Ok(())
    }
}

pub fn schedule_lr(spec: &ScheduleSpec, epoch: usize) -> f64 {
    match spec.kind {
        ScheduleKind::Constant => spec.base_lr,
        ScheduleKind::StepDecay => spec.base_lr * spec.drop_factor.powi((epoch / spec.drop_every) as i32),
        ScheduleKind::MultiplicativeDecay => spec.base_lr * spec.drop_factor.powi(epoch as i32),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SgdConfig {
    pub momentum: f64,
    pub nesterov: bool,
    /// Its `base_lr` is the learning rate.
    pub schedule: ScheduleSpec,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            momentum: 0.6,
            nesterov: true,
            schedule: ScheduleSpec::step_decay(0.001),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    pub lr: f64,
    pub rho: f64,
    pub decay: f64,
    pub epsilon: f64,
    pub use_decay: bool,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        RmspropConfig {
            lr: 0.001,
            rho: 0.9,
            decay: 0.999,
            epsilon: 1e-7,
            use_decay: true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub b1: f64,
    pub b2: f64,
    pub epsilon: f64,
    pub decay: f64,
    pub use_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.001,
            b1: 0.9,
            b2: 0.999,
            epsilon: 1e-8,
            decay: 0.999,
            use_decay: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerConfig {
    Sgd(SgdConfig),
    Rmsprop(RmspropConfig),
    Adam(AdamConfig),
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::Sgd(SgdConfig::default())
    }
}

impl OptimizerConfig {
    pub fn name(&self) -> &'static str {
        match self {
            OptimizerConfig::Sgd(_) => "sgd",
            OptimizerConfig::Rmsprop(_) => "rmsprop",
            OptimizerConfig::Adam(_) => "adam",
        }
    }

    /// Published default settings for `"sgd"`, `"rmsprop"` or `"adam"`.
    pub fn by_name(name: &str) -> Result<Self> {
        Ok(match name.to_ascii_lowercase().as_str() {
            "sgd" => OptimizerConfig::Sgd(SgdConfig::default()),
            "rmsprop" => OptimizerConfig::Rmsprop(RmspropConfig::default()),
            "adam" => OptimizerConfig::Adam(AdamConfig::default()),
            other => bail!(Config, "unknown optimizer {:?}", other),
        })
    }

    fn slots(&self) -> usize {
        match self {
            OptimizerConfig::Adam(_) => 2,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit_open = |v: f64| v > 0.0 && v < 1.0;
        let ok = match self {
            OptimizerConfig::Sgd(c) => {
                c.schedule.validate()?;
                (0.0..1.0).contains(&c.momentum)
            }
            OptimizerConfig::Rmsprop(c) => {
                c.lr > 0.0 && unit_open(c.rho) && c.epsilon > 0.0 && c.decay > 0.0 && c.decay <= 1.0
            }
            OptimizerConfig::Adam(c) => {
                c.lr > 0.0 && unit_open(c.b1) && unit_open(c.b2) && c.epsilon > 0.0 && c.decay > 0.0 && c.decay <= 1.0
            }
        };
        if !ok {
            bail!(Config, "invalid optimizer hyperparameters: {:?}", self);
        }
        Ok(())
    }

    /// Learning rate used by the next step.
    pub fn lr(&self, epoch: usize, step: u64) -> f64 {
        match self {
            OptimizerConfig::Sgd(c) => schedule_lr(&c.schedule, epoch),
            OptimizerConfig::Rmsprop(c) if c.use_decay => c.lr * c.decay.powf(step as f64),
            OptimizerConfig::Rmsprop(c) => c.lr,
            OptimizerConfig::Adam(c) if c.use_decay => c.lr * c.decay.powf(step as f64),
            OptimizerConfig::Adam(c) => c.lr,
        }
    }
}

/// SGD slot update on one tensor's data.
pub fn sgd_update<T: Scalar>(w: &mut [T], g: &[T], v: &mut [T], lr: f64, momentum: f64, nesterov: bool) {
    let (lr, mu) = (T::of(lr), T::of(momentum));
    for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = mu * *v - lr * g;
        if nesterov {
            *w += mu * *v - lr * g;
        } else {
            *w += *v;
        }
    }
}

pub fn rmsprop_update<T: Scalar>(w: &mut [T], g: &[T], s: &mut [T], lr: f64, rho: f64, epsilon: f64) {
    let (lr, rho, eps) = (T::of(lr), T::of(rho), T::of(epsilon));
    for ((w, &g), s) in w.iter_mut().zip(g).zip(s.iter_mut()) {
        *s = rho * *s + (T::one() - rho) * g * g;
        *w -= lr * g / (s.sqrt() + eps);
    }
}

/// `t` is the 1-based index of this step.
#[allow(clippy::too_many_arguments)]
pub fn adam_update<T: Scalar>(
    w: &mut [T],
    g: &[T],
    m: &mut [T],
    v: &mut [T],
    lr: f64,
    b1: f64,
    b2: f64,
    epsilon: f64,
    t: u64,
) {
    let c1 = T::of(1.0 - b1.powf(t as f64));
    let c2 = T::of(1.0 - b2.powf(t as f64));
    let (lr, b1, b2, eps) = (T::of(lr), T::of(b1), T::of(b2), T::of(epsilon));
    for (((w, &g), m), v) in w.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
        *m = b1 * *m + (T::one() - b1) * g;
        *v = b2 * *v + (T::one() - b2) * g * g;
        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
    }
}

/// Anything holding named parameters an optimizer can update.
pub trait ParamStore<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>) -> Result<()>) -> Result<()>;
}

impl<T: Scalar> ParamStore<T> for LayerGraph<T> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>) -> Result<()>) -> Result<()> {
        for (name, p) in self.named_params_mut() {
            f(&name, p)?;
        }
        Ok(())
    }
}

impl<T: Scalar> ParamStore<T> for Vec<Param<T>> {
    fn visit_params(&mut self, f: &mut dyn FnMut(&str, &mut Param<T>) -> Result<()>) -> Result<()> {
        for p in self.iter_mut() {
            let name = p.name.clone();
            f(&name, p)?;
        }
        Ok(())
    }
}

/// Slot buffers per parameter plus the global step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct OptimizerState<T> {
    pub step: u64,
    slots: BTreeMap<String, Vec<Tensor<T>>>,
}

impl<T: Scalar> OptimizerState<T> {
    pub fn new() -> Self {
        OptimizerState {
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    pub fn slot(&self, param: &str, k: usize) -> Option<&Tensor<T>> {
        self.slots.get(param).and_then(|s| s.get(k))
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.is_empty()
    }

    pub fn to_sstf(&self) -> Result<Sstf> {
        let mut s = Sstf::new();
        let lo = (self.step & 0xffff_ffff) as f64;
        let hi = (self.step >> 32) as f64;
        s.push("optimizer/step", &Tensor::<f64>::new([2], vec![lo, hi])?)?;
        for (name, slots) in &self.slots {
            for (k, t) in slots.iter().enumerate() {
                s.push(format!("slot{k}/{name}"), t)?;
            }
        }
        Ok(s)
    }

    pub fn from_sstf(s: &Sstf) -> Result<Self> {
        let step = s.tensor::<f64>("optimizer/step")?;
        let &[lo, hi] = step.data() else {
            bail!(Import, "optimizer/step must hold two words");
        };
        let mut slots: BTreeMap<String, Vec<Tensor<T>>> = BTreeMap::new();
        for (name, t) in s.records() {
            let Some((k, param)) = name.strip_prefix("slot").and_then(|r| r.split_once('/')) else {
                continue;
            };
            let k: usize = k
                .parse()
                .map_err(|_| crate::Error::Import(format!("bad slot record {name:?}")))?;
            let v = slots.entry(param.to_string()).or_default();
            if v.len() != k {
                bail!(Import, "slot records for {:?} out of order", param);
            }
            v.push(t.to::<T>());
        }
        Ok(OptimizerState {
            step: lo as u64 | ((hi as u64) << 32),
            slots,
        })
    }
}

/// Applies one update to every trainable parameter that has a gradient.
///
/// All gradients are checked first, so a non-finite or misshapen gradient
/// aborts the step with nothing modified. Frozen parameters and their slots
/// are left untouched.
pub fn step<T: Scalar>(
    config: &OptimizerConfig,
    state: &mut OptimizerState<T>,
    params: &mut dyn ParamStore<T>,
    grads: &Gradients<T>,
    epoch: usize,
) -> Result<()> {
    params.visit_params(&mut |name, p| {
        if !p.is_trainable() {
            return Ok(());
        }
        if let Some(g) = grads.get(name) {
            if g.shape() != p.value.shape() {
                bail!(
                    Dimension,
                    "gradient for {:?} has shape {:?}, parameter {:?}",
                    name,
                    g.shape(),
                    p.value.shape()
                );
            }
            if let Some(bad) = g.data().iter().position(|v| !v.is_finite()) {
                bail!(Numeric, "non-finite gradient for {:?} at element {}", name, bad);
            }
        }
        Ok(())
    })?;
    let lr = config.lr(epoch, state.step);
    let t = state.step + 1;
    let nslots = config.slots();
    params.visit_params(&mut |name, p| {
        if !p.is_trainable() {
            return Ok(());
        }
        let Some(g) = grads.get(name) else {
            return Ok(());
        };
        let slots = state
            .slots
            .entry(name.to_string())
            .or_insert_with(|| (0..nslots).map(|_| Tensor::zeros(p.value.shape().to_vec())).collect());
        let w = p.value.data_mut();
        match (config, slots.as_mut_slice()) {
            (OptimizerConfig::Sgd(c), [v]) => sgd_update(w, g.data(), v.data_mut(), lr, c.momentum, c.nesterov),
            (OptimizerConfig::Rmsprop(c), [s]) => rmsprop_update(w, g.data(), s.data_mut(), lr, c.rho, c.epsilon),
            (OptimizerConfig::Adam(c), [m, v]) => {
                adam_update(w, g.data(), m.data_mut(), v.data_mut(), lr, c.b1, c.b2, c.epsilon, t)
            }
            _ => bail!(
                Config,
                "optimizer state for {:?} does not match {}",
                name,
                config.name()
            ),
        }
        Ok(())
    })?;
    state.step = t;
    Ok(())
}
