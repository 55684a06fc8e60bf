use serde::{Deserialize, Serialize};

use super::topology::{NodeKind, Topology};
use crate::error::{bail, Result};
use crate::layers::{Activation, PoolSpec};
use crate::tensor::Padding;

/// Which batch-norm parameters follow a head convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadNorm {
    None,
    /// Shift only (`beta`), like the backbone.
    Center,
    /// Shift and scale (`beta`, `gamma`).
    CenterScale,
}

/// The classifier appended after the backbone.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HeadConfig {
    pub conv1_filters: usize,
    pub conv2_filters: usize,
    pub kernel: (usize, usize),
    pub padding: Padding,
    pub conv_bias: bool,
    pub norm1: HeadNorm,
    pub norm2: HeadNorm,
    pub activation: Activation,
    /// Width of an extra hidden dense layer before dropout; `None` means the
    /// classifier reads the pooled features directly.
    pub dense_units: Option<usize>,
    pub dropout_rate: f64,
    pub num_classes: usize,
}

impl Default for HeadConfig {
    /// The head as the text describes it: 64 and 32 filters.
    fn default() -> Self {
        HeadConfig {
            conv1_filters: 64,
            conv2_filters: 32,
            kernel: (3, 3),
            padding: Padding::Valid,
            conv_bias: true,
            norm1: HeadNorm::CenterScale,
            norm2: HeadNorm::CenterScale,
            activation: Activation::Relu,
            dense_units: None,
            dropout_rate: 0.5,
            num_classes: 7,
        }
    }
}

impl HeadConfig {
    /// The variant whose parameter counts match the published table exactly
    /// (see `reconcile`): identical to the default except for 16 filters in
    /// the second convolution.
    pub fn reconciled() -> Self {
        HeadConfig {
            conv2_filters: 16,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv1_filters == 0 || self.conv2_filters == 0 || self.num_classes < 2 {
            bail!(Config, "head filters must be positive and classes ≥ 2");
        }
        if self.kernel.0 == 0 || self.kernel.1 == 0 || self.dense_units == Some(0) {
            bail!(Config, "head kernel and dense units must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            bail!(Config, "head dropout rate {} outside [0, 1)", self.dropout_rate);
        }
        Ok(())
    }
}

const BODY_MOMENTUM: f64 = 0.99;
const BODY_EPSILON: f64 = 1e-3;

/// Appends nodes with Keras-style auto-numbered names.
struct Builder {
    t: Topology,
    counters: std::collections::HashMap<&'static str, usize>,
}

impl Builder {
    fn new(input_shape: &[usize]) -> Result<Self> {
        Ok(Builder {
            t: Topology::new("input", input_shape)?,
            counters: Default::default(),
        })
    }

    fn auto(&mut self, base: &'static str) -> String {
        let k = self.counters.entry(base).or_default();
        let name = if *k == 0 {
            base.to_string()
        } else {
            format!("{base}_{k}")
        };
        *k += 1;
        name
    }

    fn add_auto(&mut self, base: &'static str, kind: NodeKind, inputs: &[usize]) -> Result<usize> {
        let name = self.auto(base);
        self.t.add(&name, kind, inputs)
    }

    /// Bias-free conv, shift-only batch norm, ReLU.
    fn conv_bn(
        &mut self,
        x: usize,
        filters: usize,
        kernel: (usize, usize),
        stride: usize,
        padding: Padding,
    ) -> Result<usize> {
        let c = self.add_auto(
            "conv2d",
            NodeKind::Conv2d {
                filters,
                kernel,
                stride: (stride, stride),
                padding,
                use_bias: false,
            },
            &[x],
        )?;
        let b = self.add_auto(
            "batch_normalization",
            NodeKind::BatchNorm {
                center: true,
                scale: false,
                momentum: BODY_MOMENTUM,
                epsilon: BODY_EPSILON,
            },
            &[c],
        )?;
        self.add_auto(
            "activation",
            NodeKind::Activation {
                function: Activation::Relu,
            },
            &[b],
        )
    }

    fn same(&mut self, x: usize, filters: usize, kh: usize, kw: usize) -> Result<usize> {
        self.conv_bn(x, filters, (kh, kw), 1, Padding::Same)
    }

    fn max_pool(&mut self, x: usize, window: usize, stride: usize, padding: Padding) -> Result<usize> {
        let spec = PoolSpec::new((window, window), (stride, stride), padding);
        self.add_auto("max_pooling2d", NodeKind::MaxPool { spec }, &[x])
    }

    fn avg_pool_same(&mut self, x: usize) -> Result<usize> {
        let spec = PoolSpec::new((3, 3), (1, 1), Padding::Same);
        self.add_auto("average_pooling2d", NodeKind::AvgPool { spec }, &[x])
    }

    fn concat(&mut self, name: Option<&str>, inputs: &[usize]) -> Result<usize> {
        match name {
            Some(n) => self.t.add(n, NodeKind::Concat, inputs),
            None => self.add_auto("concatenate", NodeKind::Concat, inputs),
        }
    }

    /// 35×35 block: 1×1 | 1×1→5×5 | 1×1→3×3→3×3 | avg→1×1.
    fn block_a(&mut self, x: usize, w: [usize; 7], name: &str) -> Result<usize> {
        let b1 = self.same(x, w[0], 1, 1)?;
        let b5 = self.same(x, w[1], 1, 1)?;
        let b5 = self.same(b5, w[2], 5, 5)?;
        let d = self.same(x, w[3], 1, 1)?;
        let d = self.same(d, w[4], 3, 3)?;
        let d = self.same(d, w[5], 3, 3)?;
        let p = self.avg_pool_same(x)?;
        let p = self.same(p, w[6], 1, 1)?;
        self.concat(Some(name), &[b1, b5, d, p])
    }

    /// Grid reduction 35→17.
    fn block_b(&mut self, x: usize, name: &str) -> Result<usize> {
        let b3 = self.conv_bn(x, 384, (3, 3), 2, Padding::Valid)?;
        let d = self.same(x, 64, 1, 1)?;
        let d = self.same(d, 96, 3, 3)?;
        let d = self.conv_bn(d, 96, (3, 3), 2, Padding::Valid)?;
        let p = self.max_pool(x, 3, 2, Padding::Valid)?;
        self.concat(Some(name), &[b3, d, p])
    }

    /// 17×17 block with factorized 7×7 convolutions; `c` is the bottleneck width.
    fn block_c(&mut self, x: usize, c: usize, name: &str) -> Result<usize> {
        let b1 = self.same(x, 192, 1, 1)?;
        let b7 = self.same(x, c, 1, 1)?;
        let b7 = self.same(b7, c, 1, 7)?;
        let b7 = self.same(b7, 192, 7, 1)?;
        let d = self.same(x, c, 1, 1)?;
        let d = self.same(d, c, 7, 1)?;
        let d = self.same(d, c, 1, 7)?;
        let d = self.same(d, c, 7, 1)?;
        let d = self.same(d, 192, 1, 7)?;
        let p = self.avg_pool_same(x)?;
        let p = self.same(p, 192, 1, 1)?;
        self.concat(Some(name), &[b1, b7, d, p])
    }

    /// Grid reduction 17→8.
    fn block_d(&mut self, x: usize, name: &str) -> Result<usize> {
        let b3 = self.same(x, 192, 1, 1)?;
        let b3 = self.conv_bn(b3, 320, (3, 3), 2, Padding::Valid)?;
        let b7 = self.same(x, 192, 1, 1)?;
        let b7 = self.same(b7, 192, 1, 7)?;
        let b7 = self.same(b7, 192, 7, 1)?;
        let b7 = self.conv_bn(b7, 192, (3, 3), 2, Padding::Valid)?;
        let p = self.max_pool(x, 3, 2, Padding::Valid)?;
        self.concat(Some(name), &[b3, b7, p])
    }

    /// 8×8 block with expanded filter-bank outputs.
    fn block_e(&mut self, x: usize, i: usize) -> Result<usize> {
        let b1 = self.same(x, 320, 1, 1)?;
        let b3 = self.same(x, 384, 1, 1)?;
        let b3a = self.same(b3, 384, 1, 3)?;
        let b3b = self.same(b3, 384, 3, 1)?;
        let b3 = self.concat(Some(&format!("mixed{}_{}", 9, i)), &[b3a, b3b])?;
        let d = self.same(x, 448, 1, 1)?;
        let d = self.same(d, 384, 3, 3)?;
        let da = self.same(d, 384, 1, 3)?;
        let db = self.same(d, 384, 3, 1)?;
        let d = self.concat(None, &[da, db])?;
        let p = self.avg_pool_same(x)?;
        let p = self.same(p, 192, 1, 1)?;
        self.concat(Some(&format!("mixed{}", 9 + i)), &[b1, b3, d, p])
    }

    fn head(&mut self, x: usize, head: &HeadConfig) -> Result<usize> {
        head.validate()?;
        let mut x = x;
        for (k, (filters, norm)) in [(head.conv1_filters, head.norm1), (head.conv2_filters, head.norm2)]
            .into_iter()
            .enumerate()
        {
            let k = k + 1;
            x = self.t.add(
                &format!("head_conv{k}"),
                NodeKind::Conv2d {
                    filters,
                    kernel: head.kernel,
                    stride: (1, 1),
                    padding: head.padding,
                    use_bias: head.conv_bias,
                },
                &[x],
            )?;
            if norm != HeadNorm::None {
                x = self.t.add(
                    &format!("head_bn{k}"),
                    NodeKind::BatchNorm {
                        center: true,
                        scale: norm == HeadNorm::CenterScale,
                        momentum: 0.99,
                        epsilon: 1e-3,
                    },
                    &[x],
                )?;
            }
            x = self.t.add(
                &format!("head_act{k}"),
                NodeKind::Activation {
                    function: head.activation,
                },
                &[x],
            )?;
        }
        x = self.t.add("global_average_pooling", NodeKind::GlobalAvgPool, &[x])?;
        if let Some(units) = head.dense_units {
            x = self
                .t
                .add("head_dense", NodeKind::Dense { units, use_bias: true }, &[x])?;
            x = self.t.add(
                "head_dense_act",
                NodeKind::Activation {
                    function: Activation::Relu,
                },
                &[x],
            )?;
        }
        x = self.t.add(
            "dropout",
            NodeKind::Dropout {
                rate: head.dropout_rate,
            },
            &[x],
        )?;
        x = self.t.add(
            "predictions",
            NodeKind::Dense {
                units: head.num_classes,
                use_bias: true,
            },
            &[x],
        )?;
        self.t.add("softmax", NodeKind::Softmax, &[x])
    }
}

/// Inception V3 without its top, in canonical node order: index 0 is the
/// input and every conv contributes conv, batch-norm and activation nodes.
/// `mixed3`, `mixed4` and `mixed5` land on indices 100, 132 and 164.
pub fn inception_v3_body(input_shape: [usize; 3]) -> Result<(Topology, usize)> {
    let [c, h, w] = input_shape;
    if c == 0 || h < 75 || w < 75 {
        bail!(Config, "Inception V3 needs at least 75×75 input, got {:?}", input_shape);
    }
    let mut b = Builder::new(&input_shape)?;
    let x = b.conv_bn(0, 32, (3, 3), 2, Padding::Valid)?;
    let x = b.conv_bn(x, 32, (3, 3), 1, Padding::Valid)?;
    let x = b.conv_bn(x, 64, (3, 3), 1, Padding::Same)?;
    let x = b.max_pool(x, 3, 2, Padding::Valid)?;
    let x = b.conv_bn(x, 80, (1, 1), 1, Padding::Valid)?;
    let x = b.conv_bn(x, 192, (3, 3), 1, Padding::Valid)?;
    let mut x = b.max_pool(x, 3, 2, Padding::Valid)?;

    for (i, pool) in [32, 64, 64].into_iter().enumerate() {
        x = b.block_a(x, [64, 48, 64, 64, 96, 96, pool], &format!("mixed{i}"))?;
    }
    x = b.block_b(x, "mixed3")?;
    for (i, c) in [128, 160, 160, 192].into_iter().enumerate() {
        x = b.block_c(x, c, &format!("mixed{}", 4 + i))?;
    }
    x = b.block_d(x, "mixed8")?;
    for i in 0..2 {
        x = b.block_e(x, i)?;
    }
    Ok((b.t, x))
}

/// The full classifier: Inception V3 body plus `head`.
pub fn build_inception_v3(input_shape: [usize; 3], head: &HeadConfig) -> Result<Topology> {
    let (t, x) = inception_v3_body(input_shape)?;
    let mut b = Builder {
        t,
        counters: Default::default(),
    };
    b.head(x, head)?;
    Ok(b.t)
}

/// A scaled-down Inception: a two-conv stem, `blocks` 35×35-style mixed
/// blocks with every width divided by `divisor`, then `head`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MiniConfig {
    pub input_shape: [usize; 3],
    pub stem_filters: (usize, usize),
    pub blocks: usize,
    pub divisor: usize,
    pub head: HeadConfig,
}

impl Default for MiniConfig {
    fn default() -> Self {
        MiniConfig {
            input_shape: [3, 32, 32],
            stem_filters: (16, 32),
            blocks: 2,
            divisor: 8,
            head: HeadConfig {
                conv1_filters: 32,
                conv2_filters: 16,
                padding: Padding::Same,
                ..HeadConfig::reconciled()
            },
        }
    }
}

/// Stem: 3×3 stride-2 valid conv, 3×3 valid conv, 3×3 stride-2 max pool.
pub fn build_mini_inception(cfg: &MiniConfig) -> Result<Topology> {
    if cfg.divisor == 0 || cfg.stem_filters.0 == 0 || cfg.stem_filters.1 == 0 {
        bail!(Config, "mini Inception widths must be positive");
    }
    let mut b = Builder::new(&cfg.input_shape)?;
    let x = b.conv_bn(0, cfg.stem_filters.0, (3, 3), 2, Padding::Valid)?;
    let x = b.conv_bn(x, cfg.stem_filters.1, (3, 3), 1, Padding::Valid)?;
    let mut x = b.max_pool(x, 3, 2, Padding::Valid)?;
    let d = cfg.divisor;
    for i in 0..cfg.blocks {
        let pool = if i == 0 { 32 } else { 64 };
        let w = [64, 48, 64, 64, 96, 96, pool].map(|v: usize| v.div_ceil(d));
        x = b.block_a(x, w, &format!("mixed{i}"))?;
    }
    b.head(x, &cfg.head)?;
    Ok(b.t)
}
