use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::layers::{Activation, ParamRole, PoolSpec};
use crate::tensor::Padding;

/// Layer kind plus its static configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum NodeKind {
    Input,
    Conv2d {
        filters: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: Padding,
        use_bias: bool,
    },
    BatchNorm {
        center: bool,
        scale: bool,
        momentum: f64,
        epsilon: f64,
    },
    Activation {
        function: Activation,
    },
    MaxPool {
        #[serde(flatten)]
        spec: PoolSpec,
    },
    AvgPool {
        #[serde(flatten)]
        spec: PoolSpec,
    },
    Concat,
    GlobalAvgPool,
    Dense {
        units: usize,
        use_bias: bool,
    },
    Dropout {
        rate: f64,
    },
    Softmax,
}

impl NodeKind {
    pub fn label(&self) -> &'static str {
        match self {
            NodeKind::Input => "input",
            NodeKind::Conv2d { .. } => "conv2d",
            NodeKind::BatchNorm { .. } => "batch_norm",
            NodeKind::Activation { .. } => "activation",
            NodeKind::MaxPool { .. } => "max_pool",
            NodeKind::AvgPool { .. } => "avg_pool",
            NodeKind::Concat => "concat",
            NodeKind::GlobalAvgPool => "global_avg_pool",
            NodeKind::Dense { .. } => "dense",
            NodeKind::Dropout { .. } => "dropout",
            NodeKind::Softmax => "softmax",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Node {
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<usize>,
    /// Per-sample output shape (no batch axis).
    pub shape: Vec<usize>,
    pub trainable: bool,
}

/// Shape and role of one parameter tensor, before any values exist.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamShape {
    pub name: &'static str,
    pub shape: Vec<usize>,
    pub role: ParamRole,
}

impl ParamShape {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    pub total: usize,
    pub trainable: usize,
    pub non_trainable: usize,
}

impl std::ops::Add for ParamCount {
    type Output = ParamCount;
    fn add(self, o: ParamCount) -> ParamCount {
        ParamCount {
            total: self.total + o.total,
            trainable: self.trainable + o.trainable,
            non_trainable: self.non_trainable + o.non_trainable,
        }
    }
}

/// Which prefix of the node list to freeze.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum FreezeSpec {
    /// Freeze every node with index `≤ through`.
    Through(usize),
    /// `"none"`, `"all"`, a node name such as `"mixed4"`, or a range `"0-132"`.
    Named(String),
}

impl Default for FreezeSpec {
    fn default() -> Self {
        FreezeSpec::Named("none".into())
    }
}

impl std::str::FromStr for FreezeSpec {
    type Err = std::convert::Infallible;
    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Ok(match s.trim().parse::<usize>() {
            Ok(i) => FreezeSpec::Through(i),
            Err(_) => FreezeSpec::Named(s.trim().to_string()),
        })
    }
}

impl std::fmt::Display for FreezeSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FreezeSpec::Through(i) => write!(f, "0-{i}"),
            FreezeSpec::Named(s) => f.write_str(s),
        }
    }
}

/// A named DAG of layer nodes in canonical (freeze-boundary) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Topology {
    nodes: Vec<Node>,
    index: HashMap<String, usize>,
}

impl Topology {
    /// Starts a topology whose node 0 is the input with per-sample `shape`.
    pub fn new(name: &str, shape: &[usize]) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            bail!(Config, "input shape {:?} must be non-empty and positive", shape);
        }
        let mut t = Topology {
            nodes: Vec::new(),
            index: HashMap::new(),
        };
        t.push(name, NodeKind::Input, Vec::new(), shape.to_vec())?;
        Ok(t)
    }

    fn push(&mut self, name: &str, kind: NodeKind, inputs: Vec<usize>, shape: Vec<usize>) -> Result<usize> {
        if self.index.contains_key(name) {
            bail!(Config, "duplicate node name {:?}", name);
        }
        let i = self.nodes.len();
        self.index.insert(name.to_string(), i);
        self.nodes.push(Node {
            name: name.to_string(),
            kind,
            inputs,
            shape,
            trainable: true,
        });
        Ok(i)
    }

    /// Appends a node; inputs must already exist, so the graph stays acyclic.
    pub fn add(&mut self, name: &str, kind: NodeKind, inputs: &[usize]) -> Result<usize> {
        if let Some(&bad) = inputs.iter().find(|&&i| i >= self.nodes.len()) {
            bail!(Config, "node {:?} references missing input {}", name, bad);
        }
        let shapes: Vec<&[usize]> = inputs.iter().map(|&i| self.nodes[i].shape.as_slice()).collect();
        let shape = infer_shape(name, &kind, &shapes)?;
        self.push(name, kind, inputs.to_vec(), shape)
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.nodes[0].shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.nodes.len() - 1].shape
    }

    /// The node whose output feeds the loss: the input of a trailing
    /// softmax, otherwise the last node.
    pub fn logits_node(&self) -> usize {
        let last = self.nodes.len() - 1;
        match self.nodes[last].kind {
            NodeKind::Softmax => self.nodes[last].inputs[0],
            _ => last,
        }
    }

    pub fn param_shapes(&self, i: usize) -> Vec<ParamShape> {
        let node = &self.nodes[i];
        let in_shape = node.inputs.first().map(|&j| self.nodes[j].shape.as_slice());
        param_shapes(&node.kind, in_shape.unwrap_or(&[]))
    }

    pub fn count_params(&self) -> ParamCount {
        (0..self.nodes.len())
            .map(|i| self.count_node(i))
            .fold(ParamCount::default(), |a, b| a + b)
    }

    pub fn count_node(&self, i: usize) -> ParamCount {
        let mut c = ParamCount::default();
        for p in self.param_shapes(i) {
            let n = p.len();
            c.total += n;
            if p.role == ParamRole::Learned && self.nodes[i].trainable {
                c.trainable += n;
            } else {
                c.non_trainable += n;
            }
        }
        c
    }

    /// Resolves a freeze spec to the inclusive boundary index, or `None`
    /// when nothing is frozen.
    pub fn resolve_freeze(&self, spec: &FreezeSpec) -> Result<Option<usize>> {
        let last = self.nodes.len() - 1;
        let idx = match spec {
            FreezeSpec::Through(i) => *i,
            FreezeSpec::Named(s) => match s.as_str() {
                "none" | "" => return Ok(None),
                "all" => last,
                name => match (self.find(name), name.split_once('-')) {
                    (Some(i), _) => i,
                    (None, Some(("0", hi))) => match hi.parse::<usize>() {
                        Ok(i) => i,
                        Err(_) => bail!(Config, "unknown freeze boundary {:?}", name),
                    },
                    _ => bail!(Config, "unknown freeze boundary {:?}", name),
                },
            },
        };
        if idx > last {
            bail!(Config, "freeze boundary {} beyond last node index {}", idx, last);
        }
        Ok(Some(idx))
    }

    /// Marks every node with index `≤ boundary` non-trainable and every
    /// later node trainable.
    pub fn apply_freeze(&mut self, spec: &FreezeSpec) -> Result<Option<usize>> {
        let boundary = self.resolve_freeze(spec)?;
        for (i, n) in self.nodes.iter_mut().enumerate() {
            n.trainable = boundary.is_none_or(|b| i > b);
        }
        Ok(boundary)
    }

    /// Indices and names of the top-level concatenation nodes `mixedN`.
    pub fn mixed_blocks(&self) -> Vec<(usize, &str)> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| {
                matches!(n.kind, NodeKind::Concat)
                    && n.name
                        .strip_prefix("mixed")
                        .is_some_and(|r| !r.is_empty() && r.bytes().all(|b| b.is_ascii_digit()))
            })
            .map(|(i, n)| (i, n.name.as_str()))
            .collect()
    }

    pub fn to_json(&self) -> TopologyJson {
        TopologyJson {
            format: TOPOLOGY_FORMAT.to_string(),
            version: 1,
            nodes: self
                .nodes
                .iter()
                .map(|n| NodeJson {
                    name: n.name.clone(),
                    kind: n.kind.clone(),
                    inputs: n.inputs.iter().map(|&i| self.nodes[i].name.clone()).collect(),
                    output_shape: n.shape.clone(),
                    trainable: n.trainable,
                })
                .collect(),
        }
    }

    /// Rebuilds a topology, re-deriving and cross-checking every shape.
    pub fn from_json(doc: &TopologyJson) -> Result<Self> {
        if doc.format != TOPOLOGY_FORMAT || doc.version != 1 {
            bail!(
                Config,
                "unsupported topology document {:?} v{}",
                doc.format,
                doc.version
            );
        }
        let Some((first, rest)) = doc.nodes.split_first() else {
            bail!(Config, "topology has no nodes");
        };
        if first.kind != NodeKind::Input {
            bail!(Config, "first node must be the input, got {}", first.kind.label());
        }
        let mut t = Topology::new(&first.name, &first.output_shape)?;
        for n in rest {
            let inputs = n
                .inputs
                .iter()
                .map(|name| {
                    t.find(name).ok_or_else(|| {
                        crate::Error::Config(format!("node {:?} references unknown input {:?}", n.name, name))
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let i = t.add(&n.name, n.kind.clone(), &inputs)?;
            if t.nodes[i].shape != n.output_shape {
                bail!(
                    Config,
                    "node {:?} declares shape {:?} but inputs imply {:?}",
                    n.name,
                    n.output_shape,
                    t.nodes[i].shape
                );
            }
        }
        for (node, n) in t.nodes.iter_mut().zip(&doc.nodes) {
            node.trainable = n.trainable;
        }
        Ok(t)
    }
}

const TOPOLOGY_FORMAT: &str = "cookstate-topology";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TopologyJson {
    pub format: String,
    pub version: u32,
    pub nodes: Vec<NodeJson>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeJson {
    pub name: String,
    pub kind: NodeKind,
    pub inputs: Vec<String>,
    pub output_shape: Vec<usize>,
    pub trainable: bool,
}

fn single<'a>(name: &str, shapes: &[&'a [usize]]) -> Result<&'a [usize]> {
    match shapes {
        [s] => Ok(s),
        _ => bail!(Config, "node {:?} takes exactly one input, got {}", name, shapes.len()),
    }
}

fn spatial(name: &str, shapes: &[&[usize]]) -> Result<(usize, usize, usize)> {
    match single(name, shapes)? {
        &[c, h, w] => Ok((c, h, w)),
        s => bail!(Dimension, "node {:?} needs a C×H×W input, got {:?}", name, s),
    }
}

fn infer_shape(name: &str, kind: &NodeKind, shapes: &[&[usize]]) -> Result<Vec<usize>> {
    Ok(match kind {
        NodeKind::Input => bail!(Config, "only node 0 may be an input ({:?})", name),
        NodeKind::Conv2d {
            filters,
            kernel,
            stride,
            padding,
            ..
        } => {
            let (_, h, w) = spatial(name, shapes)?;
            if *filters == 0 || kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                bail!(Config, "conv {:?} has a zero filter count, kernel or stride", name);
            }
            let (_, _, oh) = padding.resolve(h, kernel.0, stride.0)?;
            let (_, _, ow) = padding.resolve(w, kernel.1, stride.1)?;
            vec![*filters, oh, ow]
        }
        NodeKind::MaxPool { spec } | NodeKind::AvgPool { spec } => {
            let (c, h, w) = spatial(name, shapes)?;
            let (_, _, oh) = spec.padding.resolve(h, spec.window.0, spec.stride.0)?;
            let (_, _, ow) = spec.padding.resolve(w, spec.window.1, spec.stride.1)?;
            vec![c, oh, ow]
        }
        NodeKind::BatchNorm { momentum, epsilon, .. } => {
            if !(0.0..1.0).contains(momentum) || *epsilon < 0.0 {
                bail!(
                    Config,
                    "batch norm {:?}: momentum {} / epsilon {}",
                    name,
                    momentum,
                    epsilon
                );
            }
            single(name, shapes)?.to_vec()
        }
        NodeKind::Activation { .. } => single(name, shapes)?.to_vec(),
        NodeKind::Dropout { rate } => {
            if !(0.0..1.0).contains(rate) {
                bail!(Config, "dropout {:?} rate {} outside [0, 1)", name, rate);
            }
            single(name, shapes)?.to_vec()
        }
        NodeKind::Softmax => match single(name, shapes)? {
            s @ [_] => s.to_vec(),
            s => bail!(Dimension, "softmax {:?} needs a flat input, got {:?}", name, s),
        },
        NodeKind::GlobalAvgPool => vec![spatial(name, shapes)?.0],
        NodeKind::Dense { units, .. } => match single(name, shapes)? {
            [_] if *units > 0 => vec![*units],
            s => bail!(
                Dimension,
                "dense {:?} needs a flat input and units > 0, got {:?}",
                name,
                s
            ),
        },
        NodeKind::Concat => {
            let Some(first) = shapes.first() else {
                bail!(Config, "concat {:?} has no inputs", name);
            };
            if shapes.iter().any(|s| s.len() != first.len() || s[1..] != first[1..]) {
                bail!(
                    Dimension,
                    "concat {:?} inputs disagree off the channel axis: {:?}",
                    name,
                    shapes
                );
            }
            let mut out = first.to_vec();
            out[0] = shapes.iter().map(|s| s[0]).sum();
            out
        }
    })
}

fn param_shapes(kind: &NodeKind, in_shape: &[usize]) -> Vec<ParamShape> {
    let learned = |name, shape: Vec<usize>| ParamShape {
        name,
        shape,
        role: ParamRole::Learned,
    };
    let stat = |name, shape: Vec<usize>| ParamShape {
        name,
        shape,
        role: ParamRole::Statistic,
    };
    match *kind {
        NodeKind::Conv2d {
            filters,
            kernel,
            use_bias,
            ..
        } => {
            let mut v = vec![learned("kernel", vec![filters, in_shape[0], kernel.0, kernel.1])];
            if use_bias {
                v.push(learned("bias", vec![filters]));
            }
            v
        }
        NodeKind::BatchNorm { center, scale, .. } => {
            let c = in_shape[0];
            let mut v = Vec::new();
            if scale {
                v.push(learned("gamma", vec![c]));
            }
            if center {
                v.push(learned("beta", vec![c]));
            }
            v.push(stat("moving_mean", vec![c]));
            v.push(stat("moving_variance", vec![c]));
            v
        }
        NodeKind::Dense { units, use_bias } => {
            let mut v = vec![learned("kernel", vec![in_shape[0], units])];
            if use_bias {
                v.push(learned("bias", vec![units]));
            }
            v
        }
        _ => Vec::new(),
    }
}
