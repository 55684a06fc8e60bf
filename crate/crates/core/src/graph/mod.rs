//! Layer graphs: topology, the Inception V3 builder, parameter accounting,
//! freezing and weight import.

mod inception;
mod model;
pub mod reconcile;
mod topology;

pub use inception::{build_inception_v3, build_mini_inception, inception_v3_body, HeadConfig, HeadNorm, MiniConfig};
pub use model::{Gradients, LayerGraph, Trace, CLASSIFIER_STD};
pub use topology::{FreezeSpec, Node, NodeJson, NodeKind, ParamCount, ParamShape, Topology, TopologyJson};

/// Published totals for the full model, by freeze boundary.
pub const PUBLISHED_TOTAL: usize = 22_992_167;

/// `(boundary label, published trainable count)`, most frozen first.
pub const PUBLISHED_TRAINABLE: [(&str, usize); 4] = [
    ("0-164", 17_830_439),
    ("0-132", 19_519_719),
    ("0-100", 20_815_591),
    ("none", 22_957_575),
];
