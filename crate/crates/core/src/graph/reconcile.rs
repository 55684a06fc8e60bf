//! Search over plausible head layouts for the one whose parameter counts
//! match the published table.
//!
//! The family: second-conv width in {16, 32, 64} (first fixed at 64), conv
//! bias on/off, per-conv batch norm none/center/center+scale, and an
//! optional hidden dense layer of 16..=1024 units (powers of two).
//! Candidates are ranked by absolute residual, then by how far they stray
//! from the described 64/32 widths, then by preferring no hidden dense
//! layer, the same normalization on both convs, and library defaults.

use serde::Serialize;

use super::inception::{build_inception_v3, HeadConfig, HeadNorm};
use super::topology::{FreezeSpec, ParamCount, Topology};
use super::{PUBLISHED_TOTAL, PUBLISHED_TRAINABLE};
use crate::error::Result;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Candidate {
    pub head: HeadConfig,
    pub count: ParamCount,
    pub total_residual: i64,
    pub trainable_residual: i64,
}

impl Candidate {
    pub fn abs_residual(&self) -> u64 {
        self.total_residual.unsigned_abs() + self.trainable_residual.unsigned_abs()
    }

    /// Larger of the two residuals as a fraction of the published total.
    pub fn relative_residual(&self) -> f64 {
        self.total_residual
            .unsigned_abs()
            .max(self.trainable_residual.unsigned_abs()) as f64
            / PUBLISHED_TOTAL as f64
    }

    pub fn is_exact(&self) -> bool {
        self.abs_residual() == 0
    }

    fn rank_key(&self) -> (u64, usize, bool, bool, usize) {
        let h = &self.head;
        let width_dev = usize::from(h.conv1_filters != 64) + usize::from(h.conv2_filters != 32);
        let non_default = usize::from(!h.conv_bias)
            + usize::from(h.norm1 != HeadNorm::CenterScale)
            + usize::from(h.norm2 != HeadNorm::CenterScale);
        (
            self.abs_residual(),
            width_dev,
            h.dense_units.is_some(),
            h.norm1 != h.norm2,
            non_default,
        )
    }
}

pub fn evaluate(head: &HeadConfig) -> Result<Candidate> {
    let count = build_inception_v3([3, 299, 299], head)?.count_params();
    let published_trainable = PUBLISHED_TRAINABLE[3].1;
    Ok(Candidate {
        head: head.clone(),
        count,
        total_residual: count.total as i64 - PUBLISHED_TOTAL as i64,
        trainable_residual: count.trainable as i64 - published_trainable as i64,
    })
}

/// Every candidate in the family, best first.
pub fn enumerate() -> Result<Vec<Candidate>> {
    let norms = [HeadNorm::None, HeadNorm::Center, HeadNorm::CenterScale];
    let mut dense = vec![None];
    dense.extend((4..=10).map(|p| Some(1usize << p)));
    let mut out = Vec::new();
    for conv2 in [16, 32, 64] {
        for bias in [true, false] {
            for n1 in norms {
                for n2 in norms {
                    for &d in &dense {
                        let head = HeadConfig {
                            conv2_filters: conv2,
                            conv_bias: bias,
                            norm1: n1,
                            norm2: n2,
                            dense_units: d,
                            ..HeadConfig::default()
                        };
                        out.push(evaluate(&head)?);
                    }
                }
            }
        }
    }
    out.sort_by_key(|c| c.rank_key());
    Ok(out)
}

/// The best candidate that keeps the described 64/32 widths.
pub fn best_with_described_widths(all: &[Candidate]) -> Option<&Candidate> {
    all.iter()
        .find(|c| c.head.conv1_filters == 64 && c.head.conv2_filters == 32)
}

/// Per-node parameter counts of the head (everything after the body).
pub fn head_line_items(topo: &Topology, body_len: usize) -> Vec<(String, ParamCount)> {
    (body_len..topo.len())
        .map(|i| (topo.node(i).name.clone(), topo.count_node(i)))
        .filter(|(_, c)| c.total > 0)
        .collect()
}

/// Trainable counts at the published freeze boundaries, most frozen first.
pub fn freeze_table(head: &HeadConfig) -> Result<Vec<(String, ParamCount, usize)>> {
    let mut topo = build_inception_v3([3, 299, 299], head)?;
    PUBLISHED_TRAINABLE
        .iter()
        .map(|&(label, published)| {
            topo.apply_freeze(&label.parse::<FreezeSpec>().expect("infallible"))?;
            Ok((label.to_string(), topo.count_params(), published))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reconciled_head_is_exact_and_ranked_first() {
        let c = evaluate(&HeadConfig::reconciled()).unwrap();
        assert!(c.is_exact(), "{c:?}");
        assert_eq!(c.count.non_trainable, 34_592);
    }
}
