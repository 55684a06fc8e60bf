use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};
use crate::rng::Rng;

/// How to size the three partitions. Two-element lists mean train/test.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum SplitSpec {
    /// `val` and `test` get `floor(N·r)`; train takes the remainder.
    Ratio { val: f64, test: f64 },
    /// Hold out `floor(N·test)` for testing, then `floor(rest·val)` of the
    /// remainder for validation.
    Nested { test: f64, val: f64 },
    /// Exact sizes; they must sum to N.
    Counts { train: usize, val: usize, test: usize },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub seed: u64,
    pub spec_mode: String,
    pub stratified: bool,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

/// `floor(n·r)`, tolerant of representation error just below an integer.
fn floor_frac(n: usize, r: f64) -> usize {
    (n as f64 * r + 1e-9).floor() as usize
}

impl SplitSpec {
    fn sizes(&self, n: usize) -> Result<(usize, usize, usize)> {
        let frac = |r: f64| (0.0..=1.0).contains(&r);
        match *self {
            SplitSpec::Ratio { val, test } => {
                if !frac(val) || !frac(test) || val + test > 1.0 + 1e-12 {
                    bail!(
                        Config,
                        "split ratios val {} / test {} must lie in [0, 1] and sum ≤ 1",
                        val,
                        test
                    );
                }
                let (v, t) = (floor_frac(n, val), floor_frac(n, test));
                Ok((n - v - t, v, t))
            }
            SplitSpec::Nested { test, val } => {
                if !frac(val) || !frac(test) {
                    bail!(Config, "split ratios must lie in [0, 1]");
                }
                let t = floor_frac(n, test);
                let v = floor_frac(n - t, val);
                Ok((n - t - v, v, t))
            }
            SplitSpec::Counts { train, val, test } => {
                let sum = train + val + test;
                if sum > n {
                    bail!(
                        Config,
                        "split counts {}+{}+{} = {} exceed {} samples",
                        train,
                        val,
                        test,
                        sum,
                        n
                    );
                }
                if sum != n {
                    bail!(Config, "split counts sum to {} but the manifest has {} samples", sum, n);
                }
                Ok((train, val, test))
            }
        }
    }

    fn mode(&self) -> &'static str {
        match self {
            SplitSpec::Ratio { .. } => "ratio",
            SplitSpec::Nested { .. } => "nested",
            SplitSpec::Counts { .. } => "explicit-counts",
        }
    }
}

/// Shuffles with the seeded generator and slices train, val, test in that
/// order. With `stratified`, each class is shuffled and sliced on its own
/// (explicit counts are then not allowed) and the per-class pieces are
/// concatenated in class order.
pub fn split_dataset(labels: &[usize], seed: u64, spec: &SplitSpec, stratified: bool) -> Result<SplitPlan> {
    if labels.is_empty() {
        bail!(Config, "cannot split an empty manifest");
    }
    let mut plan = SplitPlan {
        seed,
        spec_mode: spec.mode().to_string(),
        stratified,
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    let groups: Vec<Vec<usize>> = if stratified {
        if matches!(spec, SplitSpec::Counts { .. }) {
            bail!(Config, "explicit counts cannot be stratified");
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        (0..k)
            .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect())
            .filter(|g: &Vec<usize>| !g.is_empty())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    for (gi, mut idx) in groups.into_iter().enumerate() {
        let (tr, va, _) = spec.sizes(idx.len())?;
        Rng::new(seed, gi as u64).shuffle(&mut idx);
        plan.train.extend_from_slice(&idx[..tr]);
        plan.val.extend_from_slice(&idx[tr..tr + va]);
        plan.test.extend_from_slice(&idx[tr + va..]);
    }
    Ok(plan)
}
