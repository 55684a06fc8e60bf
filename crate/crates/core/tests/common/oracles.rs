//! Reference implementations written independently of the library.

/// The stopping rule restated from scratch: at epoch `e`, the best epoch is
/// the last one whose value beat every earlier best by more than `delta`.
/// Returns (stop epoch, best epoch).
pub fn stop_oracle(values: &[f64], patience: usize, delta: f64) -> (Option<usize>, Option<usize>) {
    let best_upto = |e: usize| {
        let mut b = 0;
        for j in 1..=e {
            if values[j] < values[b] - delta {
                b = j;
            }
        }
        b
    };
    for e in 0..values.len() {
        let b = best_upto(e);
        if b < e && e - b >= patience {
            return (Some(e), Some(b));
        }
    }
    (None, values.len().checked_sub(1).map(best_upto))
}

/// (precision, recall, f1, support) of class `c` by direct counting.
pub fn count_metrics(truth: &[usize], pred: &[usize], c: usize) -> (f64, f64, f64, u64) {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&t, &p) in truth.iter().zip(pred) {
        match (t == c, p == c) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fn_ += 1,
            _ => {}
        }
    }
    let div = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (p, r) = (div(tp, tp + fp), div(tp, tp + fn_));
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (p, r, f, tp + fn_)
}

/// Counts whose per-class metrics round to the published validation report.
pub const PUBLISHED_CONFUSION: [[u64; 7]; 7] = [
    [69, 2, 8, 8, 5, 16, 9],
    [3, 95, 7, 5, 4, 7, 7],
    [4, 8, 98, 8, 2, 3, 9],
    [4, 3, 2, 89, 3, 3, 3],
    [4, 6, 8, 2, 52, 7, 4],
    [9, 7, 20, 13, 5, 159, 11],
    [11, 6, 4, 6, 5, 33, 138],
];

/// The published rows: class, precision, recall, f1, support.
pub const PUBLISHED_REPORT: [(&str, &str, &str, &str, u64); 8] = [
    ("creamy", "0.66", "0.59", "0.62", 117),
    ("diced", "0.75", "0.74", "0.75", 128),
    ("grated", "0.67", "0.74", "0.70", 132),
    ("juiced", "0.68", "0.83", "0.75", 107),
    ("julienne", "0.68", "0.63", "0.65", 83),
    ("sliced", "0.70", "0.71", "0.70", 224),
    ("whole", "0.76", "0.68", "0.72", 203),
    ("average", "0.71", "0.70", "0.70", 994),
];

/// Expands a count matrix into (truth, pred) label lists.
pub fn expand(counts: &[[u64; 7]; 7]) -> (Vec<usize>, Vec<usize>) {
    let (mut truth, mut pred) = (Vec::new(), Vec::new());
    for (t, row) in counts.iter().enumerate() {
        for (p, &n) in row.iter().enumerate() {
            truth.extend(std::iter::repeat_n(t, n as usize));
            pred.extend(std::iter::repeat_n(p, n as usize));
        }
    }
    (truth, pred)
}
