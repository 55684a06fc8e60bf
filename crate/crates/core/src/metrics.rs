//! Confusion matrices and the per-class precision/recall/F1 report.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{bail, Result};

/// Counts with rows = true class, columns = predicted class.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

fn default_names(k: usize) -> Vec<String> {
    (0..k).map(|i| format!("class{i}")).collect()
}

pub fn confusion_matrix(truth: &[usize], pred: &[usize], k: usize) -> Result<ConfusionMatrix> {
    if truth.len() != pred.len() {
        bail!(Data, "{} true labels but {} predictions", truth.len(), pred.len());
    }
    let mut counts = vec![vec![0u64; k]; k];
    for (i, (&t, &p)) in truth.iter().zip(pred).enumerate() {
        if t >= k || p >= k {
            bail!(Data, "sample {} has label pair ({}, {}) outside {} classes", i, t, p, k);
        }
        counts[t][p] += 1;
    }
    Ok(ConfusionMatrix {
        classes: default_names(k),
        counts,
    })
}

impl ConfusionMatrix {
    pub fn with_classes(mut self, names: &[String]) -> Result<Self> {
        if names.len() != self.k() {
            bail!(Config, "{} class names for a {}-class matrix", names.len(), self.k());
        }
        self.classes = names.to_vec();
        Ok(self)
    }

    pub fn k(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, r: usize) -> u64 {
        self.counts[r].iter().sum()
    }

    pub fn col_sum(&self, c: usize) -> u64 {
        self.counts.iter().map(|row| row[c]).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("true\\pred");
        for c in &self.classes {
            let _ = write!(s, ",{c}");
        }
        s.push('\n');
        for (name, row) in self.classes.iter().zip(&self.counts) {
            s.push_str(name);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }

    pub fn render(&self) -> String {
        render_grid(
            &self.classes,
            &self
                .counts
                .iter()
                .map(|r| r.iter().map(|&v| v.to_string()).collect())
                .collect::<Vec<_>>(),
        )
    }
}

fn render_grid(classes: &[String], cells: &[Vec<String>]) -> String {
    let w = classes
        .iter()
        .map(String::len)
        .chain(cells.iter().flatten().map(String::len))
        .max()
        .unwrap_or(1)
        .max(4);
    let mut s = format!("{:>w$}", "");
    for c in classes {
        let _ = write!(s, " {c:>w$}");
    }
    s.push('\n');
    for (name, row) in classes.iter().zip(cells) {
        let _ = write!(s, "{name:>w$}");
        for v in row {
            let _ = write!(s, " {v:>w$}");
        }
        s.push('\n');
    }
    s
}

/// Each nonzero row scaled to percentages; all-zero rows stay zero.
pub fn normalize_rows(cm: &ConfusionMatrix) -> Vec<Vec<f64>> {
    cm.counts
        .iter()
        .map(|row| {
            let sum: u64 = row.iter().sum();
            row.iter()
                .map(|&v| if sum == 0 { 0.0 } else { 100.0 * v as f64 / sum as f64 })
                .collect()
        })
        .collect()
}

pub fn render_normalized(cm: &ConfusionMatrix) -> String {
    let cells: Vec<Vec<String>> = normalize_rows(cm)
        .iter()
        .map(|r| r.iter().map(|v| format!("{v:.1}")).collect())
        .collect();
    render_grid(&cm.classes, &cells)
}

/// trace / total.
pub fn accuracy(cm: &ConfusionMatrix) -> Result<f64> {
    let total = cm.total();
    if total == 0 {
        bail!(Domain, "accuracy of an empty confusion matrix");
    }
    let diag: u64 = (0..cm.k()).map(|i| cm.counts[i][i]).sum();
    Ok(diag as f64 / total as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub name: String,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub classes: Vec<ClassMetrics>,
    /// Support-weighted means of precision, recall and F1.
    pub weighted: ClassMetrics,
    /// Unweighted means over classes.
    pub macro_avg: ClassMetrics,
    /// Whether any metric had a zero denominator and was set to 0.
    pub zero_division: bool,
}

fn ratio(n: u64, d: u64) -> f64 {
    if d == 0 {
        0.0
    } else {
        n as f64 / d as f64
    }
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

pub fn classification_report(cm: &ConfusionMatrix) -> ClassReport {
    let k = cm.k();
    let mut zero_division = false;
    let classes: Vec<ClassMetrics> = (0..k)
        .map(|i| {
            let (tp, col, row) = (cm.counts[i][i], cm.col_sum(i), cm.row_sum(i));
            zero_division |= col == 0 || row == 0;
            let (precision, recall) = (ratio(tp, col), ratio(tp, row));
            ClassMetrics {
                name: cm.classes[i].clone(),
                precision,
                recall,
                f1: f1_score(precision, recall),
                support: row,
            }
        })
        .collect();
    let total: u64 = classes.iter().map(|c| c.support).sum();
    let avg = |name: &str, weight: &dyn Fn(&ClassMetrics) -> f64, denom: f64| {
        let mean = |f: fn(&ClassMetrics) -> f64| {
            if denom == 0.0 {
                0.0
            } else {
                classes.iter().map(|c| weight(c) * f(c)).sum::<f64>() / denom
            }
        };
        ClassMetrics {
            name: name.to_string(),
            precision: mean(|c| c.precision),
            recall: mean(|c| c.recall),
            f1: mean(|c| c.f1),
            support: total,
        }
    };
    ClassReport {
        weighted: avg("average", &|c| c.support as f64, total as f64),
        macro_avg: avg("macro avg", &|_| 1.0, k as f64),
        classes,
        zero_division,
    }
}

impl ClassReport {
    /// Columns class, precision, recall, f1-score, support, with the
    /// support-weighted `average` row last before the macro row.
    pub fn render(&self) -> String {
        let w = self.classes.iter().map(|c| c.name.len()).chain([9]).max().unwrap_or(9);
        let mut s = format!(
            "{:<w$} {:>9} {:>9} {:>9} {:>9}\n",
            "", "precision", "recall", "f1-score", "support"
        );
        let mut line = |m: &ClassMetrics| {
            let _ = writeln!(
                s,
                "{:<w$} {:>9.2} {:>9.2} {:>9.2} {:>9}",
                m.name, m.precision, m.recall, m.f1, m.support
            );
        };
        for c in &self.classes {
            line(c);
        }
        line(&self.weighted);
        line(&self.macro_avg);
        if self.zero_division {
            s.push_str("* metrics with a zero denominator are reported as 0\n");
        }
        s
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,precision,recall,f1,support\n");
        for m in self.classes.iter().chain([&self.weighted, &self.macro_avg]) {
            let _ = writeln!(s, "{},{},{},{},{}", m.name, m.precision, m.recall, m.f1, m.support);
        }
        s
    }
}

/// Heat grid of row percentages with a label in every cell.
pub fn confusion_svg(cm: &ConfusionMatrix, title: &str) -> String {
    let pct = normalize_rows(cm);
    let k = cm.k();
    let (cell, left, top) = (60.0, 110.0, 60.0);
    let (w, h) = (left + cell * k as f64 + 20.0, top + cell * k as f64 + 40.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{title}</text>"#,
        w / 2.0
    );
    for (i, row) in pct.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end" font-size="12">{}</text>"#,
            left - 6.0,
            y + cell / 2.0 + 4.0,
            cm.classes[i]
        );
        for (j, &v) in row.iter().enumerate() {
            let x = left + cell * j as f64;
            let shade = 255 - (v / 100.0 * 200.0).round() as u8;
            let ink = if v > 55.0 { "white" } else { "black" };
            let _ = writeln!(
                s,
                r#"<rect x="{x}" y="{y}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="gray"/>"#
            );
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" text-anchor="middle" font-size="12" fill="{ink}">{v:.1}%</text>"#,
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    for (j, name) in cm.classes.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{name}</text>"#,
            left + cell * (j as f64 + 0.5),
            top - 8.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">predicted</text>"#,
        left + cell * k as f64 / 2.0,
        h - 12.0
    );
    s.push_str("</svg>\n");
    s
}
