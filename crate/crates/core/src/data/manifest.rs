use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::image::ppm_header;
use crate::error::{bail, Error, Result};

/// The seven cooking states, in label order.
pub const CLASSES: [&str; 7] = ["creamy", "diced", "grated", "juiced", "julienne", "sliced", "whole"];

/// Per-class sample counts listed for the challenge dataset, in `CLASSES` order.
pub const PUBLISHED_COUNTS: [usize; 7] = [730, 700, 819, 638, 672, 1315, 1304];
/// The stated dataset total, which disagrees with the sum of `PUBLISHED_COUNTS`.
pub const PUBLISHED_TOTAL: usize = 5978;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub path: PathBuf,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub classes: Vec<String>,
    pub samples: Vec<Sample>,
    pub counts: Vec<usize>,
    pub skipped: Vec<Skipped>,
    pub warnings: Vec<String>,
}

/// Observed counts beside the published figures.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct CountReport {
    pub rows: Vec<(String, usize, usize)>,
    pub observed_total: usize,
    pub published_class_sum: usize,
    pub published_total: usize,
}

impl CountReport {
    pub fn render(&self) -> String {
        let mut s = format!("{:<10} {:>9} {:>10}\n", "class", "observed", "published");
        for (c, o, p) in &self.rows {
            s += &format!("{c:<10} {o:>9} {p:>10}\n");
        }
        s += &format!(
            "{:<10} {:>9} {:>10}\n",
            "total", self.observed_total, self.published_class_sum
        );
        if self.published_class_sum != self.published_total {
            s += &format!(
                "note: published per-class counts sum to {} but the stated total is {}\n",
                self.published_class_sum, self.published_total
            );
        }
        s
    }
}

impl DatasetManifest {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if self.counts.len() != self.classes.len() {
            bail!(
                Data,
                "manifest has {} counts for {} classes",
                self.counts.len(),
                self.classes.len()
            );
        }
        let mut seen = vec![0; self.classes.len()];
        for s in &self.samples {
            match seen.get_mut(s.label) {
                Some(c) => *c += 1,
                None => bail!(
                    Data,
                    "sample {} has label {} outside the vocabulary",
                    s.path.display(),
                    s.label
                ),
            }
        }
        if seen != self.counts {
            bail!(
                Data,
                "manifest counts {:?} disagree with samples {:?}",
                self.counts,
                seen
            );
        }
        Ok(())
    }

    pub fn count_report(&self) -> CountReport {
        CountReport {
            rows: self
                .classes
                .iter()
                .zip(&self.counts)
                .zip(PUBLISHED_COUNTS)
                .map(|((c, &o), p)| (c.clone(), o, p))
                .collect(),
            observed_total: self.samples.len(),
            published_class_sum: PUBLISHED_COUNTS.iter().sum(),
            published_total: PUBLISHED_TOTAL,
        }
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: DatasetManifest = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, serde_json::to_string_pretty(self)? + "\n").map_err(|e| Error::io(path, e))
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| Error::io(dir, e)))
        .collect::<Result<Vec<_>>>()?;
    v.sort();
    Ok(v)
}

/// Scans `root/<class>/*.ppm`. A directory not named after a class is an
/// error; missing or empty class directories produce warnings; files that
/// are not readable PPMs go to the skip report.
pub fn build_manifest(root: impl AsRef<Path>) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let mut m = DatasetManifest {
        classes: CLASSES.iter().map(|s| s.to_string()).collect(),
        samples: Vec::new(),
        counts: vec![0; CLASSES.len()],
        skipped: Vec::new(),
        warnings: Vec::new(),
    };
    let mut present = vec![false; CLASSES.len()];
    let mut dirs = Vec::new();
    for entry in sorted_entries(root)? {
        if !entry.is_dir() {
            continue;
        }
        let name = entry
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or_default()
            .to_string();
        let Some(label) = CLASSES.iter().position(|&c| c == name) else {
            bail!(Data, "unknown class directory {:?} under {}", name, root.display());
        };
        present[label] = true;
        dirs.push((label, entry));
    }
    dirs.sort();
    for (label, dir) in dirs {
        for file in sorted_entries(&dir)? {
            if file.is_dir() {
                continue;
            }
            if file.extension().and_then(|e| e.to_str()) != Some("ppm") {
                m.skipped.push(Skipped {
                    path: file,
                    reason: "not a .ppm file".into(),
                });
                continue;
            }
            let ok = std::fs::read(&file)
                .map_err(|e| e.to_string())
                .and_then(|b| ppm_header(&b).map(|_| ()).map_err(|e| e.to_string()));
            match ok {
                Ok(()) => {
                    m.samples.push(Sample { path: file, label });
                    m.counts[label] += 1;
                }
                Err(reason) => m.skipped.push(Skipped { path: file, reason }),
            }
        }
    }
    for (label, &c) in m.counts.iter().enumerate() {
        if c == 0 {
            let why = if present[label] { "is empty" } else { "is missing" };
            m.warnings.push(format!("class directory {:?} {}", CLASSES[label], why));
        }
    }
    Ok(m)
}
