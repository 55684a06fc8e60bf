use std::path::{Path, PathBuf};

use clap::Args;
use cookstate::data::{
    apply_affine, augment, build_manifest, read_ppm, split_dataset, write_ppm, AugmentConfig, AugmentParams,
    DatasetManifest, SplitSpec,
};
use cookstate::error::Result;
use cookstate::rng::Rng;
use cookstate::train::ExperimentConfig;
use cookstate::Error;

use crate::{emit, read_text, write_text, Global};

pub fn manifest(g: &Global, root: &Path) -> Result<()> {
    let m = build_manifest(root)?;
    let json = serde_json::to_string_pretty(&m)?;
    let report = m.count_report().render();
    match &g.out {
        Some(p) => {
            write_text(p, &json)?;
            print!("{report}");
        }
        None => {
            println!("{json}");
            eprint!("{report}");
        }
    }
    for w in &m.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    /// Manifest JSON to split.
    manifest: PathBuf,
    /// Fractions: `train` (rest is test), `train,test` or `train,val,test`.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["counts", "nested"])]
    ratio: Option<Vec<f64>>,
    /// Exact sizes: `train,test` or `train,val,test`; must sum to N.
    #[arg(long, value_delimiter = ',', conflicts_with = "nested")]
    counts: Option<Vec<usize>>,
    /// Hold out `test` first, then `val` of the remainder: `test,val`.
    #[arg(long, value_delimiter = ',')]
    nested: Option<Vec<f64>>,
    /// Split each class separately.
    #[arg(long)]
    stratified: bool,
}

fn split_spec(a: &SplitArgs) -> Result<SplitSpec> {
    let bad = |what: &str| Error::Config(format!("--{what} takes 1 to 3 comma-separated values"));
    Ok(match (&a.ratio, &a.counts, &a.nested) {
        (Some(r), None, None) => match r.as_slice() {
            [train] => SplitSpec::Ratio {
                val: 0.0,
                test: 1.0 - train,
            },
            [_, test] => SplitSpec::Ratio { val: 0.0, test: *test },
            [_, val, test] => SplitSpec::Ratio { val: *val, test: *test },
            _ => return Err(bad("ratio")),
        },
        (None, Some(c), None) => match c.as_slice() {
            [train, test] => SplitSpec::Counts {
                train: *train,
                val: 0,
                test: *test,
            },
            [train, val, test] => SplitSpec::Counts {
                train: *train,
                val: *val,
                test: *test,
            },
            _ => return Err(bad("counts")),
        },
        (None, None, Some(n)) => match n.as_slice() {
            [test, val] => SplitSpec::Nested { test: *test, val: *val },
            _ => return Err(Error::Config("--nested takes test,val".into())),
        },
        _ => SplitSpec::Nested { test: 0.15, val: 0.2 },
    })
}

pub fn split(g: &Global, a: &SplitArgs) -> Result<()> {
    let spec = split_spec(a)?;
    if let SplitSpec::Ratio { val, test } = spec {
        if let Some(r) = &a.ratio {
            let sum: f64 = if r.len() == 1 { 1.0 } else { r.iter().sum() };
            if (sum - 1.0).abs() > 1e-9 || val < 0.0 || test < 0.0 {
                return Err(Error::Config(format!(
                    "split fractions {r:?} must be non-negative and sum to 1"
                )));
            }
        }
    }
    let m = DatasetManifest::read(&a.manifest)?;
    let seed = g.seed.unwrap_or(0);
    let plan = split_dataset(&m.labels(), seed, &spec, a.stratified)?;
    emit(g.out.as_deref(), &(serde_json::to_string_pretty(&plan)? + "\n"))?;
    eprintln!(
        "train {} / val {} / test {} (seed {seed})",
        plan.train.len(),
        plan.val.len(),
        plan.test.len()
    );
    Ok(())
}

#[derive(Args, Debug)]
pub struct PreviewArgs {
    /// Source PPM image.
    image: PathBuf,
    /// Number of augmented copies.
    #[arg(short = 'n', long, default_value_t = 4)]
    count: usize,
    /// Augmentation ranges (JSON); defaults to the experiment config's.
    #[arg(long)]
    augment: Option<PathBuf>,
    /// Apply this exact transform (JSON) instead of sampling.
    #[arg(long)]
    params: Option<PathBuf>,
}

pub fn augment_preview(g: &Global, a: &PreviewArgs) -> Result<()> {
    let img = read_ppm(&a.image)?;
    let out = g.out.clone().unwrap_or_else(|| PathBuf::from("augment-preview"));
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let fixed: Option<AugmentParams> = match &a.params {
        Some(p) => {
            Some(serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?)
        }
        None => None,
    };
    let cfg: AugmentConfig = match (&a.augment, &g.config) {
        (Some(p), _) => {
            serde_json::from_str(&read_text(p)?).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?
        }
        (None, Some(p)) => ExperimentConfig::from_json(&read_text(p)?)?
            .pipeline
            .augment
            .unwrap_or_else(AugmentConfig::identity),
        (None, None) => AugmentConfig::default(),
    };
    cfg.validate()?;
    let mut rng = Rng::new(g.seed.unwrap_or(0), 0);
    let mut log = Vec::with_capacity(a.count);
    for k in 0..a.count {
        let (aug, params) = match fixed {
            Some(p) => (apply_affine(&img, &p)?, p),
            None => augment(&img, &cfg, &mut rng)?,
        };
        write_ppm(out.join(format!("aug_{k:03}.ppm")), &aug)?;
        log.push(params);
    }
    write_text(&out.join("params.json"), &serde_json::to_string_pretty(&log)?)?;
    println!("wrote {} images to {}", a.count, out.display());
    Ok(())
}
