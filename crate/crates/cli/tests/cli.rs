use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cookstate::data::synthetic::{synthetic_dataset, write_dataset_tree};
use cookstate::data::{read_ppm, write_ppm, DatasetManifest, ImageSample, Sample, CLASSES};
use cookstate::train::ExperimentConfig;
use cookstate::Tensor32;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cookstate"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn cookstate")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(dir: &Path, args: &[&str]) -> i32 {
    run(dir, args).status.code().unwrap()
}

fn fake_manifest(dir: &Path, n: usize) -> PathBuf {
    let m = DatasetManifest {
        classes: CLASSES.iter().map(|s| s.to_string()).collect(),
        samples: (0..n)
            .map(|i| Sample {
                path: format!("img_{i}.ppm").into(),
                label: i % 7,
            })
            .collect(),
        counts: (0..7).map(|c| (0..n).filter(|i| i % 7 == c).count()).collect(),
        skipped: Vec::new(),
        warnings: Vec::new(),
    };
    let p = dir.join(format!("manifest_{n}.json"));
    m.write(&p).unwrap();
    p
}

fn tiny_config(dir: &Path, epochs: usize) -> PathBuf {
    let mut cfg = ExperimentConfig::synthetic(4, 3);
    cfg.name = "tiny".into();
    cfg.train.epochs = epochs;
    cfg.train.batch_size = 8;
    let p = dir.join("tiny.json");
    std::fs::write(&p, cfg.to_json()).unwrap();
    p
}

fn split_sizes(json: &str) -> (usize, usize, usize) {
    let v: serde_json::Value = serde_json::from_str(json).unwrap();
    let n = |k: &str| v[k].as_array().unwrap().len();
    (n("train"), n("val"), n("test"))
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(code(d, &["no-such-command"]), 2);
    assert_eq!(code(d, &["split"]), 2);

    std::fs::write(d.join("bad.json"), "{ \"train\": { \"epochs\": \"many\" } }").unwrap();
    assert_eq!(code(d, &["--config", "bad.json", "count-params"]), 2);
    std::fs::write(d.join("zero.json"), "{ \"train\": { \"batch_size\": 0 } }").unwrap();
    assert_eq!(code(d, &["--config", "zero.json", "count-params"]), 2);

    std::fs::create_dir_all(d.join("data/boiled")).unwrap();
    assert_eq!(code(d, &["manifest", "data"]), 3);

    assert_eq!(code(d, &["--config", "missing.json", "count-params"]), 5);
    assert_eq!(code(d, &["split", "missing.json"]), 5);

    let m = fake_manifest(d, 5978);
    let m = m.to_str().unwrap();
    assert_eq!(code(d, &["split", m, "--counts", "4124,994,861"]), 2);
}

#[test]
fn split_commands() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let big = fake_manifest(d, 5978);
    let out = ok(d, &["split", big.to_str().unwrap(), "--counts", "5117,861"]);
    assert_eq!(split_sizes(&out), (5117, 0, 861));

    let small = fake_manifest(d, 100);
    let small = small.to_str().unwrap();
    assert_eq!(split_sizes(&ok(d, &["split", small, "--ratio", "0.85"])), (85, 0, 15));
    assert_eq!(
        split_sizes(&ok(d, &["split", small, "--ratio", "0.7,0.1,0.2"])),
        (70, 10, 20)
    );
    assert_eq!(code(d, &["split", small, "--ratio", "0.7,0.1"]), 2);

    ok(d, &["--seed", "5", "--out", "a.json", "split", small]);
    ok(d, &["--seed", "5", "--out", "b.json", "split", small]);
    ok(d, &["--seed", "6", "--out", "c.json", "split", small]);
    let read = |f: &str| std::fs::read(d.join(f)).unwrap();
    assert_eq!(read("a.json"), read("b.json"));
    assert_ne!(read("a.json"), read("c.json"));
}

#[test]
fn manifest_command() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_dataset_tree(&synthetic_dataset(3, 8, 0).unwrap(), d.join("data")).unwrap();
    let report = ok(d, &["--out", "m.json", "manifest", "data"]);
    assert!(report.contains("5978"), "{report}");
    let m = DatasetManifest::read(d.join("m.json")).unwrap();
    assert_eq!(m.len(), 21);
    assert_eq!(m.counts, vec![3; 7]);
}

#[test]
fn parameter_accounting() {
    let dir = tempfile::tempdir().unwrap();
    let out = ok(dir.path(), &["count-params"]);
    for n in ["22,992,167", "22,957,575", "20,815,591", "19,519,719", "17,830,439"] {
        assert!(out.contains(n), "{n} missing from\n{out}");
    }
    let none = out.lines().find(|l| l.starts_with("none")).unwrap();
    assert!(none.contains("34,592"));
    let map = ok(dir.path(), &["freeze-map"]);
    assert!(
        map.lines()
            .any(|l| l.split_whitespace().take(3).eq(["mixed3", "100", "0-100"])),
        "{map}"
    );
}

#[test]
fn grid_writes_one_row_per_cell_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d, 1);
    let args = [
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        "grid",
        "grid",
        "--batch-sizes",
        "8",
        "--freezes",
        "none",
        "--jobs",
        "2",
    ];
    ok(d, &args);
    let summary = std::fs::read_to_string(d.join("grid/summary.csv")).unwrap();
    let rows: Vec<&str> = summary.lines().skip(1).collect();
    assert_eq!(rows.len(), 3, "{summary}");
    for (row, opt) in rows.iter().zip(["sgd", "rmsprop", "adam"]) {
        assert!(row.starts_with(&format!("{opt}-b8-fnone,{opt},8,none,1,0,")), "{row}");
    }

    let log = d.join("grid/adam-b8-fnone/log.json");
    let before = std::fs::read(&log).unwrap();
    let stamp = std::fs::metadata(&log).unwrap().modified().unwrap();
    let mut resumed = args.to_vec();
    resumed.push("--resume");
    let out = run(d, &resumed);
    assert!(out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert_eq!(stderr.matches("already complete").count(), 3, "{stderr}");
    assert_eq!(std::fs::read(&log).unwrap(), before);
    assert_eq!(std::fs::metadata(&log).unwrap().modified().unwrap(), stamp);
    assert_eq!(std::fs::read_to_string(d.join("grid/summary.csv")).unwrap(), summary);
}

#[test]
fn train_eval_and_curves() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let cfg = tiny_config(d, 2);
    let cfg = cfg.to_str().unwrap();
    let out = ok(d, &["--config", cfg, "--out", "run", "train"]);
    assert!(out.contains("initial loss"), "{out}");
    let log: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("run/log.json")).unwrap()).unwrap();
    let best = log["best_epoch"].as_u64().unwrap() as usize;
    let best_acc = log["records"][best]["val_acc"].as_f64().unwrap();

    let report = ok(
        d,
        &[
            "--config",
            cfg,
            "--out",
            "eval",
            "eval",
            "--checkpoint",
            "run/checkpoints/best",
            "--split",
            "run/split.json",
        ],
    );
    let acc: f64 = report.split_whitespace().nth(1).unwrap().parse().unwrap();
    assert!((acc - best_acc).abs() < 1e-4, "{acc} vs {best_acc}\n{report}");
    for f in ["confusion.csv", "confusion.svg", "report.csv", "report.txt"] {
        assert!(d.join("eval").join(f).is_file(), "{f}");
    }
    assert!(report.contains("average"));

    ok(d, &["--out", "curves", "curves", "run/log.json"]);
    let mut files: Vec<String> = std::fs::read_dir(d.join("curves"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    files.sort();
    assert_eq!(files, ["accuracy.svg", "log.csv", "loss.svg"]);
    ok(d, &["--out", "curves_csv", "curves", "run/log.csv"]);
    assert_eq!(
        std::fs::read(d.join("curves_csv/log.csv")).unwrap(),
        std::fs::read(d.join("curves/log.csv")).unwrap()
    );
}

#[test]
fn augment_preview() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let img = ImageSample::raw(Tensor32::from_fn([3, 2, 2], |i| 10.0 * ((i % 4) + 1) as f32)).unwrap();
    write_ppm(d.join("in.ppm"), &img).unwrap();
    std::fs::write(
        d.join("zero.json"),
        r#"{"rotation_max_deg":0,"width_shift_frac":0,"height_shift_frac":0,"horizontal_flip_prob":0,"shear_frac":0,"zoom_frac":0,"fill_mode":"nearest"}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "--out",
            "id",
            "augment-preview",
            "in.ppm",
            "-n",
            "2",
            "--augment",
            "zero.json",
        ],
    );
    assert_eq!(read_ppm(d.join("id/aug_001.ppm")).unwrap(), img);

    let big = synthetic_dataset(1, 16, 2).unwrap().images[3].clone();
    write_ppm(d.join("big.ppm"), &big).unwrap();
    ok(
        d,
        &["--seed", "9", "--out", "s1", "augment-preview", "big.ppm", "-n", "3"],
    );
    ok(
        d,
        &["--seed", "9", "--out", "s2", "augment-preview", "big.ppm", "-n", "3"],
    );
    for f in ["aug_000.ppm", "aug_002.ppm", "params.json"] {
        assert_eq!(
            std::fs::read(d.join("s1").join(f)).unwrap(),
            std::fs::read(d.join("s2").join(f)).unwrap()
        );
    }
    assert_ne!(read_ppm(d.join("s1/aug_000.ppm")).unwrap(), big);

    std::fs::write(
        d.join("quarter.json"),
        r#"{"rotation_deg":90,"shift_x":0,"shift_y":0,"shear":0,"zoom":1,"flip":false,"fill_mode":"nearest"}"#,
    )
    .unwrap();
    ok(
        d,
        &[
            "--out",
            "rot",
            "augment-preview",
            "in.ppm",
            "-n",
            "1",
            "--params",
            "quarter.json",
        ],
    );
    let r = read_ppm(d.join("rot/aug_000.ppm")).unwrap();
    assert_eq!(&r.pixels.data()[..4], &[20.0, 40.0, 10.0, 30.0]);
}

#[test]
fn shipped_configs_parse() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut n = 0;
    for e in std::fs::read_dir(&dir).unwrap() {
        let p = e.unwrap().path();
        ExperimentConfig::from_json(&std::fs::read_to_string(&p).unwrap())
            .unwrap_or_else(|err| panic!("{}: {err}", p.display()));
        n += 1;
    }
    assert!(n >= 2);
}

#[test]
fn closed_stdout_is_not_a_crash() {
    use std::process::Stdio;
    let d = tempfile::tempdir().unwrap();
    let mut child = Command::new(env!("CARGO_BIN_EXE_cookstate"))
        .current_dir(d.path())
        .args(["reconcile", "--top", "100000"])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    drop(child.stdout.take());
    let out = child.wait_with_output().unwrap();
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(!err.contains("panicked"), "{err}");
    assert!(out.status.success());
}
