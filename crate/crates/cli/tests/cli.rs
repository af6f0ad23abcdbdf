use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ppsl::persist::{read_archive_csv, read_fronts, read_trace_csv, sha256_hex, Checkpoint, RunManifest};

fn ppsl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppsl")).args(args).env("RUST_LOG", "warn").output().expect("spawn ppsl")
}

const STATIC: &str = r#"{
  "problem": "synth-p1",
  "budget": 60,
  "initial_size": 20,
  "batch_size": 5,
  "pool_size": 40,
  "seed": 7,
  "train": {"n_tasks": 2, "n_prefs": 3, "steps": 5},
  "gp": {"steps": 10, "restarts": 0},
  "model": {"hidden": [16], "rank": 1, "hypernet_hidden": [16]},
  "evaluation": {"held_out": 3, "front_size": 20, "every": 4}
}"#;

const DYNAMIC: &str = r#"{
  "problem": "synth-d1",
  "mode": "dynamic",
  "ablation": "full",
  "initial_size": 12,
  "pool_size": 30,
  "seed": 2,
  "train": {"n_tasks": 1, "n_prefs": 4, "steps": 3},
  "gp": {"steps": 5, "restarts": 0},
  "model": {"hidden": [8], "rank": 1, "hypernet_hidden": [8]},
  "dynamic": {"severity": 3, "generations": 6, "window": 20, "front_size": 20, "igd_points": 50}
}"#;

/// Runs `config` under `root` and returns the run directory.
fn run_config(root: &Path, name: &str, config: &str) -> PathBuf {
    let cfg = root.join(format!("{name}.json"));
    fs::write(&cfg, config).unwrap();
    let out = root.join(name);
    let o = ppsl(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    PathBuf::from(String::from_utf8(o.stdout).unwrap().trim())
}

fn read_eval(dir: &Path) -> Vec<(String, String, f64)> {
    let mut r = csv::Reader::from_path(dir.join("eval").join("metrics.csv")).unwrap();
    r.records().map(|rec| {
        let rec = rec.unwrap();
        (rec[0].to_string(), rec[1].to_string(), rec[2].parse().unwrap())
    })
    .collect()
}

#[test]
fn static_run_writes_parseable_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_config(tmp.path(), "a", STATIC);
    assert!(dir.file_name().unwrap().to_str().unwrap().starts_with("synth-p1-static-"));

    let archive = read_archive_csv(&dir.join("archive.csv")).unwrap();
    assert_eq!(archive.len(), 60);
    let counters: Vec<u64> = archive.records().map(|r| r.counter).collect();
    assert_eq!(counters, (1..=60).collect::<Vec<u64>>());
    assert_eq!(read_trace_csv(&dir.join("trace.csv")).unwrap().len(), 8);
    let ckpt = Checkpoint::load(&dir.join("checkpoint.json")).unwrap();
    assert_eq!(ckpt.held_out.len(), 3);
    assert!(ckpt.surrogate.is_some());
    let fronts = read_fronts(&dir.join("fronts")).unwrap();
    assert_eq!(fronts.len(), 3);
    assert!(fronts.iter().all(|f| f.decisions.len() == 20 && f.objectives.is_some()));

    let manifest = RunManifest::load(&dir.join("manifest.json")).unwrap();
    assert_eq!(manifest.status, "complete");
    assert_eq!(manifest.evaluations, Some(60));
    for f in &manifest.files {
        let bytes = fs::read(dir.join(&f.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), f.sha256, "{}", f.path);
        assert_eq!(bytes.len() as u64, f.bytes);
    }
}

#[test]
fn rerun_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = run_config(tmp.path(), "a", STATIC);
    let b = run_config(tmp.path(), "b", STATIC);
    assert_eq!(a.file_name(), b.file_name());
    assert_eq!(fs::read(a.join("archive.csv")).unwrap(), fs::read(b.join("archive.csv")).unwrap());
}

#[test]
fn existing_run_is_not_overwritten() {
    let tmp = tempfile::tempdir().unwrap();
    run_config(tmp.path(), "a", STATIC);
    let cfg = tmp.path().join("a.json");
    let o = ppsl(&["run", cfg.to_str().unwrap(), "--out", tmp.path().join("a").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn malformed_config_exits_2_without_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cases = [
        ("bad.json", "{\n  \"problem\": \"synth-p1\",\n  \"budget\": ,\n}", Some(":3:")),
        ("unknown.json", r#"{"problem": "synth-p1", "budgett": 10}"#, Some(":1:")),
        ("invalid.json", r#"{"problem": "synth-p1", "budget": 10}"#, None),
        ("noproblem.json", r#"{"problem": "missing"}"#, None),
    ];
    for (name, text, anchor) in cases {
        let cfg = tmp.path().join(name);
        fs::write(&cfg, text).unwrap();
        let o = ppsl(&["run", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{name}");
        let err = String::from_utf8_lossy(&o.stderr);
        if let Some(a) = anchor {
            assert!(err.contains(a), "{name}: {err}");
        }
        assert!(!out.exists(), "{name}");
    }
}

#[test]
fn infer_writes_one_front_per_task() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_config(tmp.path(), "a", STATIC);
    let out = tmp.path().join("inf");
    let ckpt = dir.join("checkpoint.json");
    let o = ppsl(&["infer", ckpt.to_str().unwrap(), "--t", "0.1,0.5,1.7", "--k", "9", "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let mut index = csv::Reader::from_path(out.join("index.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = index.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 3);
    let flags: Vec<&str> = rows.iter().map(|r| &r[2]).collect();
    assert_eq!(flags, ["false", "false", "true"]);
    let (m, n) = (2, 2);
    for (i, row) in rows.iter().enumerate() {
        let mut r = csv::Reader::from_path(out.join(&row[0])).unwrap();
        let width = r.headers().unwrap().len();
        // Audits are only possible inside the parameter box.
        assert_eq!(width, if i < 2 { m + n + m } else { m + n });
        assert_eq!(r.records().count(), 9);
    }
    assert_eq!(fs::read_dir(&out).unwrap().count(), 4);

    let bad = ppsl(&["infer", ckpt.to_str().unwrap(), "--t", "0.1:0.2", "--k", "9"]);
    assert_eq!(bad.status.code(), Some(2));
}

#[test]
fn eval_on_static_run_emits_hv_rows_only() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_config(tmp.path(), "a", STATIC);
    assert!(ppsl(&["eval", dir.to_str().unwrap()]).status.success());
    let rows = read_eval(&dir);
    assert_eq!(rows.len(), 6);
    assert!(rows.iter().all(|(m, _, _)| m == "hv" || m == "hv_optimum"));

    // Final in-run metric rows agree with the recomputed ones.
    let mut logged = csv::Reader::from_path(dir.join("metrics.csv")).unwrap();
    let last: Vec<f64> = logged
        .records()
        .map(|r| r.unwrap())
        .filter(|r| &r[0] == "8")
        .map(|r| r[2].parse().unwrap())
        .collect();
    let hv: Vec<f64> = rows.iter().filter(|r| r.0 == "hv").map(|r| r.2).collect();
    assert_eq!(last, hv);
}

#[test]
fn eval_recomputes_dynamic_migd() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_config(tmp.path(), "d", DYNAMIC);
    let manifest = RunManifest::load(&dir.join("manifest.json")).unwrap();
    assert!(ppsl(&["eval", dir.to_str().unwrap()]).status.success());
    let rows = read_eval(&dir);
    let get = |m: &str| rows.iter().find(|r| r.0 == m).unwrap().2;
    assert!((get("migd") - manifest.migd.unwrap()).abs() <= 1e-12);
    assert!((get("mhv") - manifest.mhv.unwrap()).abs() <= 1e-12);
    assert_eq!(rows.iter().filter(|r| r.0 == "igd").count(), 6);
}

#[test]
fn eval_rejects_missing_or_empty_fronts() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = run_config(tmp.path(), "a", STATIC);
    fs::remove_dir_all(dir.join("fronts")).unwrap();
    fs::create_dir(dir.join("fronts")).unwrap();
    let o = ppsl(&["eval", dir.to_str().unwrap()]);
    assert!(!o.status.success());

    fs::remove_dir_all(dir.join("fronts")).unwrap();
    fs::remove_file(dir.join("archive.csv")).unwrap();
    let o = ppsl(&["eval", dir.to_str().unwrap()]);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("archive.csv") && err.contains("fronts"), "{err}");
}
