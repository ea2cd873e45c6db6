use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

const STAGE_DIRS: [&str; 6] = ["calibrate", "collect", "klst", "grpo", "eval", "export"];

fn mixroute(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mixroute"))
        .arg("--out")
        .arg(out)
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, text: &str) -> String {
    let p = dir.join("run.toml");
    fs::write(&p, text).unwrap();
    p.to_string_lossy().into_owned()
}

fn read_json(p: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

/// Every file under `root`, relative path to bytes.
fn snapshot(root: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn calibrate_creates_output_dir_and_histogram() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("nested/run");
    let o = mixroute(&out, &["calibrate"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("calibrate/histogram.csv").is_file());
    let report = read_json(&out.join("calibrate/calibration.json"));
    assert_eq!(report["violations"].as_array().unwrap().len(), 0);
}

#[test]
fn equal_divergence_modes_fail_calibration() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[env]\ndivergence_low = 0.5\ndivergence_high = 0.5\n");
    let o = mixroute(&tmp.path().join("out"), &["--config", &cfg, "calibrate", "--episodes", "20"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("modes overlap"), "{}", stderr(&o));
}

#[test]
fn invalid_config_lists_every_problem_and_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(
        tmp.path(),
        "[env]\nembed_dim = 32\n[router]\nnum_precisions = 3\n[klst.labeling]\ntau = 1.2\n",
    );
    let out = tmp.path().join("out");
    let o = mixroute(&out, &["--config", &cfg, "pipeline"]);
    assert_eq!(code(&o), 2);
    let err = stderr(&o);
    for needle in ["embed_dim", "num_precisions", "tau"] {
        assert!(err.contains(needle), "missing {needle}: {err}");
    }
    assert!(!out.exists());
}

#[test]
fn section_seed_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[grpo.train]\nseed = 5\n");
    let o = mixroute(&tmp.path().join("out"), &["--config", &cfg, "collect"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn baseline_only_eval_needs_no_checkpoint() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = mixroute(&out, &["eval", "--episodes", "40", "--baselines-only"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report = read_json(&out.join("eval/report.json"));
    assert_eq!(report.as_array().unwrap().len(), 6);

    let o = mixroute(&tmp.path().join("other"), &["eval", "--episodes", "40"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn missing_and_mismatched_upstream_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    assert_eq!(code(&mixroute(&out, &["train-klst"])), 4);

    let o = mixroute(&out, &["collect", "--episodes", "30"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let manifest = out.join("collect/manifest.json");
    let o = mixroute(&out, &["train-grpo", "--init", manifest.to_str().unwrap()]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("not a router checkpoint"), "{}", stderr(&o));

    let o = mixroute(&out, &["--seed", "1", "train-klst", "--episodes", "30"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
    assert!(stderr(&o).contains("seed"), "{}", stderr(&o));

    let o = mixroute(&out, &["train-klst", "--episodes", "30", "--tau", "0.9"]);
    assert_eq!(code(&o), 0, "labeling is downstream of collection: {}", stderr(&o));

    let records = out.join("collect/records.jsonl");
    let mut bytes = fs::read(&records).unwrap();
    bytes.push(b'\n');
    fs::write(&records, bytes).unwrap();
    let o = mixroute(&out, &["train-klst", "--episodes", "30"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn reruns_and_replays_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let cfg = write_config(tmp.path(), "seed = 3\n[klst]\nepisodes = 40\n[grpo.train]\nepisode_budget = 16\n");
    for (out, workers) in [(&a, "1"), (&b, "2")] {
        for cmd in ["collect", "train-klst", "train-grpo"] {
            let o = mixroute(out, &["--config", &cfg, "--workers", workers, cmd]);
            assert_eq!(code(&o), 0, "{cmd}: {}", stderr(&o));
        }
    }
    let first = snapshot(&a);
    assert_eq!(first, snapshot(&b));

    for dir in ["collect", "klst", "grpo"] {
        for e in fs::read_dir(a.join(dir)).unwrap() {
            let p = e.unwrap().path();
            if p.file_name().unwrap() != "manifest.json" {
                fs::remove_file(p).unwrap();
            }
        }
        let m = a.join(dir).join("manifest.json");
        let o = Command::new(env!("CARGO_BIN_EXE_mixroute"))
            .args(["replay", m.to_str().unwrap()])
            .env("RUST_LOG", "warn")
            .output()
            .unwrap();
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(first, snapshot(&a));
}

#[test]
fn default_pipeline_beats_random_routing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let cfg = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/default.toml");
    let o = mixroute(&out, &["--config", cfg, "pipeline"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for dir in STAGE_DIRS {
        assert!(out.join(dir).join("manifest.json").is_file(), "{dir} manifest missing");
    }
    let summary = read_json(&out.join("export/summary.json"));
    let best_random = summary["best_random"]["GHC"].as_f64().unwrap();
    let methods = summary["methods"].as_array().unwrap();
    for name in ["router@klst", "router@grpo"] {
        let m = methods.iter().find(|m| m["method"] == name).unwrap();
        let ghc = m["GHC"].as_f64().unwrap();
        assert!(ghc > best_random, "{name}: GHC {ghc} vs best random {best_random}");
    }
    let grpo = read_json(&out.join("grpo/manifest.json"));
    assert!(grpo["details"]["lr_scale"].as_f64().unwrap() >= 1.0);
}
