use std::path::Path;
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn autoreview(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_autoreview"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("run autoreview")
}

fn ok(args: &[&str]) -> Output {
    let out = autoreview(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    out
}

/// The JSON summary printed as the last line of standard output.
fn summary(out: &Output) -> Value {
    let text = String::from_utf8_lossy(&out.stdout);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// A small simulated corpus and a bundle trained on it with `train`.
fn workspace() -> &'static (TempDir, std::path::PathBuf, std::path::PathBuf) {
    static CELL: OnceLock<(TempDir, std::path::PathBuf, std::path::PathBuf)> = OnceLock::new();
    CELL.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let data = dir.path().join("data");
        let models = dir.path().join("models");
        ok(&["simulate", "--seed", "5", "--out", p(&data), "--train", "200", "--validation", "60", "--test", "40"]);
        ok(&["train", "--data", p(&data), "--models", p(&models)]);
        (dir, data, models)
    })
}

#[test]
fn unknown_subcommand_is_a_config_error() {
    let out = autoreview(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));
    assert_eq!(autoreview(&["review", "--help"]).status.code(), Some(0));
}

#[test]
fn missing_input_is_a_config_error_and_bad_data_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let nowhere = dir.path().join("nowhere");
    let out = autoreview(&["isolate", "--corpus", p(&nowhere), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));

    let bad = dir.path().join("bad");
    std::fs::create_dir_all(&bad).unwrap();
    std::fs::write(bad.join("calls.jsonl"), "{not json\n").unwrap();
    std::fs::write(bad.join("records.jsonl"), "").unwrap();
    let out = autoreview(&["isolate", "--corpus", p(&bad), "--out", p(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn unreachable_remote_backend_is_a_remote_error() {
    let (dir, data, models) = workspace();
    let remote = dir.path().join("remote.toml");
    std::fs::write(
        &remote,
        "endpoint = \"http://127.0.0.1:9/v1/complete\"\nmax_attempts = 1\ntimeout_ms = 500\n",
    )
    .unwrap();
    let out = autoreview(&[
        "review",
        "--corpus",
        p(&data.join("test")),
        "--models",
        p(models),
        "--backend",
        "remote",
        "--remote-config",
        p(&remote),
        "--out",
        p(&dir.path().join("remote-decisions.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn zero_noise_corpus_scores_perfectly() {
    let (dir, _, models) = workspace();
    let clean = dir.path().join("clean");
    ok(&["simulate", "--seed", "9", "--zero-noise", "--out", p(&clean), "--train", "0", "--validation", "0", "--test", "40"]);
    for strategy in ["extract", "verify"] {
        let out = ok(&["eval", "--corpus", p(&clean.join("test")), "--models", p(models), "--strategy", strategy]);
        let report = &summary(&out)["report"];
        for (field, m) in report["per_field"].as_object().unwrap() {
            assert_eq!(m["f1"], 1.0, "{strategy} {field}");
        }
    }
}

#[test]
fn builtin_pseudo_labels_skip_nothing() {
    let (dir, data, _) = workspace();
    let out = ok(&[
        "pseudo-label",
        "--corpus",
        p(&data.join("train")),
        "--out",
        p(&dir.path().join("pl-check.jsonl")),
    ]);
    let s = summary(&out);
    assert_eq!(s["skipped"], 0);
    assert!(s["examples"].as_u64().unwrap() > 0);
}

#[test]
fn staged_training_matches_one_shot_training() {
    let (_, data, models) = workspace();
    let dir = tempfile::tempdir().unwrap();
    let staged = dir.path().join("staged");
    let pl = dir.path().join("pl.jsonl");
    ok(&["pseudo-label", "--corpus", p(&data.join("train")), "--out", p(&pl)]);
    ok(&["train-aec", "--examples", p(&pl), "--models", p(&staged)]);
    ok(&["train-aed", "--examples", p(&pl), "--models", p(&staged)]);
    ok(&[
        "train-verifier",
        "--train",
        p(&data.join("train")),
        "--validation",
        p(&data.join("validation")),
        "--models",
        p(&staged),
    ]);
    let mut names: Vec<_> = std::fs::read_dir(models).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names.len(), 8);
    for name in names {
        let a = std::fs::read(models.join(&name)).unwrap();
        let b = std::fs::read(staged.join(&name)).unwrap();
        assert!(a == b, "{name:?} differs");
    }
}

#[test]
fn reruns_are_byte_identical() {
    let (_, data, models) = workspace();
    let dir = tempfile::tempdir().unwrap();
    let run = |tag: &str| {
        let sim = dir.path().join(format!("sim-{tag}"));
        ok(&["simulate", "--seed", "3", "--out", p(&sim), "--train", "20", "--validation", "5", "--test", "5"]);
        let iso = dir.path().join(format!("iso-{tag}.jsonl"));
        ok(&["isolate", "--corpus", p(&data.join("test")), "--out", p(&iso)]);
        let fixed = dir.path().join(format!("fixed-{tag}"));
        ok(&["correct", "--corpus", p(&data.join("test")), "--models", p(models), "--out", p(&fixed)]);
        let dec = dir.path().join(format!("dec-{tag}.jsonl"));
        ok(&["review", "--corpus", p(&data.join("test")), "--models", p(models), "--out", p(&dec)]);
        let rep = dir.path().join(format!("rep-{tag}.json"));
        ok(&["eval", "--corpus", p(&data.join("test")), "--models", p(models), "--decisions", p(&dec), "--out", p(&rep)]);
        let abl = ok(&["ablate", "--corpus", p(&data.join("test")), "--models", p(models), "--n", "1,3"]);
        let table: String = String::from_utf8_lossy(&abl.stdout).lines().filter(|l| !l.starts_with('{')).collect();
        let mut files = Vec::new();
        for split in ["train", "validation", "test"] {
            for f in ["calls.jsonl", "records.jsonl", "references.jsonl"] {
                files.push(std::fs::read(sim.join(split).join(f)).unwrap());
            }
        }
        files.push(std::fs::read(iso).unwrap());
        files.push(std::fs::read(fixed.join("calls.jsonl")).unwrap());
        files.push(std::fs::read(dec).unwrap());
        files.push(std::fs::read(rep).unwrap());
        files.push(table.into_bytes());
        files
    };
    assert_eq!(run("a"), run("b"));
}

#[test]
fn ablation_prints_one_row_per_field_and_n() {
    let (_, data, models) = workspace();
    let out = ok(&["ablate", "--corpus", p(&data.join("test")), "--models", p(models), "--n", "1,2,10"]);
    let text = String::from_utf8_lossy(&out.stdout);
    let rows: Vec<&str> = text.lines().skip(1).filter(|l| !l.starts_with('{')).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 3);
        let f1: f64 = cols[2].parse().unwrap();
        assert!((0.0..=1.0).contains(&f1));
    }
    let out = autoreview(&["ablate", "--corpus", p(&data.join("test")), "--models", p(models), "--n", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
