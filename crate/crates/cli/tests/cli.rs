use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_stackinsights"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin().current_dir(dir).args(args).output().expect("spawn stackinsights")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

/// Small corpus plus config with a short sampling schedule.
fn corpus(dir: &Path, files: &str) {
    let o = run_in(dir, &["gen-corpus", "--out", "c", "--files", files]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = dir.join("c/stackinsights.toml");
    let text = fs::read_to_string(&cfg).unwrap();
    let text = text.replace("initial_fraction = 0.01", "initial_fraction = 0.1");
    let text = text.replace("increment_fraction = 0.01", "increment_fraction = 0.1");
    let text = text.replace("max_fraction = 0.1", "max_fraction = 0.3");
    fs::write(&cfg, text).unwrap();
}

#[test]
fn run_produces_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "1200");
    let o = run_in(&dir.path().join("c"), &["run"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("\"scan_reduction\""));
    let out = dir.path().join("c/out");
    for name in [
        "corpus.jsonl",
        "profiles.json",
        "volume_clusters.csv",
        "training_set/labels.csv",
        "rounds.csv",
        "model.json",
        "predictions.csv",
        "reports/volume_map.svg",
        "reports/user_map.csv",
        "reports/scan_reduction.json",
        "timing.json",
    ] {
        assert!(out.join(name).exists(), "{name}");
    }
}

#[test]
fn stage_commands_rerun_from_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "1200");
    let c = dir.path().join("c");
    for args in [
        &["scan"][..],
        &["hotness"],
        &["cluster-volumes", "--k", "3"],
        &["features", "fit"],
        &["sample"],
        &["train", "--family", "rf"],
        &["predict"],
        &["plan", "--x-threshold", "0.005", "--y-threshold", "0.6", "--out", "maps"],
    ] {
        let o = run_in(&c, args);
        assert_eq!(code(&o), 0, "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        if args[0] == "cluster-volumes" {
            assert!(stdout(&o).starts_with("volume_id,cluster,is_representative"));
        }
    }
    let svg = fs::read_to_string(c.join("maps/volume_map.svg")).unwrap();
    assert!(svg.contains("data-quadrant"));

    let o = run_in(&c, &["features", "rank", "--top", "10"]);
    assert_eq!(code(&o), 0);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "rank,category,name,mi");
    assert_eq!(lines.len(), 11);

    let o = run_in(&c, &["eval", "--all", "--folds", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert_eq!(text.lines().count(), 5);
    for f in ["multinomial-nb", "logistic-regression", "linear-svm", "random-forest"] {
        assert!(text.contains(f), "{f}");
    }

    let o = run_in(&c, &["eval", "--family", "lr", "--grid", "0.1,1,0.1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(stdout(&o).lines().count(), 3);
}

#[test]
fn single_directory_scan() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("vol");
    fs::create_dir_all(root.join("alice")).unwrap();
    fs::write(root.join("alice/notes.txt"), "hello").unwrap();
    fs::write(root.join("top.md"), "x").unwrap();
    let o = run_in(dir.path(), &["scan", "--root", "vol", "--volume-id", "V9", "--out", "corpus.jsonl"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(dir.path().join("corpus.jsonl")).unwrap();
    assert_eq!(text.lines().count(), 2);
    assert!(text.contains("\"V9\""));
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["--config", "missing.toml", "run"]);
    assert_eq!(code(&o), 2);

    fs::create_dir(dir.path().join("v")).unwrap();
    fs::write(
        dir.path().join("bad.toml"),
        "dictionary = \"nope.toml\"\n[[volume]]\nid = \"V1\"\nroot = \"v\"\n",
    )
    .unwrap();
    let o = run_in(dir.path(), &["--config", "bad.toml", "run"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("dictionary"));
    assert!(!dir.path().join("out").exists());

    let o = run_in(dir.path(), &["hotness", "--now", "yesterday"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn stage_failures_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = run_in(dir.path(), &["predict"]);
    assert_eq!(code(&o), 3);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("predict"), "{err}");

    fs::create_dir(dir.path().join("full")).unwrap();
    fs::write(dir.path().join("full/x"), "x").unwrap();
    let o = run_in(dir.path(), &["gen-corpus", "--out", "full", "--files", "10"]);
    assert_eq!(code(&o), 3);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    corpus(dir.path(), "1500");
    let c = dir.path().join("c");
    for out in ["a", "b"] {
        let o = run_in(&c, &["--out-dir", out, "run"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    for name in [
        "predictions.csv",
        "model.json",
        "reports/volume_map.csv",
        "reports/user_map.csv",
        "reports/volume_map.svg",
        "reports/scan_reduction.json",
        "rounds.csv",
    ] {
        let a = fs::read(c.join("a").join(name)).unwrap();
        let b = fs::read(c.join("b").join(name)).unwrap();
        assert!(a == b, "{name} differs");
    }
}
