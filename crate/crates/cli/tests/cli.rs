//! Exit codes, help text and output formats of the command-line tool.

use std::path::Path;
use std::process::{Command, Output};

use gradevae::config::KEYS;

fn gradevae(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gradevae"))
        .args(args)
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL: &[&str] = &[
    "--set", "synth.students=30",
    "--set", "synth.courses=12",
    "--set", "synth.density=0.5",
    "--set", "model.dims.k=8",
    "--set", "model.dims.e1=8",
    "--set", "model.dims.e=4",
];

#[test]
fn help_lists_every_config_key() {
    for sub in ["train", "bench", "gen-synthetic"] {
        let out = gradevae(&[sub, "--help"]);
        assert!(out.status.success());
        let text = String::from_utf8(out.stdout).unwrap();
        for (key, _) in KEYS {
            assert!(text.contains(key), "`{sub} --help` is missing {key}");
        }
    }
}

#[test]
fn usage_errors_exit_1() {
    assert_eq!(gradevae(&["train", "--no-such-flag"]).status.code(), Some(1));
    assert_eq!(gradevae(&["frobnicate"]).status.code(), Some(1));
    let dir = tempfile::tempdir().unwrap();
    let out = gradevae(&["--set", "train.nope=1", "gen-synthetic", "--out", s(&dir.path().join("g.csv"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("train.nope"));
}

#[test]
fn missing_input_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = gradevae(&[
        "train",
        "--input",
        s(&dir.path().join("absent.csv")),
        "--out-dir",
        s(&dir.path().join("run")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

#[test]
fn train_then_evaluate_and_bench() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("grades.csv");
    let run = dir.path().join("run");
    let mut args: Vec<&str> = SMALL.to_vec();
    args.extend(["gen-synthetic", "--out", s(&data)]);
    assert!(gradevae(&args).status.success());
    assert!(dir.path().join("truth.csv").exists());

    // The documented defaults, spelled out as flags.
    let mut args: Vec<&str> = SMALL.to_vec();
    args.extend(["train", "--input", s(&data), "--out-dir", s(&run)]);
    args.extend(["--epochs", "20", "--lr", "0.1", "--dropout", "0.1"]);
    let out = gradevae(&args);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["model.gvae", "model.gvae.json", "epochs.csv", "split.csv", "metrics.csv"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let epochs = std::fs::read_to_string(run.join("epochs.csv")).unwrap();
    assert_eq!(epochs.lines().count(), 21);

    let out = gradevae(&[
        "evaluate",
        "--input",
        s(&data),
        "--checkpoint",
        s(&run.join("model.gvae")),
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("set,rmse,mae,matrix_rmse"), "{text}");

    let bench = dir.path().join("bench.csv");
    let mut args: Vec<&str> = SMALL.to_vec();
    args.extend(["bench", "--input", s(&data), "--out", s(&bench), "--epochs", "5"]);
    assert!(gradevae(&args).status.success());
    let table = std::fs::read_to_string(&bench).unwrap();
    let lines: Vec<&str> = table.lines().collect();
    assert_eq!(lines[0], "method,rmse,mae,fit_ms");
    assert_eq!(lines.len(), 8);
    assert!(lines[1].starts_with("graph-vae,"));
    // Timing columns stay zero without --timing so tables are reproducible.
    assert!(lines[1..].iter().all(|l| l.ends_with(",0")));
}
