use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &[&str] = &[
    "--n-samples", "40", "--n-vars", "3", "--hidden", "8", "--n-heads", "2", "--n-blocks", "1", "--max-epochs", "2",
    "--patience", "2", "--batch-size", "8",
];

fn ait(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ait"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env("AIT_THREADS", "2")
        .output()
        .unwrap()
}

fn ok(out: &Path, args: &[&str]) -> String {
    let o = ait(out, args);
    let stdout = String::from_utf8_lossy(&o.stdout).to_string();
    assert!(o.status.success(), "{args:?}\n{stdout}\n{}", String::from_utf8_lossy(&o.stderr));
    stdout
}

fn run_dir(out: &Path, command: &str) -> PathBuf {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(out)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with(&format!("{command}-")))
        .collect();
    dirs.sort();
    dirs.pop().unwrap()
}

fn with(base: &[&str], extra: &[&'static str]) -> Vec<String> {
    base.iter().chain(extra).map(|s| s.to_string()).collect()
}

fn strs(v: &[String]) -> Vec<&str> {
    v.iter().map(String::as_str).collect()
}

#[test]
fn help_lists_every_command() {
    let o = Command::new(env!("CARGO_BIN_EXE_ait")).arg("--help").output().unwrap();
    let text = String::from_utf8_lossy(&o.stdout);
    for cmd in ["gen-data", "train", "eval", "ablate", "gradcheck", "equiv-regular", "export-weights"] {
        assert!(text.contains(cmd), "{cmd}");
    }
}

#[test]
fn gen_data_writes_dataset_and_marks_completion() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gen-data", "--n-samples", "10", "--seeds", "1,2"]);
    assert!(stdout.contains("#Samples"));
    let run = run_dir(dir.path(), "gen-data");
    assert!(run.join("data-seed1.jsonl").exists() && run.join("data-seed2.jsonl").exists());
    assert!(run.join("config.toml").exists());
    assert!(!run.join("INCOMPLETE").exists());
    let cfg = std::fs::read_to_string(run.join("config.toml")).unwrap();
    assert!(cfg.contains("n_samples = 10"));
}

#[test]
fn train_is_reproducible_and_feeds_eval_and_export() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    let args = with(&["train", "--seed", "3"], SMALL);
    ok(&a, &strs(&args));
    ok(&b, &strs(&args));
    let (ra, rb) = (run_dir(&a, "train").join("seed-3"), run_dir(&b, "train").join("seed-3"));
    for f in ["checkpoint.ait", "metrics.json", "history.tsv", "train_report.json", "timing.json"] {
        assert!(ra.join(f).exists(), "{f}");
    }
    for f in ["checkpoint.ait", "metrics.json"] {
        assert_eq!(std::fs::read(ra.join(f)).unwrap(), std::fs::read(rb.join(f)).unwrap(), "{f}");
    }
    let history = std::fs::read_to_string(ra.join("history.tsv")).unwrap();
    assert_eq!(history.lines().count(), 3);

    let ck = ra.join("checkpoint.ait").display().to_string();
    let eval = with(&["eval", "--seed", "3", "--checkpoint", &ck], SMALL);
    let stdout = ok(&a, &strs(&eval));
    assert!(stdout.contains("mean baseline"));
    let saved: serde_json::Value = serde_json::from_slice(&std::fs::read(ra.join("metrics.json")).unwrap()).unwrap();
    let again: serde_json::Value =
        serde_json::from_slice(&std::fs::read(run_dir(&a, "eval").join("metrics-seed3.json")).unwrap()).unwrap();
    assert_eq!(saved["mse"], again["mse"]);

    let raw = with(&["eval", "--seed", "3", "--raw-units", "--checkpoint", &ck], SMALL);
    let stdout = ok(&b, &strs(&raw));
    assert!(stdout.contains("Raw"));

    let export = with(&["export-weights", "--seed", "3", "--checkpoint", &ck], SMALL);
    ok(&a, &strs(&export));
    let grids: Vec<_> = std::fs::read_dir(run_dir(&a, "export-weights"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().to_string())
        .filter(|n| n.ends_with(".tsv"))
        .collect();
    assert!(!grids.is_empty());
}

#[test]
fn config_file_and_overrides_combine() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.toml");
    std::fs::write(&path, "n_samples = 12\nn_vars = 2\n").unwrap();
    let p = path.display().to_string();
    ok(dir.path(), &["gen-data", "--config", &p, "--n-vars", "4"]);
    let cfg = std::fs::read_to_string(run_dir(dir.path(), "gen-data").join("config.toml")).unwrap();
    assert!(cfg.contains("n_samples = 12") && cfg.contains("n_vars = 4"));
}

#[test]
fn invalid_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        vec!["train", "--variant", "bogus"],
        vec!["train", "--hidden", "6", "--n-heads", "4"],
        vec!["train", "--no-such-flag"],
        vec!["export-weights"],
    ] {
        let o = ait(dir.path(), &args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn gradcheck_passes_on_toy_model() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(dir.path(), &["gradcheck", "--variant", "rp_tsmlp"]);
    assert!(stdout.contains("all parameters pass"));
    let tsv = std::fs::read_to_string(run_dir(dir.path(), "gradcheck").join("gradcheck.tsv")).unwrap();
    assert!(tsv.lines().skip(1).all(|l| l.ends_with("PASS")));
}

#[test]
fn ablate_and_equivalence_produce_tables() {
    let dir = tempfile::tempdir().unwrap();
    let args = with(&["ablate", "--seeds", "0,1"], SMALL);
    let stdout = ok(dir.path(), &strs(&args));
    for v in ["full", "rm_spattf", "rm_statve", "rp_tsmlp", "mean"] {
        assert!(stdout.contains(v), "{v}");
    }
    let run = run_dir(dir.path(), "ablate");
    assert!(run.join("ablation.md").exists() && run.join("ablation.json").exists());

    let args = with(
        &["equiv-regular", "--regular-l-in", "8", "--regular-l-out", "4", "--alinear-d", "4"],
        SMALL,
    );
    let stdout = ok(dir.path(), &strs(&args));
    assert!(stdout.contains("relative MSE difference"));
    let fig = run_dir(dir.path(), "equiv-regular").join("seed-0/weights");
    assert!(fig.join("alinear_default.tsv").exists() && fig.join("static_linear.tsv").exists());
}
