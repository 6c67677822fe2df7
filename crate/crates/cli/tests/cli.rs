use std::path::Path;

use densehybrid::experiments::{ExperimentConfig, MANIFEST};
use densehybrid_cli::{parse_threads, run, EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME};

fn lab(args: &[&str]) -> (i32, String, String) {
    let (mut out, mut err) = (Vec::new(), Vec::new());
    let argv = std::iter::once("densehybrid-lab").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn repo_configs() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn quick_flags(out: &Path) -> Vec<String> {
    let mut v: Vec<String> = [
        "schedule.pretrain_steps=40",
        "schedule.finetune_steps=40",
        "schedule.flow_pretrain_steps=20",
        "schedule.flow_sample_every=20",
        "evaluation.heatmap_resolution=8",
        "evaluation.flow_probe_samples=100",
    ]
    .iter()
    .flat_map(|s| ["--set".to_string(), s.to_string()])
    .collect();
    v.extend(["--out".into(), out.display().to_string()]);
    v
}

#[test]
fn unknown_verb_is_a_usage_error() {
    let (code, out, err) = lab(&["frobnicate"]);
    assert_eq!(code, EXIT_CONFIG);
    assert!(out.is_empty());
    assert!(err.contains("Usage") && err.contains("verify-theory"), "{err}");
    assert_eq!(lab(&[]).0, EXIT_CONFIG);
    assert_eq!(lab(&["--help"]).0, EXIT_OK);
}

#[test]
fn verify_theory_all_pass() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("theory");
    let (code, stdout, _) = lab(&[
        "verify-theory",
        "--n",
        "1000",
        "--seed",
        "7",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["all_pass"], true);
    let csv = std::fs::read_to_string(out.join("theory.csv")).unwrap();
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = header.iter().position(|h| *h == "identity_ok").unwrap();
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1000);
    assert!(rows.iter().all(|r| r.split(',').nth(col) == Some("true")));
    assert!(out.join(MANIFEST).exists());
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = dir.path().to_str().unwrap();
    assert_eq!(lab(&["train", "--set", "no.such.key=1", "--out", o]).0, EXIT_CONFIG);
    assert_eq!(lab(&["train", "--set", "mixing_b=2", "--out", o]).0, EXIT_CONFIG);
    assert_eq!(
        lab(&["train", "--config", "/nonexistent.json", "--out", o]).0,
        EXIT_CONFIG
    );
    // the default config uses real negatives only, which train-flow refuses
    let (code, _, err) = lab(&["train-flow", "--out", o]);
    assert_eq!(code, EXIT_CONFIG, "{err}");
    assert!(parse_threads(Some("0")).unwrap_err().contains("positive"));
    assert_eq!(parse_threads(Some("3")).unwrap(), Some(3));
    assert_eq!(parse_threads(None).unwrap(), None);
}

#[test]
fn shipped_configs_are_the_presets() {
    let toy = ExperimentConfig::load(&repo_configs().join("toy2d.json")).unwrap();
    let dense = ExperimentConfig::load(&repo_configs().join("dense.json")).unwrap();
    assert_eq!(toy, ExperimentConfig::toy());
    assert_eq!(dense, ExperimentConfig::dense());
}

#[test]
fn gen_data_writes_dataset_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = repo_configs().join("toy2d.json");
    let (code, stdout, _) = lab(&[
        "gen-data",
        "--config",
        cfg.to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code, EXIT_OK);
    assert!(dir.path().join(MANIFEST).exists());
    assert!(std::fs::read_dir(dir.path().join("data")).unwrap().count() > 0);
    let summary: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(summary["verb"], "gen-data");
}

#[test]
fn train_then_reuse_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let flags = quick_flags(dir.path());
    let args = |verb: &str| -> Vec<String> {
        let mut v = vec![verb.to_string(), "--seed".into(), "3".into()];
        v.extend(flags.iter().cloned());
        v
    };
    let call = |verb: &str| {
        let a = args(verb);
        lab(&a.iter().map(String::as_str).collect::<Vec<_>>())
    };
    let (code, stdout, err) = call("train");
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(err.contains("seed 3"));
    let train: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    let config: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("config.json")).unwrap()).unwrap();
    assert_eq!(config["seed"], 3);

    let (code, stdout, err) = call("eval");
    assert_eq!(code, EXIT_OK, "{err}");
    let eval: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(eval["metrics"], train["metrics"]);

    let (code, stdout, _) = call("ablate");
    assert_eq!(code, EXIT_OK);
    assert!(stdout.contains("condition_lhs"));
    assert!(dir.path().join("ablate/ablation.csv").exists());

    assert_eq!(call("heatmap").0, EXIT_OK);
    assert!(dir.path().join("heatmap/heatmap_hybrid.pgm").exists());

    let mut missing = args("eval");
    missing.extend(["--model".into(), dir.path().join("nope.ckpt").display().to_string()]);
    let (code, _, err) = lab(&missing.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, EXIT_RUNTIME, "{err}");
}

#[test]
fn flow_training_and_sweep() {
    let dir = tempfile::tempdir().unwrap();
    let mut a = vec!["train-flow".to_string(), "--set".into(), "mixing_b=0.5".into()];
    a.extend(quick_flags(&dir.path().join("flow")));
    let (code, _, err) = lab(&a.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, EXIT_OK, "{err}");
    assert!(dir.path().join("flow/flow.ckpt").exists());

    let mut s = vec!["sweep-b".to_string(), "--b".into(), "0,1".into()];
    s.extend(quick_flags(&dir.path().join("sweep")));
    let (code, stdout, err) = lab(&s.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, EXIT_OK, "{err}");
    let v: serde_json::Value = serde_json::from_str(stdout.trim()).unwrap();
    assert_eq!(v["sweep"].as_array().unwrap().len(), 2);
    assert_eq!(
        std::fs::read_to_string(dir.path().join("sweep/sweep.csv"))
            .unwrap()
            .lines()
            .count(),
        3
    );
}

#[test]
fn binary_honours_thread_env() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_densehybrid-lab");
    let run = |threads: &str| {
        std::process::Command::new(bin)
            .args(["verify-theory", "--n", "20", "--out"])
            .arg(dir.path())
            .env("DENSEHYBRID_LAB_THREADS", threads)
            .output()
            .unwrap()
    };
    let bad = run("zero");
    assert_eq!(bad.status.code(), Some(EXIT_CONFIG));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("DENSEHYBRID_LAB_THREADS"));
    let ok = run("1");
    assert_eq!(ok.status.code(), Some(EXIT_OK));
    assert!(String::from_utf8_lossy(&ok.stdout).starts_with('{'));
}
