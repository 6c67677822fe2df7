mod common;

use densehybrid::experiments::*;
use densehybrid::metrics::parse_metrics_csv;
use densehybrid::model::HybridModel;
use densehybrid::rng::{stream_rng, Stream};

#[test]
fn default_seed7_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig::toy();
    assert_eq!(c.seed, 7);
    let (r, system) = run_training(&c, dir.path()).unwrap();
    let auroc = |k: &str| r.metric(&format!("auroc_{k}"), "test").unwrap();
    let (d, g, h) = (auroc("discriminative"), auroc("generative"), auroc("hybrid"));
    assert!(h >= 0.98, "{h}");
    assert!(h >= d.max(g) - 0.005, "{d} {g} {h}");
    // regression values of the first verified run
    assert!((h - 0.997291).abs() < 1e-6, "{h}");
    assert!((d - 0.996679).abs() < 1e-6, "{d}");
    assert!((g - 0.997411).abs() < 1e-6, "{g}");
    // toy Bayes accuracy is about 0.905 (the components overlap at the origin)
    let acc = r.metric("closed_accuracy", "test").unwrap();
    assert!(acc > 0.85, "{acc}");

    // artifacts
    for name in [
        "metrics.csv",
        "theory.csv",
        "model.ckpt",
        "loss_curve.csv",
        "config.json",
        MANIFEST,
    ] {
        assert!(dir.path().join(name).exists(), "{name}");
    }
    assert_eq!(r.heatmaps.len(), 3);
    assert!(system.flow.is_none() && !dir.path().join("flow.ckpt").exists());
    let rows = parse_metrics_csv(&std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()).unwrap();
    assert_eq!(rows, r.metrics);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
    for a in manifest["artifacts"].as_array().unwrap() {
        let bytes = std::fs::read(dir.path().join(a["path"].as_str().unwrap())).unwrap();
        assert_eq!(a["sha256"].as_str().unwrap(), sha256_hex(&bytes));
    }

    // the saved model reproduces the evaluation; the ablation agrees
    let eval_dir = dir.path().join("eval");
    let e = evaluate_run(&c, &dir.path().join("model.ckpt"), &eval_dir).unwrap();
    assert_eq!(e.metrics, r.metrics);
    let (_, table) = ablate_run(&c, &dir.path().join("model.ckpt"), &dir.path().join("ablate")).unwrap();
    assert_eq!(table.auroc("hybrid"), h);
    let suff = table.sufficiency.unwrap();
    assert!(suff.implication_ok && suff.residual < 1e-10);
    if suff.improved {
        assert!(suff.lhs < 0.0);
    }
    assert!(ablate_run(&c, &dir.path().join("missing.ckpt"), &dir.path().join("x")).is_err());
}

#[test]
fn closed_preset_is_a_plain_classifier() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = common::quick(ExperimentConfig::toy());
    c.loss = densehybrid::losses::LossWeights::closed_set();
    c.lse_penalty = 0.0;
    let (_, system) = run_training(&c, dir.path()).unwrap();
    let init = HybridModel::new(&c.model_config(), &mut stream_rng(c.seed, Stream::ModelInit)).unwrap();
    assert_eq!(system.model.posterior_head(), init.posterior_head());
    assert_ne!(system.model.feature_extractor(), init.feature_extractor());
}

#[test]
fn reruns_are_byte_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = common::quick(ExperimentConfig::toy())
        .with_override("mixing_b=0.5")
        .unwrap();
    train_joint_with_flow(&c, a.path()).unwrap();
    train_joint_with_flow(&c, b.path()).unwrap();
    let (x, y) = (common::artifacts(a.path()), common::artifacts(b.path()));
    assert!(x.contains_key("heatmap_hybrid.pgm") && x.contains_key("flow_samples.csv"));
    assert_eq!(x, y);
    assert_eq!(
        std::fs::read(a.path().join(MANIFEST)).unwrap(),
        std::fs::read(b.path().join(MANIFEST)).unwrap()
    );
    // joint training refuses a config without flow negatives
    assert!(train_joint_with_flow(&ExperimentConfig::toy(), a.path()).is_err());
}

#[test]
fn constant_detector_ap_is_prevalence() {
    let out: Vec<bool> = (0..40).map(|i| i % 4 == 0).collect();
    let flat = vec![0.5; 40];
    let ramp: Vec<f64> = (0..40).map(|i| i as f64).collect();
    let t = ablation_table(&[("constant", &flat[..]), ("ramp", &ramp[..])], &out).unwrap();
    assert_eq!(t.get("constant").unwrap().ap, 0.25);
    assert_eq!(t.get("constant").unwrap().auroc, 0.5);
    assert!(t.sufficiency.is_none());
}
