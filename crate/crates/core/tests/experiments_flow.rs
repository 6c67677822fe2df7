mod common;

use densehybrid::experiments::*;

#[test]
fn flow_negatives_match_real_negatives() {
    let dir = tempfile::tempdir().unwrap();
    let real = train_hybrid(&ExperimentConfig::toy(), &dir.path().join("real")).unwrap();
    let synth = ExperimentConfig::toy().with_override("mixing_b=0").unwrap();
    let synth = train_joint_with_flow(&synth, &dir.path().join("flow")).unwrap();
    let (a, b) = (
        real.metric("auroc_hybrid", "test").unwrap(),
        synth.metric("auroc_hybrid", "test").unwrap(),
    );
    assert!((a - b).abs() <= 0.03, "real {a} vs flow {b}");
    assert!(dir.path().join("flow/flow.ckpt").exists());
    let samples = std::fs::read_to_string(dir.path().join("flow/flow_samples.csv")).unwrap();
    assert!(samples.starts_with("step,index,x0,x1\n"));
    assert_eq!(samples.lines().count(), 1 + 5 * 16);
}

#[test]
fn boundary_term_lowers_confidence_on_generated_samples() {
    let dir = tempfile::tempdir().unwrap();
    let conf = |lambda: f64| {
        let mut c = ExperimentConfig::toy().with_override("mixing_b=0").unwrap();
        c.flow_objective.lambda = lambda;
        let r = train_hybrid(&c, &dir.path().join(format!("l{lambda}"))).unwrap();
        r.metric("flow_sample_confidence", "flow").unwrap()
    };
    let (with, without) = (conf(0.03), conf(0.0));
    assert!(with < without, "{with} vs {without}");
}

#[test]
fn mixing_sweep_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::quick(ExperimentConfig::toy());
    let (report, rows) = sweep_mixing(&c, &[0.0, 0.5, 1.0], dir.path()).unwrap();
    assert_eq!(rows.len(), 3);
    let csv = std::fs::read_to_string(dir.path().join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    for r in &rows {
        for name in COMPONENTS {
            let s = r.table.get(name).unwrap();
            assert!(s.ap.is_finite() && s.fpr95.is_finite() && s.auroc.is_finite());
        }
    }
    assert!(report.manifest.exists());

    // b = 1 is the real-negative default run
    let solo = train_hybrid(&c, &dir.path().join("solo")).unwrap();
    let last = &rows[2];
    assert_eq!(last.b, 1.0);
    assert_eq!(
        std::fs::read(solo.metrics_csv.unwrap()).unwrap(),
        std::fs::read(last.run.metrics_csv.as_ref().unwrap()).unwrap()
    );
    assert_eq!(
        ablate_dataset(
            &load_model(&solo.dir.join("model.ckpt")).unwrap(),
            &Dataset::generate(&c).unwrap()
        )
        .unwrap(),
        last.table
    );
}

#[test]
fn alternative_flow_objective_trains() {
    let dir = tempfile::tempdir().unwrap();
    let c = common::quick(ExperimentConfig::toy())
        .with_overrides(&["mixing_b=0", "flow_loss=alt"])
        .unwrap();
    let r = train_joint_with_flow(&c, dir.path()).unwrap();
    assert!(r.metric("auroc_hybrid", "test").unwrap().is_finite());
    let curve = std::fs::read_to_string(dir.path().join("loss_curve.csv")).unwrap();
    assert!(curve.lines().any(|l| l.contains(",finetune,")));
    assert!(curve.lines().any(|l| l.contains(",flow_pretrain,")));
}
