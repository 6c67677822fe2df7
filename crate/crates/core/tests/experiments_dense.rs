mod common;

use densehybrid::data::generate_dense_toy;
use densehybrid::experiments::evaluate::score_scene;
use densehybrid::experiments::*;
use densehybrid::maps::{Label, ScoreMap};
use densehybrid::metrics::{closed_miou_images, evaluate_at_threshold, open_iou, ConfusionTally, ScoredImage};
use densehybrid::model::open_set_predict;

#[test]
fn closed_preset_exceeds_95_percent() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig::dense()
        .with_overrides(&["loss.beta2=0", "loss.beta3=0", "loss.beta4=0"])
        .unwrap();
    let r = train_hybrid(&c, dir.path()).unwrap();
    let acc = r.metric("closed_accuracy", "test").unwrap();
    assert!(acc > 0.95, "{acc}");
}

#[test]
fn default_open_set_run() {
    let dir = tempfile::tempdir().unwrap();
    let c = ExperimentConfig::dense();
    let (r, system) = run_training(&c, dir.path()).unwrap();
    let gap = r.metric("gap", "test").unwrap();
    let open = r.metric("open_miou", "test").unwrap();
    let closed = r.metric("closed_miou", "test").unwrap();
    assert!((gap - (closed - open)).abs() < 1e-15);
    // regression values of the first verified run
    assert!((gap - 0.077183).abs() < 1e-6, "{gap}");
    assert!((open - 0.922817).abs() < 1e-6, "{open:.9}");
    assert_eq!(r.heatmaps.len(), 3);
    let (h, w, px) = densehybrid::heatmap::decode_pgm(&std::fs::read(&r.heatmaps[2]).unwrap()).unwrap();
    assert_eq!((h, w, px.len()), (16, 16, 256));

    // fold-swap aggregate is the image-weighted mean of the two folds
    let world = generate_dense_toy(c.seed, &c.dataset.dense).unwrap();
    let report = evaluate_world(&system.model, &world, 0.95).unwrap();
    let folds = &report.swap.folds;
    let (na, nb) = (folds[0].1.images as f64, folds[1].1.images as f64);
    let weighted = (na * folds[0].1.open_miou + nb * folds[1].1.open_miou) / (na + nb);
    assert!((report.swap.open_miou - weighted).abs() < 1e-15);
    assert_eq!(report.swap.open_miou, r.metric("open_miou", "swap").unwrap());

    // the saved model's scored maps reproduce the test metrics from disk
    let e = evaluate_run(&c, &dir.path().join("model.ckpt"), &dir.path().join("eval")).unwrap();
    assert_eq!(e.metrics, r.metrics);
    let from_files = densehybrid::metrics::evaluate_scored_dir(&dir.path().join("eval/maps"), report.threshold).unwrap();
    assert_eq!(from_files.open_miou, open);
    assert_eq!(from_files.images, world.test.len());

    // overlapping folds are rejected
    let scenes: Vec<_> = world.calibration.iter().chain(&world.test).cloned().collect();
    assert!(evaluate_open_set(&system.model, &scenes, &[0, 1], &[1, 2, 3], 0.95).is_err());
}

#[test]
fn oracle_detector_closes_the_gap() {
    let c = common::quick(ExperimentConfig::dense());
    let dir = tempfile::tempdir().unwrap();
    let (_, system) = run_training(&c, dir.path()).unwrap();
    let world = generate_dense_toy(c.seed, &c.dataset.dense).unwrap();
    let k = c.dataset.dense.classes;
    let mut images = Vec::new();
    let mut pairs = Vec::new();
    for s in &world.test {
        let sc = score_scene(&system.model, s).unwrap();
        let truth = s.ground_truth();
        let oracle: Vec<f64> = truth
            .labels()
            .iter()
            .map(|l| f64::from(u8::from(*l == Label::Outlier)))
            .collect();
        let scores = ScoreMap::new(vec![s.height, s.width], oracle).unwrap();
        let closed_truth = densehybrid::maps::LabelMap::new(
            vec![s.height, s.width],
            truth
                .labels()
                .iter()
                .map(|l| if *l == Label::Outlier { Label::Void } else { *l })
                .collect(),
        )
        .unwrap();
        pairs.push((sc.scores.closed.clone(), closed_truth));
        let pred = open_set_predict(&sc.scores.closed, &scores, 0.5).unwrap();
        let tally = ConfusionTally::from_maps(k, &pred.labels, &truth).unwrap();
        assert!(open_iou(&tally).unwrap().mean.is_finite());
        images.push(ScoredImage {
            closed: sc.scores.closed,
            scores,
            truth,
        });
    }
    let e = evaluate_at_threshold(k, &images, 0.5).unwrap();
    let closed = closed_miou_images(k, &pairs).unwrap();
    assert!((e.open_miou - closed).abs() < 1e-12, "{} vs {closed}", e.open_miou);
}
