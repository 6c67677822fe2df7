//! Evaluation: component ablation, toy detection, dense open-set protocol.

use super::config::ExperimentConfig;
use crate::data::{DenseToyScene, DenseToyWorld, Toy2dDataset};
use crate::error::{Error, Result};
use crate::flow::CouplingFlow;
use crate::maps::{Label, LabelMap, ScoreMap};
use crate::metrics::{
    calibrate_threshold, closed_miou_images, cross_calibrate, detection_samples, evaluate_at_threshold, summarize,
    CrossCalibration, DetectionSample, DetectionSummary, Fold, MetricRow, OpenSetEvaluation, ScoredImage,
};
use crate::model::{class_posterior, dense_scores, DenseScores, HybridModel};
use crate::numerics::Tensor;
use crate::rng::{stream_rng, Stream};
use crate::theory::{signed_labels, standardize, verify_sufficiency, SufficiencyReport};

pub const COMPONENTS: [&str; 3] = ["discriminative", "generative", "hybrid"];

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub score: String,
    pub summary: DetectionSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    /// Ensemble analysis of the first two scores, when both vary.
    pub sufficiency: Option<SufficiencyReport>,
}

impl AblationTable {
    pub fn get(&self, score: &str) -> Option<&DetectionSummary> {
        self.rows.iter().find(|r| r.score == score).map(|r| &r.summary)
    }

    pub fn auroc(&self, score: &str) -> f64 {
        self.get(score).map_or(f64::NAN, |s| s.auroc)
    }

    pub fn metric_rows(&self, split: &str, seed: u64) -> Vec<MetricRow> {
        let mut out = Vec::new();
        for r in &self.rows {
            let s = &r.summary;
            out.push(MetricRow::new(format!("ap_{}", r.score), split, s.ap, None, seed));
            out.push(MetricRow::new(format!("auroc_{}", r.score), split, s.auroc, None, seed));
            out.push(MetricRow::new(
                format!("fpr95_{}", r.score),
                split,
                s.fpr95,
                Some(s.threshold95),
                seed,
            ));
        }
        if let Some(r) = &self.sufficiency {
            let st = &r.stats;
            for (name, v) in [
                ("rho", st.rho),
                ("alpha", st.alpha),
                ("e", st.e),
                ("c1", st.c1),
                ("c2", st.c2),
                ("condition_lhs", r.lhs),
                ("error_d", st.error_d),
                ("error_g", st.error_g),
                ("error_h", st.error_h),
            ] {
                out.push(MetricRow::new(name, split, v, None, seed));
            }
        }
        out
    }
}

/// Ablation over arbitrary named detectors sharing one ground truth.
pub fn ablation_table(named: &[(&str, &[f64])], is_outlier: &[bool]) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (name, scores) in named {
        if scores.len() != is_outlier.len() {
            return Err(Error::ShapeMismatch(format!(
                "detector {name} scores {} elements",
                scores.len()
            )));
        }
        let samples: Vec<DetectionSample> = scores
            .iter()
            .zip(is_outlier)
            .map(|(&s, &o)| DetectionSample::new(s, o))
            .collect();
        rows.push(AblationRow {
            score: name.to_string(),
            summary: summarize(&samples)?,
        });
    }
    let sufficiency = match named {
        [(_, d), (_, g), ..] => match (standardize(d), standardize(g)) {
            (Ok(d), Ok(g)) => Some(verify_sufficiency(&d, &g, &signed_labels(is_outlier))?),
            _ => None,
        },
        _ => None,
    };
    Ok(AblationTable { rows, sufficiency })
}

/// `s_D`, `s_G`, `s_H` of `model` on labelled elements.
pub fn ablate_components(model: &HybridModel, inputs: &Tensor, is_outlier: &[bool]) -> Result<AblationTable> {
    let s = dense_scores(model, inputs, vec![inputs.rows()])?;
    ablation_table(
        &[
            (COMPONENTS[0], s.discriminative.values()),
            (COMPONENTS[1], s.generative.values()),
            (COMPONENTS[2], s.hybrid.values()),
        ],
        is_outlier,
    )
}

fn argmax_accuracy(closed: &LabelMap, truth: &[u16]) -> f64 {
    let hits = closed
        .labels()
        .iter()
        .zip(truth)
        .filter(|(l, &t)| l.class() == Some(t as usize))
        .count();
    hits as f64 / truth.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyEvaluation {
    pub closed_accuracy: f64,
    pub ablation: AblationTable,
}

/// Test inliers against the anomaly ring.
pub fn evaluate_toy(model: &HybridModel, data: &Toy2dDataset) -> Result<ToyEvaluation> {
    let closed = dense_scores(model, &data.test, vec![data.test.rows()])?.closed;
    let inputs = Tensor::concat_rows(&[&data.test, &data.anomalies])?;
    let mut is_outlier = vec![false; data.test.rows()];
    is_outlier.extend(std::iter::repeat_n(true, data.anomalies.rows()));
    Ok(ToyEvaluation {
        closed_accuracy: argmax_accuracy(&closed, &data.test_labels),
        ablation: ablate_components(model, &inputs, &is_outlier)?,
    })
}

/// Mean max-softmax of the classifier on `n` flow samples drawn at `temperature`.
pub fn flow_sample_confidence(
    model: &HybridModel,
    flow: &CouplingFlow,
    temperature: f64,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let z = flow.sample_latent_tempered(n, temperature, &mut stream_rng(seed, Stream::Probe));
    let x = flow.inverse(&z)?.sample;
    let pass = model.forward(&x)?;
    let mut total = 0.0;
    for r in 0..pass.logits.rows() {
        total += class_posterior(pass.logits.row(r))?.into_iter().fold(0.0, f64::max);
    }
    Ok(total / n.max(1) as f64)
}

#[derive(Clone, Debug)]
pub struct ScoredScene {
    pub scores: DenseScores,
    pub truth: LabelMap,
}

pub fn score_scene(model: &HybridModel, scene: &DenseToyScene) -> Result<ScoredScene> {
    let scores = dense_scores(model, &scene.features, vec![scene.height, scene.width])?;
    Ok(ScoredScene {
        scores,
        truth: scene.ground_truth(),
    })
}

fn as_image(s: &ScoredScene) -> ScoredImage {
    ScoredImage {
        closed: s.scores.closed.clone(),
        scores: s.scores.hybrid.clone(),
        truth: s.truth.clone(),
    }
}

/// Hybrid-scored images of `scenes`.
pub fn scored_images(model: &HybridModel, scenes: &[DenseToyScene]) -> Result<Vec<ScoredImage>> {
    scenes.iter().map(|s| Ok(as_image(&score_scene(model, s)?))).collect()
}

#[derive(Clone, Debug)]
pub struct OpenSetReport {
    pub threshold: f64,
    pub test: OpenSetEvaluation,
    pub swap: CrossCalibration,
    /// Pixel accuracy of the closed-set prediction on non-anomalous test pixels.
    pub closed_accuracy: f64,
    pub ablation: AblationTable,
}

impl OpenSetReport {
    pub fn metric_rows(&self, seed: u64) -> Vec<MetricRow> {
        let t = Some(self.threshold);
        let mut rows = vec![
            MetricRow::new("closed_accuracy", "test", self.closed_accuracy, None, seed),
            MetricRow::new("closed_miou", "test", self.test.closed_miou, None, seed),
            MetricRow::new("open_miou", "test", self.test.open_miou, t, seed),
            MetricRow::new("mean_f1", "test", self.test.mean_f1, t, seed),
            MetricRow::new("gap", "test", self.test.gap, t, seed),
        ];
        for (name, e) in &self.swap.folds {
            let split = format!("swap_{name}");
            rows.push(MetricRow::new(
                "open_miou",
                split.as_str(),
                e.open_miou,
                Some(e.threshold),
                seed,
            ));
            rows.push(MetricRow::new(
                "mean_f1",
                split.as_str(),
                e.mean_f1,
                Some(e.threshold),
                seed,
            ));
        }
        rows.push(MetricRow::new("open_miou", "swap", self.swap.open_miou, None, seed));
        rows.push(MetricRow::new("mean_f1", "swap", self.swap.mean_f1, None, seed));
        rows.push(MetricRow::new("gap", "swap", self.swap.gap, None, seed));
        rows.extend(self.ablation.metric_rows("test", seed));
        rows
    }
}

/// Calibrates on the `calibration` scenes at `target` TPR of the hybrid score,
/// evaluates the `test` scenes, and runs the two-fold swap on `test`.
pub fn evaluate_open_set(
    model: &HybridModel,
    scenes: &[DenseToyScene],
    calibration: &[usize],
    test: &[usize],
    target: f64,
) -> Result<OpenSetReport> {
    if calibration.iter().any(|i| test.contains(i)) {
        return Err(Error::InvalidArgument("calibration and test folds overlap".into()));
    }
    if calibration.is_empty() || test.len() < 2 || calibration.iter().chain(test).any(|&i| i >= scenes.len()) {
        return Err(Error::InvalidArgument(
            "folds need >= 1 calibration and >= 2 test scenes in range".into(),
        ));
    }
    let classes = model.classes();
    let score = |idx: &[usize]| {
        idx.iter()
            .map(|&i| score_scene(model, &scenes[i]))
            .collect::<Result<Vec<_>>>()
    };
    let cal = score(calibration)?;
    let tst = score(test)?;
    let cal_images: Vec<ScoredImage> = cal.iter().map(as_image).collect();
    let test_images: Vec<ScoredImage> = tst.iter().map(as_image).collect();
    let threshold = calibrate_threshold(&detection_samples(&cal_images), target)?;
    let eval = evaluate_at_threshold(classes, &test_images, threshold)?;
    let half = test_images.len() / 2;
    let folds = [
        Fold {
            name: "a".into(),
            images: test_images[..half].to_vec(),
        },
        Fold {
            name: "b".into(),
            images: test_images[half..].to_vec(),
        },
    ];
    let swap = cross_calibrate(classes, &folds, target)?;

    let (mut hits, mut total) = (0usize, 0usize);
    for s in &tst {
        for (p, t) in s.scores.closed.labels().iter().zip(s.truth.labels()) {
            if let Label::Class(_) = t {
                total += 1;
                hits += usize::from(p == t);
            }
        }
    }
    let mut d = Vec::new();
    let mut g = Vec::new();
    let mut h = Vec::new();
    let mut out = Vec::new();
    for s in &tst {
        d.extend_from_slice(s.scores.discriminative.values());
        g.extend_from_slice(s.scores.generative.values());
        h.extend_from_slice(s.scores.hybrid.values());
        out.extend(s.truth.labels().iter().map(|l| *l == Label::Outlier));
    }
    let ablation = ablation_table(
        &[
            (COMPONENTS[0], &d[..]),
            (COMPONENTS[1], &g[..]),
            (COMPONENTS[2], &h[..]),
        ],
        &out,
    )?;
    Ok(OpenSetReport {
        threshold,
        test: eval,
        swap,
        closed_accuracy: hits as f64 / total.max(1) as f64,
        ablation,
    })
}

/// The standard split: calibration scenes, then test scenes.
pub fn evaluate_world(model: &HybridModel, world: &DenseToyWorld, target: f64) -> Result<OpenSetReport> {
    let scenes: Vec<DenseToyScene> = world.calibration.iter().chain(&world.test).cloned().collect();
    let cal: Vec<usize> = (0..world.calibration.len()).collect();
    let test: Vec<usize> = (world.calibration.len()..scenes.len()).collect();
    evaluate_open_set(model, &scenes, &cal, &test, target)
}

/// Closed-set mIoU of a world's test split (anomalies ignored as VOID).
pub fn closed_test_miou(model: &HybridModel, world: &DenseToyWorld) -> Result<f64> {
    let pairs = world
        .test
        .iter()
        .map(|s| {
            let sc = score_scene(model, s)?;
            Ok((sc.scores.closed, s.ground_truth()))
        })
        .collect::<Result<Vec<_>>>()?;
    closed_miou_images(model.classes(), &pairs)
}

/// Score maps over the toy plane, top row at `+extent`.
pub fn toy_score_grid(model: &HybridModel, config: &ExperimentConfig) -> Result<DenseScores> {
    let n = config.evaluation.heatmap_resolution;
    let e = config.evaluation.heatmap_extent;
    let at = |i: usize| -e + 2.0 * e * i as f64 / (n - 1) as f64;
    let mut data = Vec::with_capacity(n * n * 2);
    for r in 0..n {
        for c in 0..n {
            data.push(at(c));
            data.push(at(n - 1 - r));
        }
    }
    dense_scores(model, &Tensor::matrix(n * n, 2, data)?, vec![n, n])
}

pub fn component_map<'a>(scores: &'a DenseScores, name: &str) -> &'a ScoreMap {
    match name {
        "discriminative" => &scores.discriminative,
        "generative" => &scores.generative,
        _ => &scores.hybrid,
    }
}
