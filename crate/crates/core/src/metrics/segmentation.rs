//! Dense closed- and open-set segmentation metrics.
//!
//! A [`ConfusionTally`] counts `(ground truth, prediction)` pairs over the
//! `K` classes plus an OUTLIER row/column (index `K`). VOID ground truth is
//! counted separately and touches no cell.

use rayon::prelude::*;

use super::detection::{calibrate_threshold, DetectionSample};
use crate::error::{shape_err, Error, Result};
use crate::maps::{Label, LabelMap, ScoreMap};
use crate::model::open_set_predict;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionTally {
    classes: usize,
    /// Row-major `(K+1) × (K+1)`, rows = ground truth.
    counts: Vec<u64>,
    void: u64,
}

impl ConfusionTally {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; (classes + 1) * (classes + 1)],
            void: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn void_count(&self) -> u64 {
        self.void
    }

    fn index(&self, label: Label, what: &str) -> Result<usize> {
        match label {
            Label::Class(c) if (c as usize) < self.classes => Ok(c as usize),
            Label::Class(c) => Err(Error::InvalidArgument(format!(
                "{what} class {c} >= K = {}",
                self.classes
            ))),
            Label::Outlier => Ok(self.classes),
            Label::Void => Err(Error::InvalidArgument(format!("{what} cannot be VOID"))),
        }
    }

    pub fn record(&mut self, truth: Label, predicted: Label) -> Result<()> {
        if truth.is_void() {
            self.void += 1;
            return Ok(());
        }
        let (t, p) = (self.index(truth, "ground truth")?, self.index(predicted, "prediction")?);
        self.counts[t * (self.classes + 1) + p] += 1;
        Ok(())
    }

    pub fn add_pair(&mut self, truth: Label, predicted: Label, count: u64) -> Result<()> {
        let (t, p) = (self.index(truth, "ground truth")?, self.index(predicted, "prediction")?);
        self.counts[t * (self.classes + 1) + p] += count;
        Ok(())
    }

    pub fn from_maps(classes: usize, predicted: &LabelMap, truth: &LabelMap) -> Result<Self> {
        if predicted.shape() != truth.shape() {
            return Err(shape_err("prediction and ground truth differ in shape"));
        }
        let mut t = Self::new(classes);
        for (&g, &p) in truth.labels().iter().zip(predicted.labels()) {
            t.record(g, p)?;
        }
        Ok(t)
    }

    /// Tallies many images in parallel; the merge is associative, so the
    /// result does not depend on scheduling.
    pub fn from_images(classes: usize, pairs: &[(LabelMap, LabelMap)]) -> Result<Self> {
        pairs
            .par_iter()
            .map(|(p, g)| Self::from_maps(classes, p, g))
            .try_reduce(|| Self::new(classes), |a, b| a.merged(&b))
    }

    pub fn merge(&mut self, other: &ConfusionTally) -> Result<()> {
        if other.classes != self.classes {
            return Err(shape_err("tallies over different class counts"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        self.void += other.void;
        Ok(())
    }

    pub fn merged(mut self, other: &ConfusionTally) -> Result<Self> {
        self.merge(other)?;
        Ok(self)
    }

    /// Count of `(truth = t, prediction = p)`, with `K` meaning OUTLIER.
    pub fn get(&self, t: usize, p: usize) -> u64 {
        self.counts[t * (self.classes + 1) + p]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `(TP_k, FP_k, FN_k)` where FP and FN sum over every other label,
    /// OUTLIER included.
    fn class_counts(&self, k: usize) -> (u64, u64, u64) {
        let n = self.classes + 1;
        let tp = self.get(k, k);
        let fp = (0..n).map(|t| self.get(t, k)).sum::<u64>() - tp;
        let fn_ = (0..n).map(|p| self.get(k, p)).sum::<u64>() - tp;
        (tp, fp, fn_)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenIou {
    /// `None` for classes absent from both prediction and ground truth.
    pub per_class: Vec<Option<f64>>,
    pub mean: f64,
}

fn mean_present(values: &[Option<f64>]) -> Result<f64> {
    let present: Vec<f64> = values.iter().flatten().copied().collect();
    if present.is_empty() {
        return Err(Error::EmptyAxis);
    }
    Ok(present.iter().sum::<f64>() / present.len() as f64)
}

/// `open-IoU_k = TP / (TP + FP^os + FN^os)`, averaged over the K classes.
pub fn open_iou(tally: &ConfusionTally) -> Result<OpenIou> {
    if tally.total() == 0 {
        return Err(Error::EmptyAxis);
    }
    let per_class: Vec<Option<f64>> = (0..tally.classes)
        .map(|k| {
            let (tp, fp, fn_) = tally.class_counts(k);
            let denom = tp + fp + fn_;
            (denom > 0).then(|| tp as f64 / denom as f64)
        })
        .collect();
    let mean = mean_present(&per_class)?;
    Ok(OpenIou { per_class, mean })
}

/// Mean over the K classes of `2TP / (2TP + FP^os + FN^os)`.
pub fn mean_f1(tally: &ConfusionTally) -> Result<f64> {
    if tally.total() == 0 {
        return Err(Error::EmptyAxis);
    }
    let per_class: Vec<Option<f64>> = (0..tally.classes)
        .map(|k| {
            let (tp, fp, fn_) = tally.class_counts(k);
            let denom = 2 * tp + fp + fn_;
            (denom > 0).then(|| 2.0 * tp as f64 / denom as f64)
        })
        .collect();
    mean_present(&per_class)
}

/// Closed-set mIoU on elements whose ground truth is an inlier class.
pub fn closed_miou(classes: usize, predicted: &LabelMap, truth: &LabelMap) -> Result<f64> {
    if predicted.shape() != truth.shape() {
        return Err(shape_err("prediction and ground truth differ in shape"));
    }
    let mut tally = ConfusionTally::new(classes);
    for (&g, &p) in truth.labels().iter().zip(predicted.labels()) {
        if g.class().is_none() {
            continue;
        }
        if p.class().is_none() {
            return Err(Error::InvalidArgument("closed-set predictions must be classes".into()));
        }
        tally.record(g, p)?;
    }
    if tally.total() == 0 {
        return Err(Error::EmptyAxis);
    }
    Ok(open_iou(&tally)?.mean)
}

/// Closed mIoU over several images, tallied jointly.
pub fn closed_miou_images(classes: usize, pairs: &[(LabelMap, LabelMap)]) -> Result<f64> {
    let mut tally = ConfusionTally::new(classes);
    for (p, g) in pairs {
        for (&gl, &pl) in g.labels().iter().zip(p.labels()) {
            if gl.class().is_some() {
                if pl.class().is_none() {
                    return Err(Error::InvalidArgument("closed-set predictions must be classes".into()));
                }
                tally.record(gl, pl)?;
            }
        }
    }
    if tally.total() == 0 {
        return Err(Error::EmptyAxis);
    }
    Ok(open_iou(&tally)?.mean)
}

pub fn open_gap(closed_miou: f64, open_miou: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&closed_miou) || !(0.0..=1.0).contains(&open_miou) {
        return Err(Error::InvalidArgument("mIoU values must lie in [0, 1]".into()));
    }
    Ok(closed_miou - open_miou)
}

/// One evaluated image: closed-set prediction, anomaly scores, ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredImage {
    pub closed: LabelMap,
    pub scores: ScoreMap,
    pub truth: LabelMap,
}

/// Detection samples of all non-VOID elements.
pub fn detection_samples(images: &[ScoredImage]) -> Vec<DetectionSample> {
    images
        .iter()
        .flat_map(|im| {
            im.truth
                .labels()
                .iter()
                .zip(im.scores.values())
                .filter(|(l, _)| !l.is_void())
                .map(|(&l, &s)| DetectionSample::new(s, l == Label::Outlier))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetEvaluation {
    pub threshold: f64,
    pub closed_miou: f64,
    pub open_miou: f64,
    pub mean_f1: f64,
    pub gap: f64,
    pub images: usize,
}

/// Open-set metrics of `images` at a fixed threshold.
pub fn evaluate_at_threshold(classes: usize, images: &[ScoredImage], threshold: f64) -> Result<OpenSetEvaluation> {
    if images.is_empty() {
        return Err(Error::EmptyAxis);
    }
    let pairs: Vec<(LabelMap, LabelMap)> = images
        .iter()
        .map(|im| {
            Ok((
                open_set_predict(&im.closed, &im.scores, threshold)?.labels,
                im.truth.clone(),
            ))
        })
        .collect::<Result<_>>()?;
    let tally = ConfusionTally::from_images(classes, &pairs)?;
    let closed_pairs: Vec<(LabelMap, LabelMap)> =
        images.iter().map(|im| (im.closed.clone(), im.truth.clone())).collect();
    let closed = closed_miou_images(classes, &closed_pairs)?;
    let open = open_iou(&tally)?.mean;
    Ok(OpenSetEvaluation {
        threshold,
        closed_miou: closed,
        open_miou: open,
        mean_f1: mean_f1(&tally)?,
        gap: closed - open,
        images: images.len(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Fold {
    pub name: String,
    pub images: Vec<ScoredImage>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CrossCalibration {
    /// Each fold evaluated with a threshold calibrated on all other folds.
    pub folds: Vec<(String, OpenSetEvaluation)>,
    /// Image-count-weighted means of open mIoU, mean F1 and gap.
    pub open_miou: f64,
    pub mean_f1: f64,
    pub gap: f64,
}

/// Threshold swapping across named folds at the given TPR target.
pub fn cross_calibrate(classes: usize, folds: &[Fold], target: f64) -> Result<CrossCalibration> {
    if folds.len() < 2 {
        return Err(Error::InvalidArgument(
            "cross-calibration needs at least two folds".into(),
        ));
    }
    let mut out = Vec::with_capacity(folds.len());
    for (i, fold) in folds.iter().enumerate() {
        let held: Vec<ScoredImage> = folds
            .iter()
            .enumerate()
            .filter(|(j, _)| *j != i)
            .flat_map(|(_, f)| f.images.iter().cloned())
            .collect();
        let t = calibrate_threshold(&detection_samples(&held), target)?;
        out.push((fold.name.clone(), evaluate_at_threshold(classes, &fold.images, t)?));
    }
    let total: f64 = out.iter().map(|(_, e)| e.images as f64).sum();
    let weighted =
        |f: fn(&OpenSetEvaluation) -> f64| out.iter().map(|(_, e)| e.images as f64 * f(e)).sum::<f64>() / total;
    Ok(CrossCalibration {
        open_miou: weighted(|e| e.open_miou),
        mean_f1: weighted(|e| e.mean_f1),
        gap: weighted(|e| e.gap),
        folds: out,
    })
}
