//! Detection and open-set segmentation evaluation.

pub mod detection;
pub mod report;
pub mod segmentation;

pub use detection::{
    auroc, average_precision, calibrate_threshold, fpr_at_tpr, samples_from, summarize, DetectionSample,
    DetectionSummary,
};
pub use report::{metrics_csv, parse_metrics_csv, write_metrics_csv, MetricRow, METRICS_HEADER};
pub use segmentation::{
    closed_miou, closed_miou_images, cross_calibrate, detection_samples, evaluate_at_threshold, mean_f1, open_gap,
    open_iou, ConfusionTally, CrossCalibration, Fold, OpenIou, OpenSetEvaluation, ScoredImage,
};

/// Open-set metrics of a scored-map container written by
/// [`crate::data::write_scored_images`], at a fixed threshold.
pub fn evaluate_scored_dir(dir: &std::path::Path, threshold: f64) -> crate::Result<OpenSetEvaluation> {
    let (classes, images) = crate::data::read_scored_images(dir)?;
    evaluate_at_threshold(classes, &images, threshold)
}
