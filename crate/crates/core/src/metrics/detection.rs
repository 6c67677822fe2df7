//! Ranking metrics over scored elements. Higher scores mean "more
//! anomalous"; tied scores form one threshold group.

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionSample {
    pub score: f64,
    pub is_outlier: bool,
}

impl DetectionSample {
    pub fn new(score: f64, is_outlier: bool) -> Self {
        Self { score, is_outlier }
    }
}

/// Builds samples from separate inlier and outlier score lists.
pub fn samples_from(inliers: &[f64], outliers: &[f64]) -> Vec<DetectionSample> {
    inliers
        .iter()
        .map(|&s| DetectionSample::new(s, false))
        .chain(outliers.iter().map(|&s| DetectionSample::new(s, true)))
        .collect()
}

/// One group of tied scores.
#[derive(Clone, Copy, Debug, PartialEq)]
struct Group {
    score: f64,
    outliers: u64,
    inliers: u64,
}

struct Ranking {
    /// Descending by score.
    groups: Vec<Group>,
    outliers: u64,
    inliers: u64,
}

fn rank(samples: &[DetectionSample]) -> Result<Ranking> {
    if samples.iter().any(|s| !s.score.is_finite()) {
        return Err(Error::NonFinite("detection score".into()));
    }
    let outliers = samples.iter().filter(|s| s.is_outlier).count() as u64;
    let inliers = samples.len() as u64 - outliers;
    if outliers == 0 || inliers == 0 {
        return Err(Error::Degenerate("need at least one inlier and one outlier".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(|a, b| b.score.total_cmp(&a.score));
    let mut groups: Vec<Group> = Vec::new();
    for s in sorted {
        match groups.last_mut() {
            Some(g) if g.score == s.score => {
                if s.is_outlier {
                    g.outliers += 1;
                } else {
                    g.inliers += 1;
                }
            }
            _ => groups.push(Group {
                score: s.score,
                outliers: s.is_outlier as u64,
                inliers: (!s.is_outlier) as u64,
            }),
        }
    }
    Ok(Ranking {
        groups,
        outliers,
        inliers,
    })
}

/// Non-interpolated AP: `Σ ΔR·P` at each distinct threshold, descending.
pub fn average_precision(samples: &[DetectionSample]) -> Result<f64> {
    let r = rank(samples)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut ap = 0.0;
    for g in &r.groups {
        tp += g.outliers;
        fp += g.inliers;
        if g.outliers > 0 {
            ap += (g.outliers as f64 / r.outliers as f64) * (tp as f64 / (tp + fp) as f64);
        }
    }
    Ok(ap)
}

/// Mann–Whitney statistic `P(s_out > s_in) + ½ P(s_out = s_in)`.
pub fn auroc(samples: &[DetectionSample]) -> Result<f64> {
    let r = rank(samples)?;
    // doubled pair counts keep the tie half-credit in integers
    let mut inliers_below = r.inliers;
    let mut doubled: u128 = 0;
    for g in &r.groups {
        inliers_below -= g.inliers;
        doubled += g.outliers as u128 * (2 * inliers_below as u128 + g.inliers as u128);
    }
    Ok(doubled as f64 / (2 * r.outliers as u128 * r.inliers as u128) as f64)
}

/// The largest observed score `t` such that detecting `score > t` reaches
/// `TPR >= target` (`-inf` if every group is needed), and the FPR there.
pub fn fpr_at_tpr(samples: &[DetectionSample], target: f64) -> Result<(f64, f64)> {
    if !(target > 0.0 && target <= 1.0) {
        return Err(Error::InvalidArgument(format!("TPR target {target} outside (0, 1]")));
    }
    let r = rank(samples)?;
    let (mut tp, mut fp) = (0u64, 0u64);
    for (i, g) in r.groups.iter().enumerate() {
        tp += g.outliers;
        fp += g.inliers;
        if tp as f64 >= target * r.outliers as f64 {
            let threshold = r.groups.get(i + 1).map_or(f64::NEG_INFINITY, |n| n.score);
            return Ok((fp as f64 / r.inliers as f64, threshold));
        }
    }
    unreachable!("all outliers are detected once every group is included")
}

/// Threshold at the target TPR on held-out samples.
pub fn calibrate_threshold(samples: &[DetectionSample], target: f64) -> Result<f64> {
    Ok(fpr_at_tpr(samples, target)?.1)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetectionSummary {
    pub ap: f64,
    pub auroc: f64,
    pub fpr95: f64,
    pub threshold95: f64,
}

pub fn summarize(samples: &[DetectionSample]) -> Result<DetectionSummary> {
    let (fpr95, threshold95) = fpr_at_tpr(samples, 0.95)?;
    Ok(DetectionSummary {
        ap: average_precision(samples)?,
        auroc: auroc(samples)?,
        fpr95,
        threshold95,
    })
}

#[cfg(test)]
pub(crate) mod oracle {
    //! O(n²) reference implementations, written independently of the
    //! grouped sweeps above.
    use super::DetectionSample;

    pub fn ap(s: &[DetectionSample]) -> f64 {
        let n_out = s.iter().filter(|x| x.is_outlier).count();
        let mut thresholds: Vec<f64> = s.iter().map(|x| x.score).collect();
        thresholds.sort_by(|a, b| b.total_cmp(a));
        thresholds.dedup();
        let mut prev_tp = 0usize;
        let mut ap = 0.0;
        for t in thresholds {
            let tp = s.iter().filter(|x| x.is_outlier && x.score >= t).count();
            let fp = s.iter().filter(|x| !x.is_outlier && x.score >= t).count();
            if tp > prev_tp {
                ap += ((tp - prev_tp) as f64 / n_out as f64) * (tp as f64 / (tp + fp) as f64);
            }
            prev_tp = tp;
        }
        ap
    }

    pub fn auroc(s: &[DetectionSample]) -> f64 {
        let mut doubled = 0u128;
        let mut pairs = 0u128;
        for o in s.iter().filter(|x| x.is_outlier) {
            for i in s.iter().filter(|x| !x.is_outlier) {
                pairs += 2;
                if o.score > i.score {
                    doubled += 2;
                } else if o.score == i.score {
                    doubled += 1;
                }
            }
        }
        doubled as f64 / pairs as f64
    }

    pub fn fpr_at_tpr(s: &[DetectionSample], target: f64) -> (f64, f64) {
        let n_out = s.iter().filter(|x| x.is_outlier).count();
        let n_in = s.len() - n_out;
        let mut cands: Vec<f64> = s.iter().map(|x| x.score).collect();
        cands.push(f64::NEG_INFINITY);
        let mut best: Option<f64> = None;
        for &t in &cands {
            let tp = s.iter().filter(|x| x.is_outlier && x.score > t).count();
            if tp as f64 >= target * n_out as f64 && best.is_none_or(|b| t > b) {
                best = Some(t);
            }
        }
        let t = best.expect("-inf always qualifies");
        let fp = s.iter().filter(|x| !x.is_outlier && x.score > t).count();
        (fp as f64 / n_in as f64, t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_case(rng: &mut ChaCha8Rng, n: usize) -> Vec<DetectionSample> {
        let levels = rng.random_range(2..12);
        let mut s: Vec<DetectionSample> = (0..n)
            .map(|_| DetectionSample::new(rng.random_range(0..levels) as f64 * 0.5, rng.random_bool(0.4)))
            .collect();
        s[0].is_outlier = true;
        s[1].is_outlier = false;
        s
    }

    #[test]
    fn ap_examples() {
        let s = samples_from(&[0.1, 0.2], &[0.8, 0.9]);
        assert_eq!(average_precision(&s).unwrap(), 1.0);
        let s = samples_from(&[0.9, 0.1], &[0.5]);
        assert_eq!(average_precision(&s).unwrap(), 0.5);
        let s = samples_from(&[0.3; 6], &[0.3; 4]);
        assert!((average_precision(&s).unwrap() - 0.4).abs() < 1e-15);
        assert!(average_precision(&samples_from(&[], &[1.0])).is_err());
        assert!(average_precision(&samples_from(&[f64::NAN], &[1.0])).is_err());
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&samples_from(&[0.1, 0.2], &[0.8, 0.9])).unwrap(), 1.0);
        assert_eq!(auroc(&samples_from(&[0.5; 3], &[0.5; 4])).unwrap(), 0.5);
        assert_eq!(auroc(&samples_from(&[0.8, 0.9], &[0.1, 0.2])).unwrap(), 0.0);
    }

    #[test]
    fn fpr_examples() {
        let (f, t) = fpr_at_tpr(&samples_from(&[0.1, 0.2], &[0.8, 0.9]), 0.95).unwrap();
        assert_eq!((f, t), (0.0, 0.2));
        let inl: Vec<f64> = (1..=100).map(|v| v as f64).collect();
        let (f, t) = fpr_at_tpr(&samples_from(&inl, &[50.5]), 0.95).unwrap();
        assert_eq!((f, t), (0.5, 50.0));
        let (f, t) = fpr_at_tpr(&samples_from(&[0.8, 0.9], &[0.1, 0.2]), 0.95).unwrap();
        assert_eq!((f, t), (1.0, f64::NEG_INFINITY));
        assert_eq!(
            calibrate_threshold(&samples_from(&[0.1, 0.2], &[0.8, 0.9]), 0.95).unwrap(),
            0.2
        );
        assert!(fpr_at_tpr(&samples_from(&[0.1], &[0.2]), 0.0).is_err());
    }

    #[test]
    fn brute_force_oracles_agree_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for _ in 0..1000 {
            let n = rng.random_range(2..=50);
            let s = random_case(&mut rng, n);
            assert_eq!(average_precision(&s).unwrap(), oracle::ap(&s));
            assert_eq!(auroc(&s).unwrap(), oracle::auroc(&s));
            assert_eq!(fpr_at_tpr(&s, 0.95).unwrap(), oracle::fpr_at_tpr(&s, 0.95));
        }
    }

    #[test]
    fn constant_detector_ap_is_prevalence() {
        let s = samples_from(&[1.0; 30], &[1.0; 10]);
        assert!((average_precision(&s).unwrap() - 0.25).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn case() -> impl Strategy<Value = Vec<DetectionSample>> {
            prop::collection::vec((-5i32..5, any::<bool>()), 2..40).prop_map(|v| {
                let mut s: Vec<DetectionSample> = v
                    .into_iter()
                    .map(|(k, o)| DetectionSample::new(k as f64 * 0.25, o))
                    .collect();
                s[0].is_outlier = true;
                s[1].is_outlier = false;
                s
            })
        }

        proptest! {
            #[test]
            fn monotone_transforms_preserve_metrics(s in case()) {
                let t: Vec<DetectionSample> = s.iter().map(|x| DetectionSample::new((x.score * 0.7).exp() + 3.0, x.is_outlier)).collect();
                prop_assert_eq!(average_precision(&s).unwrap(), average_precision(&t).unwrap());
                prop_assert_eq!(auroc(&s).unwrap(), auroc(&t).unwrap());
                prop_assert_eq!(fpr_at_tpr(&s, 0.95).unwrap().0, fpr_at_tpr(&t, 0.95).unwrap().0);
            }

            #[test]
            fn negated_scores_flip_auroc(s in case()) {
                let t: Vec<DetectionSample> = s.iter().map(|x| DetectionSample::new(-x.score, x.is_outlier)).collect();
                prop_assert!((auroc(&s).unwrap() + auroc(&t).unwrap() - 1.0).abs() < 1e-12);
            }

            #[test]
            fn matches_oracles(s in case(), target in 0.05f64..1.0) {
                prop_assert_eq!(fpr_at_tpr(&s, target).unwrap(), oracle::fpr_at_tpr(&s, target));
                prop_assert_eq!(average_precision(&s).unwrap(), oracle::ap(&s));
            }
        }
    }
}
