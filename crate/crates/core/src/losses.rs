//! Training objectives over mixed-content batches.
//!
//! Every term is a mean over its partition (inliers or negatives), so the β
//! weights do not depend on batch size. Inliers are unmasked, non-VOID
//! elements; negatives are the masked (pasted) elements. VOID-labelled
//! unmasked elements take part in nothing.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::maps::Label;
use crate::numerics::{lse, sigmoid, softmax_into, softplus, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct MixedBatch {
    pub inputs: Tensor,
    pub labels: Vec<Label>,
    /// `true` marks a pasted negative element.
    pub mask: Vec<bool>,
}

impl MixedBatch {
    /// Builds a batch, forcing masked elements to VOID.
    pub fn new(inputs: Tensor, mut labels: Vec<Label>, mask: Vec<bool>) -> Result<Self> {
        if inputs.shape().len() != 2 || inputs.rows() != labels.len() || labels.len() != mask.len() {
            return Err(shape_err("inputs, labels and mask must agree on element count"));
        }
        for (l, &m) in labels.iter_mut().zip(&mask) {
            if m {
                *l = Label::Void;
            }
        }
        Ok(Self { inputs, labels, mask })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn partition(&self) -> Partition {
        Partition::from_labels(&self.labels, &self.mask)
    }
}

/// Inlier and negative element indices.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Partition {
    pub inliers: Vec<usize>,
    pub negatives: Vec<usize>,
}

impl Partition {
    /// Inliers are all unmasked elements.
    pub fn from_mask(mask: &[bool]) -> Self {
        let mut p = Self::default();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                p.negatives.push(i);
            } else {
                p.inliers.push(i);
            }
        }
        p
    }

    /// Inliers are unmasked and not VOID.
    pub fn from_labels(labels: &[Label], mask: &[bool]) -> Self {
        let mut p = Self::default();
        for (i, (l, &m)) in labels.iter().zip(mask).enumerate() {
            if m {
                p.negatives.push(i);
            } else if !l.is_void() {
                p.inliers.push(i);
            }
        }
        p
    }

    fn require_both(&self) -> Result<()> {
        if self.inliers.is_empty() {
            return Err(Error::EmptyAxis);
        }
        if self.negatives.is_empty() {
            return Err(Error::EmptyAxis);
        }
        Ok(())
    }

    fn check_bounds(&self, n: usize) -> Result<()> {
        if self.inliers.iter().chain(&self.negatives).any(|&i| i >= n) {
            return Err(shape_err("partition index outside the batch"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::new(1.0, 0.3, 0.3, 0.03).expect("valid default weights")
    }
}

impl LossWeights {
    pub fn new(beta1: f64, beta2: f64, beta3: f64, beta4: f64) -> Result<Self> {
        let w = Self {
            beta1,
            beta2,
            beta3,
            beta4,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let all = [self.beta1, self.beta2, self.beta3, self.beta4];
        if all.iter().any(|b| !b.is_finite() || *b < 0.0) || self.beta1 <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "loss weights must be finite, non-negative and beta1 > 0: {all:?}"
            )));
        }
        Ok(())
    }

    pub fn light() -> Self {
        Self::new(1.0, 0.1, 0.1, 0.01).expect("valid preset")
    }

    pub fn heavy() -> Self {
        Self::new(1.0, 1.5, 1.5, 0.15).expect("valid preset")
    }

    pub fn closed_set() -> Self {
        Self {
            beta1: 1.0,
            beta2: 0.0,
            beta3: 0.0,
            beta4: 0.0,
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "default" => Ok(Self::default()),
            "light" => Ok(Self::light()),
            "heavy" => Ok(Self::heavy()),
            "closed" => Ok(Self::closed_set()),
            other => Err(Error::Config(format!("unknown loss preset {other:?}"))),
        }
    }
}

fn check_logits(logits: &Tensor, n: usize) -> Result<usize> {
    if logits.shape().len() != 2 || logits.rows() != n {
        return Err(shape_err(format!(
            "logits {:?} do not match {n} elements",
            logits.shape()
        )));
    }
    if logits.cols() < 2 {
        return Err(Error::InvalidArgument("need K >= 2 classes".into()));
    }
    Ok(logits.cols())
}

fn class_index(label: Label, k: usize) -> Result<usize> {
    match label.class() {
        Some(c) if c < k => Ok(c),
        Some(c) => Err(Error::InvalidArgument(format!("label {c} outside K = {k}"))),
        None => Err(Error::InvalidArgument("inlier without a class label".into())),
    }
}

fn mean_over(idx: &[usize], f: impl Fn(usize) -> f64) -> f64 {
    idx.iter().map(|&i| f(i)).sum::<f64>() / idx.len() as f64
}

/// Cross-entropy over unmasked non-VOID elements.
pub fn loss_cls(logits: &Tensor, labels: &[Label]) -> Result<f64> {
    let k = check_logits(logits, labels.len())?;
    let mut total = 0.0;
    let mut count = 0usize;
    for (i, &l) in labels.iter().enumerate() {
        if l.is_void() {
            continue;
        }
        let y = class_index(l, k)?;
        let s = logits.row(i);
        total += lse(s) - s[y];
        count += 1;
    }
    if count == 0 {
        return Err(Error::EmptyAxis);
    }
    Ok(total / count as f64)
}

/// [`loss_cls`] together with its gradient w.r.t. the logits.
pub fn loss_cls_grad(logits: &Tensor, labels: &[Label]) -> Result<(f64, Tensor)> {
    let k = check_logits(logits, labels.len())?;
    let kept: Vec<usize> = (0..labels.len()).filter(|&i| !labels[i].is_void()).collect();
    if kept.is_empty() {
        return Err(Error::EmptyAxis);
    }
    let n = kept.len() as f64;
    let mut d = Tensor::zeros(vec![labels.len(), k]);
    let mut total = 0.0;
    for &i in &kept {
        let y = class_index(labels[i], k)?;
        let s = logits.row(i);
        total += lse(s) - s[y];
        let row = d.row_mut(i);
        softmax_into(s, row);
        row.iter_mut().for_each(|v| *v /= n);
        row[y] -= 1.0 / n;
    }
    Ok((total / n, d))
}

/// `-mean_in LSE(s) + mean_out LSE(s)`; the normaliser cancels.
pub fn loss_x_exact(logits: &Tensor, partition: &Partition) -> Result<f64> {
    check_logits(logits, logits.rows())?;
    partition.check_bounds(logits.rows())?;
    partition.require_both()?;
    Ok(
        -mean_over(&partition.inliers, |i| lse(logits.row(i)))
            + mean_over(&partition.negatives, |i| lse(logits.row(i))),
    )
}

/// `-mean_in s_y + mean_out LSE(s)`, an upper bound of [`loss_x_exact`].
pub fn loss_x_ub(logits: &Tensor, labels: &[Label], partition: &Partition) -> Result<f64> {
    let k = check_logits(logits, labels.len())?;
    partition.check_bounds(labels.len())?;
    partition.require_both()?;
    let mut inl = 0.0;
    for &i in &partition.inliers {
        inl += logits.row(i)[class_index(labels[i], k)?];
    }
    Ok(-inl / partition.inliers.len() as f64 + mean_over(&partition.negatives, |i| lse(logits.row(i))))
}

/// `loss_x_ub - loss_x_exact`, evaluated directly as
/// `mean_in ln(1 + Σ_{c≠y} exp(s_c - s_y))` so that the gap survives even
/// when both losses round to the same float.
pub fn ub_gap(logits: &Tensor, labels: &[Label], partition: &Partition) -> Result<f64> {
    let k = check_logits(logits, labels.len())?;
    partition.check_bounds(labels.len())?;
    partition.require_both()?;
    let mut total = 0.0;
    for &i in &partition.inliers {
        let y = class_index(labels[i], k)?;
        let s = logits.row(i);
        let rest: f64 = (0..k).filter(|&c| c != y).map(|c| (s[c] - s[y]).exp()).sum();
        total += rest.ln_1p();
    }
    Ok(total / partition.inliers.len() as f64)
}

/// Binary cross-entropy of the dataset posterior `P(d_in | x)`.
pub fn loss_d(posterior: &[f64], partition: &Partition) -> Result<f64> {
    partition.check_bounds(posterior.len())?;
    partition.require_both()?;
    if posterior.iter().any(|p| !(p.is_finite() && *p > 0.0 && *p < 1.0)) {
        return Err(Error::InvalidArgument("dataset posterior outside (0, 1)".into()));
    }
    Ok(-mean_over(&partition.inliers, |i| posterior[i].ln())
        + -mean_over(&partition.negatives, |i| (1.0 - posterior[i]).ln()))
}

/// Term values of the compound loss, before weighting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CompoundTerms {
    pub cross_entropy: f64,
    /// `mean_in -ln P(d_in|x)`
    pub inlier_posterior: f64,
    /// `mean_out -ln P(d_out|x)`
    pub negative_posterior: f64,
    /// `mean_out LSE(s)`
    pub negative_lse: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompoundLoss {
    pub value: f64,
    pub terms: CompoundTerms,
    pub d_logits: Tensor,
    pub d_posterior_logits: Vec<f64>,
}

/// `β1·CE + β2·mean_in softplus(-g) + β3·mean_out softplus(g) + β4·mean_out LSE`
/// with gradients w.r.t. the logits and posterior-head logits `g`.
pub fn compound_loss(
    logits: &Tensor,
    posterior_logits: &[f64],
    labels: &[Label],
    partition: &Partition,
    weights: &LossWeights,
) -> Result<CompoundLoss> {
    weights.validate()?;
    let k = check_logits(logits, labels.len())?;
    if posterior_logits.len() != labels.len() {
        return Err(shape_err("posterior logits do not match the batch"));
    }
    partition.check_bounds(labels.len())?;
    partition.require_both()?;

    let n = labels.len();
    let n_in = partition.inliers.len() as f64;
    let n_out = partition.negatives.len() as f64;
    let mut d_logits = Tensor::zeros(vec![n, k]);
    let mut d_post = vec![0.0; n];
    let mut p = vec![0.0; k];
    let mut terms = CompoundTerms {
        cross_entropy: 0.0,
        inlier_posterior: 0.0,
        negative_posterior: 0.0,
        negative_lse: 0.0,
    };

    for &i in &partition.inliers {
        let y = class_index(labels[i], k)?;
        let s = logits.row(i);
        terms.cross_entropy += lse(s) - s[y];
        softmax_into(s, &mut p);
        let row = d_logits.row_mut(i);
        for c in 0..k {
            row[c] = weights.beta1 * p[c] / n_in;
        }
        row[y] -= weights.beta1 / n_in;
        let g = posterior_logits[i];
        terms.inlier_posterior += softplus(-g);
        d_post[i] = -weights.beta2 * sigmoid(-g) / n_in;
    }
    for &i in &partition.negatives {
        let s = logits.row(i);
        terms.negative_lse += lse(s);
        softmax_into(s, &mut p);
        let row = d_logits.row_mut(i);
        for c in 0..k {
            row[c] = weights.beta4 * p[c] / n_out;
        }
        let g = posterior_logits[i];
        terms.negative_posterior += softplus(g);
        d_post[i] = weights.beta3 * sigmoid(g) / n_out;
    }
    terms.cross_entropy /= n_in;
    terms.inlier_posterior /= n_in;
    terms.negative_posterior /= n_out;
    terms.negative_lse /= n_out;

    let value = weights.beta1 * terms.cross_entropy
        + weights.beta2 * terms.inlier_posterior
        + weights.beta3 * terms.negative_posterior
        + weights.beta4 * terms.negative_lse;
    if !value.is_finite() {
        return Err(Error::NonFinite("compound loss".into()));
    }
    Ok(CompoundLoss {
        value,
        terms,
        d_logits,
        d_posterior_logits: d_post,
    })
}

/// Training-time stabiliser `κ·(mean_in LSE² + mean_out LSE²)`.
///
/// The compound loss alone is unbounded below: shifting every logit by a
/// constant leaves the cross-entropy unchanged while the negative LSE term
/// keeps falling. This quadratic anchor pins the overall logit level. The
/// gradient is accumulated into `d_logits`; the return value is the penalty.
pub fn lse_penalty(logits: &Tensor, partition: &Partition, kappa: f64, d_logits: &mut Tensor) -> Result<f64> {
    if !(kappa.is_finite() && kappa >= 0.0) {
        return Err(Error::InvalidArgument(format!("lse penalty {kappa} must be >= 0")));
    }
    if d_logits.shape() != logits.shape() {
        return Err(shape_err("gradient buffer"));
    }
    partition.check_bounds(logits.rows())?;
    if kappa == 0.0 {
        return Ok(0.0);
    }
    let k = logits.cols();
    let mut p = vec![0.0; k];
    let mut total = 0.0;
    for side in [&partition.inliers, &partition.negatives] {
        if side.is_empty() {
            continue;
        }
        let n = side.len() as f64;
        for &i in side {
            let s = logits.row(i);
            let l = lse(s);
            total += kappa * l * l / n;
            softmax_into(s, &mut p);
            let row = d_logits.row_mut(i);
            for c in 0..k {
                row[c] += 2.0 * kappa * l * p[c] / n;
            }
        }
    }
    Ok(total)
}
