//! The hybrid scoring stack built on a closed-set classifier.
//!
//! Pre-logits `z` come from the feature extractor, logits `s` from an affine
//! classifier head, and a separate posterior head maps `z` to the logit of
//! `P(d_in | x)`. Component scores follow the convention that higher means
//! more anomalous: `s_D = ln P(d_out | x)`, `s_G = -ln p̂(x) = -LSE(s)`, and
//! the hybrid score is their (by default equally weighted) sum.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SectionTag};
use crate::error::{shape_err, Error, Result};
use crate::maps::{Label, LabelMap, ScoreMap};
use crate::numerics::{
    log_sigmoid, lse, sigmoid, softmax_vec, Activation, ForwardCache, MlpGradients, MlpNetwork, Tensor,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub classes: usize,
    /// Width of every hidden layer of the feature extractor.
    pub hidden_width: usize,
    /// Affine+ReLU layers in the feature extractor; the classifier head adds one more.
    pub feature_layers: usize,
    pub posterior_hidden: usize,
}

impl ModelConfig {
    pub fn toy(input_dim: usize, classes: usize) -> Self {
        Self {
            input_dim,
            classes,
            hidden_width: 64,
            feature_layers: 3,
            posterior_hidden: 64,
        }
    }
}

/// Relative weights of the two components inside the hybrid score.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreWeights {
    pub discriminative: f64,
    pub generative: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        Self {
            discriminative: 1.0,
            generative: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HybridModel {
    feature_extractor: MlpNetwork,
    classifier_head: MlpNetwork,
    posterior_head: MlpNetwork,
    pub score_weights: ScoreWeights,
}

/// Activations of one forward pass, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ModelPass {
    pub pre_logits: Tensor,
    pub logits: Tensor,
    /// `g_γ(z)`, the logit of `P(d_in | x)`, one per element.
    pub posterior_logits: Vec<f64>,
    feature_cache: ForwardCache,
    head_cache: ForwardCache,
    posterior_cache: ForwardCache,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub feature_extractor: MlpGradients,
    pub classifier_head: MlpGradients,
    pub posterior_head: MlpGradients,
}

impl ModelGradients {
    pub fn write_flat(&self, out: &mut Vec<f64>) {
        self.feature_extractor.write_flat(out);
        self.classifier_head.write_flat(out);
        self.posterior_head.write_flat(out);
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        self.write_flat(&mut out);
        out
    }
}

impl HybridModel {
    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        if config.classes < 2 {
            return Err(Error::InvalidArgument("the classifier needs K >= 2 classes".into()));
        }
        if config.feature_layers == 0 || config.hidden_width == 0 {
            return Err(Error::InvalidArgument("empty feature extractor".into()));
        }
        let mut widths = vec![config.input_dim];
        widths.extend(std::iter::repeat_n(config.hidden_width, config.feature_layers));
        let feature_extractor = MlpNetwork::random(&widths, Activation::Relu, Activation::Relu, rng)?;
        let classifier_head = MlpNetwork::random(
            &[config.hidden_width, config.classes],
            Activation::Identity,
            Activation::Identity,
            rng,
        )?;
        let posterior_head = MlpNetwork::random(
            &[config.hidden_width, config.posterior_hidden, 1],
            Activation::Relu,
            Activation::Identity,
            rng,
        )?;
        Self::from_parts(feature_extractor, classifier_head, posterior_head)
    }

    pub fn from_parts(
        feature_extractor: MlpNetwork,
        classifier_head: MlpNetwork,
        posterior_head: MlpNetwork,
    ) -> Result<Self> {
        let z = feature_extractor.output_width();
        if classifier_head.input_width() != z {
            return Err(shape_err("classifier head input differs from pre-logit width"));
        }
        if classifier_head.output_width() < 2 {
            return Err(Error::InvalidArgument("the classifier needs K >= 2 classes".into()));
        }
        if posterior_head.input_width() != z || posterior_head.output_width() != 1 {
            return Err(shape_err("posterior head must map pre-logits to one scalar"));
        }
        Ok(Self {
            feature_extractor,
            classifier_head,
            posterior_head,
            score_weights: ScoreWeights::default(),
        })
    }

    pub fn feature_extractor(&self) -> &MlpNetwork {
        &self.feature_extractor
    }

    pub fn classifier_head(&self) -> &MlpNetwork {
        &self.classifier_head
    }

    pub fn posterior_head(&self) -> &MlpNetwork {
        &self.posterior_head
    }

    pub fn posterior_head_mut(&mut self) -> &mut MlpNetwork {
        &mut self.posterior_head
    }

    pub fn classes(&self) -> usize {
        self.classifier_head.output_width()
    }

    pub fn input_dim(&self) -> usize {
        self.feature_extractor.input_width()
    }

    pub fn param_count(&self) -> usize {
        self.feature_extractor.param_count() + self.classifier_head.param_count() + self.posterior_head.param_count()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        self.feature_extractor.write_params(&mut out);
        self.classifier_head.write_params(&mut out);
        self.posterior_head.write_params(&mut out);
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(shape_err("parameter vector length"));
        }
        let mut at = self.feature_extractor.read_params(src)?;
        at += self.classifier_head.read_params(&src[at..])?;
        self.posterior_head.read_params(&src[at..])?;
        Ok(())
    }

    pub fn forward(&self, inputs: &Tensor) -> Result<ModelPass> {
        let (pre_logits, feature_cache) = self.feature_extractor.forward(inputs)?;
        let (logits, head_cache) = self.classifier_head.forward(&pre_logits)?;
        let (post, posterior_cache) = self.posterior_head.forward(&pre_logits)?;
        Ok(ModelPass {
            pre_logits,
            logits,
            posterior_logits: post.into_data(),
            feature_cache,
            head_cache,
            posterior_cache,
        })
    }

    /// Backpropagates gradients on logits and posterior logits to every
    /// parameter and to the inputs.
    pub fn backward(
        &self,
        pass: &ModelPass,
        d_logits: &Tensor,
        d_posterior_logits: &[f64],
    ) -> Result<(ModelGradients, Tensor)> {
        let batch = pass.logits.rows();
        if d_posterior_logits.len() != batch {
            return Err(shape_err("posterior gradient length differs from batch"));
        }
        let (head_g, dz_head) = self.classifier_head.backward(&pass.head_cache, d_logits)?;
        let d_post = Tensor::matrix(batch, 1, d_posterior_logits.to_vec())?;
        let (post_g, dz_post) = self.posterior_head.backward(&pass.posterior_cache, &d_post)?;
        let mut dz = dz_head;
        for (a, b) in dz.data_mut().iter_mut().zip(dz_post.data()) {
            *a += b;
        }
        let (feat_g, dx) = self.feature_extractor.backward(&pass.feature_cache, &dz)?;
        Ok((
            ModelGradients {
                feature_extractor: feat_g,
                classifier_head: head_g,
                posterior_head: post_g,
            },
            dx,
        ))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tag: SectionTag::Model,
            meta: vec![self.score_weights.discriminative, self.score_weights.generative],
            networks: vec![
                self.feature_extractor.clone(),
                self.classifier_head.clone(),
                self.posterior_head.clone(),
            ],
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_tag(SectionTag::Model)?;
        let [w_d, w_g] = ckpt.meta[..] else {
            return Err(Error::Format("model checkpoint needs two score weights".into()));
        };
        let mut nets = ckpt.networks.into_iter();
        let (Some(f), Some(h), Some(p), None) = (nets.next(), nets.next(), nets.next(), nets.next()) else {
            return Err(Error::Format("model checkpoint needs exactly three networks".into()));
        };
        let mut model = Self::from_parts(f, h, p)?;
        model.score_weights = ScoreWeights {
            discriminative: w_d,
            generative: w_g,
        };
        Ok(model)
    }
}

/// Softmax class posterior.
pub fn class_posterior(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.len() < 2 {
        return Err(Error::InvalidArgument("class posterior needs K >= 2".into()));
    }
    Ok(softmax_vec(logits))
}

/// `ln p̂(x) = LSE(s)`: the log of the unnormalized likelihood.
pub fn unnormalized_loglikelihood(logits: &[f64]) -> f64 {
    lse(logits)
}

/// `P(d_in | x) = σ(g_γ(z))` for each pre-logit row.
pub fn dataset_posterior(pre_logits: &Tensor, head: &MlpNetwork) -> Result<Vec<f64>> {
    if head.output_width() != 1 {
        return Err(shape_err("posterior head must output one scalar"));
    }
    Ok(head.predict(pre_logits)?.data().iter().map(|&g| sigmoid(g)).collect())
}

/// The three anomaly scores of one element.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementScores {
    pub discriminative: f64,
    pub generative: f64,
    pub hybrid: f64,
}

impl ElementScores {
    /// Scores from logits and the posterior-head logit; `ln P(d_out|x)` is
    /// computed as `ln σ(-g)`.
    pub fn from_outputs(logits: &[f64], posterior_logit: f64, weights: ScoreWeights) -> Self {
        let discriminative = log_sigmoid(-posterior_logit);
        let generative = -lse(logits);
        Self {
            discriminative,
            generative,
            hybrid: weights.discriminative * discriminative + weights.generative * generative,
        }
    }
}

/// `s_H = ln P(d_out | x) - ln p̂(x)` for a single element.
pub fn hybrid_score(logits: &[f64], pre_logits: &[f64], head: &MlpNetwork) -> Result<f64> {
    if head.input_width() != pre_logits.len() || head.output_width() != 1 {
        return Err(shape_err("posterior head does not match pre-logits"));
    }
    let z = Tensor::matrix(1, pre_logits.len(), pre_logits.to_vec())?;
    let g = head.predict(&z)?.data()[0];
    Ok(ElementScores::from_outputs(logits, g, ScoreWeights::default()).hybrid)
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseScores {
    pub closed: LabelMap,
    pub hybrid: ScoreMap,
    pub discriminative: ScoreMap,
    pub generative: ScoreMap,
}

const SCORE_CHUNK: usize = 512;

/// Scores every row of `inputs` and lays the results out on `shape`.
pub fn dense_scores(model: &HybridModel, inputs: &Tensor, shape: Vec<usize>) -> Result<DenseScores> {
    if inputs.shape().len() != 2 || inputs.cols() != model.input_dim() {
        return Err(shape_err(format!(
            "model expects elements of width {}, got {:?}",
            model.input_dim(),
            inputs.shape()
        )));
    }
    let n = inputs.rows();
    if shape.iter().product::<usize>() != n {
        return Err(shape_err("grid shape does not cover the element batch"));
    }
    let starts: Vec<usize> = (0..n).step_by(SCORE_CHUNK).collect();
    let chunks = starts
        .par_iter()
        .map(|&start| {
            let idx: Vec<usize> = (start..(start + SCORE_CHUNK).min(n)).collect();
            let x = inputs.gather_rows(&idx);
            let z = model.feature_extractor.predict(&x)?;
            let s = model.classifier_head.predict(&z)?;
            let g = model.posterior_head.predict(&z)?;
            let rows: Vec<(Label, ElementScores)> = (0..idx.len())
                .map(|i| {
                    let logits = s.row(i);
                    let label = Label::Class(argmax(logits) as u16);
                    (
                        label,
                        ElementScores::from_outputs(logits, g.data()[i], model.score_weights),
                    )
                })
                .collect();
            Ok(rows)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut closed = Vec::with_capacity(n);
    let (mut sh, mut sd, mut sg) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));
    for (label, sc) in chunks.into_iter().flatten() {
        closed.push(label);
        sh.push(sc.hybrid);
        sd.push(sc.discriminative);
        sg.push(sc.generative);
    }
    Ok(DenseScores {
        closed: LabelMap::new(shape.clone(), closed)?,
        hybrid: ScoreMap::new(shape.clone(), sh)?,
        discriminative: ScoreMap::new(shape.clone(), sd)?,
        generative: ScoreMap::new(shape, sg)?,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct OpenSetPrediction {
    pub labels: LabelMap,
    pub threshold: f64,
}

/// Overrides closed-set labels with `Outlier` where `score > threshold`.
pub fn open_set_predict(closed: &LabelMap, scores: &ScoreMap, threshold: f64) -> Result<OpenSetPrediction> {
    if threshold.is_nan() {
        return Err(Error::NonFinite("threshold is NaN".into()));
    }
    if closed.shape() != scores.shape() {
        return Err(shape_err("closed labels and score map differ in shape"));
    }
    let labels = closed
        .labels()
        .iter()
        .zip(scores.values())
        .map(|(&l, &s)| if s > threshold { Label::Outlier } else { l })
        .collect();
    Ok(OpenSetPrediction {
        labels: LabelMap::new(closed.shape().to_vec(), labels)?,
        threshold,
    })
}
