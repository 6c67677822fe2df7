//! Training loops: closed-set pretraining, flow pretraining, and joint
//! fine-tuning on mixed inlier/negative batches.

use rand::Rng;

use super::config::{DatasetKind, ExperimentConfig, FlowLossKind};
use crate::data::{
    generate_dense_toy, generate_toy2d_with, paste, random_square, sample_negative, sample_negative_points,
    DenseToyWorld, GridMask, NegativeRngs, Toy2dDataset,
};
use crate::error::{Error, Result};
use crate::flow::{alt_flow_loss, flow_total_loss, loss_mle, CouplingFlow};
use crate::losses::{compound_loss, loss_cls_grad, lse_penalty, CompoundTerms, MixedBatch, Partition};
use crate::maps::Label;
use crate::model::HybridModel;
use crate::numerics::{OptimizerState, Tensor};
use crate::rng::{stream_rng, LabRng, Stream};

/// The generated data of a run.
#[derive(Clone, Debug)]
pub enum Dataset {
    Toy2d(Toy2dDataset),
    Dense(DenseToyWorld),
}

impl Dataset {
    pub fn generate(config: &ExperimentConfig) -> Result<Self> {
        Ok(match config.dataset.kind {
            DatasetKind::Toy2d => Dataset::Toy2d(generate_toy2d_with(config.seed, &config.dataset.toy2d)?),
            DatasetKind::Dense => Dataset::Dense(generate_dense_toy(config.seed, &config.dataset.dense)?),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub phase: &'static str,
    pub loss: f64,
    pub terms: Option<CompoundTerms>,
    pub penalty: f64,
    pub flow_loss: Option<f64>,
}

pub const CURVE_HEADER: &str =
    "step,phase,loss,cross_entropy,inlier_posterior,negative_posterior,negative_lse,penalty,flow_loss";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    use crate::metrics::report::fmt_f64;
    let opt = |v: Option<f64>| v.map(fmt_f64).unwrap_or_default();
    let mut out = String::from(CURVE_HEADER);
    out.push('\n');
    for p in points {
        let t = p.terms.as_ref();
        let cols = [
            p.step.to_string(),
            p.phase.to_string(),
            fmt_f64(p.loss),
            opt(t.map(|t| t.cross_entropy)),
            opt(t.map(|t| t.inlier_posterior)),
            opt(t.map(|t| t.negative_posterior)),
            opt(t.map(|t| t.negative_lse)),
            fmt_f64(p.penalty),
            opt(p.flow_loss),
        ];
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainedSystem {
    pub model: HybridModel,
    pub flow: Option<CouplingFlow>,
    pub curve: Vec<CurvePoint>,
    /// `(fine-tune step, samples)` snapshots of the flow.
    pub flow_snapshots: Vec<(usize, Tensor)>,
}

fn diverged(phase: &str, step: usize, what: &str) -> Error {
    Error::Divergence(format!("{phase} step {step}: non-finite {what}"))
}

/// Draws inlier elements: rows of a point set, or random pixels of scenes.
enum InlierSource<'a> {
    Points { x: &'a Tensor, labels: &'a [u16] },
    Scenes(&'a DenseToyWorld),
}

impl InlierSource<'_> {
    fn batch(&self, n: usize, rng: &mut LabRng) -> Result<(Tensor, Vec<Label>)> {
        match self {
            InlierSource::Points { x, labels } => {
                let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..x.rows())).collect();
                Ok((
                    x.gather_rows(&idx),
                    idx.iter().map(|&i| Label::Class(labels[i])).collect(),
                ))
            }
            InlierSource::Scenes(world) => {
                let d = world.config.feature_dim;
                let mut data = Vec::with_capacity(n * d);
                let mut labels = Vec::with_capacity(n);
                for _ in 0..n {
                    let scene = &world.train[rng.random_range(0..world.train.len())];
                    let p = rng.random_range(0..scene.classes.len());
                    data.extend_from_slice(scene.features.row(p));
                    labels.push(Label::Class(scene.classes[p]));
                }
                Ok((Tensor::matrix(n, d, data)?, labels))
            }
        }
    }
}

fn apply(opt: &mut OptimizerState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    opt.step(params, grads)
}

fn model_step(model: &mut HybridModel, opt: &mut OptimizerState, grads: &[f64]) -> Result<()> {
    let mut p = model.params();
    apply(opt, &mut p, grads)?;
    model.set_params(&p)
}

fn flow_step(flow: &mut CouplingFlow, opt: &mut OptimizerState, grads: &[f64]) -> Result<()> {
    let mut p = flow.params();
    apply(opt, &mut p, grads)?;
    flow.set_params(&p)
}

struct Rngs {
    batches: LabRng,
    flow_batches: LabRng,
    choice: LabRng,
    pool: LabRng,
    latent: LabRng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        Self {
            batches: stream_rng(seed, Stream::Batches),
            flow_batches: stream_rng(seed, Stream::FlowBatches),
            choice: stream_rng(seed, Stream::NegativeChoice),
            pool: stream_rng(seed, Stream::Paste),
            latent: stream_rng(seed, Stream::FlowLatent),
        }
    }
}

/// One fine-tune batch: the mixed elements plus the latents of the
/// flow-generated ones.
struct MixedStep {
    batch: MixedBatch,
    partition: Partition,
    latent: Tensor,
}

fn toy_mixed_step(
    config: &ExperimentConfig,
    data: &Toy2dDataset,
    flow: Option<&CouplingFlow>,
    rngs: &mut Rngs,
) -> Result<MixedStep> {
    let s = &config.schedule;
    let inliers = InlierSource::Points {
        x: &data.train,
        labels: &data.train_labels,
    };
    let (x_in, mut labels) = inliers.batch(s.batch_inliers, &mut rngs.batches)?;
    let draw = sample_negative_points(
        &config.negative_source()?,
        flow,
        config.latent_temperature,
        &data.negatives,
        s.batch_negatives,
        NegativeRngs {
            choice: &mut rngs.choice,
            pool: &mut rngs.pool,
            latent: &mut rngs.latent,
        },
    )?;
    let x = Tensor::concat_rows(&[&x_in, &draw.values])?;
    labels.extend(std::iter::repeat_n(Label::Void, s.batch_negatives));
    let mut mask = vec![false; s.batch_inliers];
    mask.extend(std::iter::repeat_n(true, s.batch_negatives));
    let batch = MixedBatch::new(x, labels, mask)?;
    Ok(MixedStep {
        partition: batch.partition(),
        batch,
        latent: draw.latent,
    })
}

fn dense_mixed_step(
    config: &ExperimentConfig,
    world: &DenseToyWorld,
    flow: Option<&CouplingFlow>,
    rngs: &mut Rngs,
) -> Result<MixedStep> {
    let c = &world.config;
    let source = config.negative_source()?;
    let mut parts = Vec::new();
    let mut latents = Vec::new();
    for _ in 0..config.schedule.batch_negatives {
        let scene = &world.train[rngs.batches.random_range(0..world.train.len())];
        let bbox = random_square(
            c.height,
            c.width,
            c.anomaly_area_min,
            c.anomaly_area_max,
            &mut rngs.pool,
        )?;
        let mask = GridMask::rect(c.height, c.width, bbox)?;
        let (patch, choice) = sample_negative(
            &source,
            flow,
            config.latent_temperature,
            &world.bank,
            (bbox.2, bbox.3),
            NegativeRngs {
                choice: &mut rngs.choice,
                pool: &mut rngs.pool,
                latent: &mut rngs.latent,
            },
        )?;
        if choice == crate::data::SourceChoice::Flow {
            // the flow is a bijection, so its latents are recovered exactly
            let f = flow.expect("flow patch implies a flow");
            latents.push(f.forward(&patch.values)?.latent);
        }
        parts.push(paste(&scene.features, &scene.closed_labels(), &patch, &mask)?);
    }
    let inputs: Vec<&Tensor> = parts.iter().map(|b| &b.inputs).collect();
    let x = Tensor::concat_rows(&inputs)?;
    let labels = parts.iter().flat_map(|b| b.labels.iter().copied()).collect();
    let mask = parts.iter().flat_map(|b| b.mask.iter().copied()).collect();
    let batch = MixedBatch::new(x, labels, mask)?;
    let latent = if latents.is_empty() {
        Tensor::zeros(vec![0, c.feature_dim])
    } else {
        Tensor::concat_rows(&latents.iter().collect::<Vec<_>>())?
    };
    Ok(MixedStep {
        partition: batch.partition(),
        batch,
        latent,
    })
}

fn log_due(step: usize, total: usize, every: usize) -> bool {
    step.is_multiple_of(every) || step + 1 == total
}

/// Runs the full schedule for `config` on `data`.
pub fn train_system(config: &ExperimentConfig, data: &Dataset) -> Result<TrainedSystem> {
    config.validate()?;
    let s = &config.schedule;
    let seed = config.seed;
    let mut model = HybridModel::new(&config.model_config(), &mut stream_rng(seed, Stream::ModelInit))?;
    model.score_weights = config.score_weights;
    let mut rngs = Rngs::new(seed);
    let mut curve = Vec::new();
    let inliers = match data {
        Dataset::Toy2d(d) => InlierSource::Points {
            x: &d.train,
            labels: &d.train_labels,
        },
        Dataset::Dense(w) => InlierSource::Scenes(w),
    };

    let mut opt = OptimizerState::adam(s.learning_rate, model.param_count())?;
    for step in 0..s.pretrain_steps {
        let (x, labels) = inliers.batch(s.batch_inliers, &mut rngs.batches)?;
        let pass = model.forward(&x)?;
        let (loss, d_logits) = loss_cls_grad(&pass.logits, &labels)?;
        if !loss.is_finite() {
            return Err(diverged("pretrain", step, "cross-entropy"));
        }
        let (g, _) = model.backward(&pass, &d_logits, &vec![0.0; labels.len()])?;
        model_step(&mut model, &mut opt, &g.to_flat())?;
        if log_due(step, s.pretrain_steps, s.log_every) {
            curve.push(CurvePoint {
                step,
                phase: "pretrain",
                loss,
                terms: None,
                penalty: 0.0,
                flow_loss: None,
            });
        }
    }

    let source = config.negative_source()?;
    let mut flow = None;
    let mut flow_opt = None;
    if source.uses_flow() {
        let mut f = CouplingFlow::new(&config.flow_config(), &mut stream_rng(seed, Stream::FlowInit))?;
        let mut fo = OptimizerState::adam(s.flow_learning_rate, f.param_count())?;
        for step in 0..s.flow_pretrain_steps {
            let (x, _) = inliers.batch(s.batch_inliers, &mut rngs.flow_batches)?;
            let l = loss_mle(&f, &x)?;
            if !l.value.is_finite() {
                return Err(diverged("flow_pretrain", step, "likelihood"));
            }
            flow_step(&mut f, &mut fo, &l.grads.to_flat())?;
            if log_due(step, s.flow_pretrain_steps, s.log_every) {
                curve.push(CurvePoint {
                    step,
                    phase: "flow_pretrain",
                    loss: l.value,
                    terms: None,
                    penalty: 0.0,
                    flow_loss: Some(l.value),
                });
            }
        }
        flow = Some(f);
        flow_opt = Some(fo);
    }

    let mut snapshots = Vec::new();
    let mut probe_rng = stream_rng(seed, Stream::Probe);
    let mut opt = OptimizerState::adam(s.learning_rate, model.param_count())?;
    for step in 0..s.finetune_steps {
        let mixed = match data {
            Dataset::Toy2d(d) => toy_mixed_step(config, d, flow.as_ref(), &mut rngs)?,
            Dataset::Dense(w) => dense_mixed_step(config, w, flow.as_ref(), &mut rngs)?,
        };
        let pass = model.forward(&mixed.batch.inputs)?;
        let mut loss = compound_loss(
            &pass.logits,
            &pass.posterior_logits,
            &mixed.batch.labels,
            &mixed.partition,
            &config.loss,
        )
        .map_err(|e| match e {
            Error::NonFinite(_) => diverged("finetune", step, "compound loss"),
            e => e,
        })?;
        let penalty = lse_penalty(&pass.logits, &mixed.partition, config.lse_penalty, &mut loss.d_logits)?;
        if !penalty.is_finite() {
            return Err(diverged("finetune", step, "logit anchor"));
        }
        let (g, _) = model.backward(&pass, &loss.d_logits, &loss.d_posterior_logits)?;

        // the flow update sees the same model state as the model update
        let mut flow_value = None;
        if let (Some(f), Some(fo)) = (flow.as_mut(), flow_opt.as_mut()) {
            let (crops, _) = inliers.batch(s.batch_inliers, &mut rngs.flow_batches)?;
            let (value, grads) = if mixed.latent.rows() == 0 {
                let l = loss_mle(f, &crops)?;
                (l.value, l.grads)
            } else {
                let l = match config.flow_loss {
                    FlowLossKind::Boundary => {
                        flow_total_loss(f, &crops, &model, &mixed.latent, &config.flow_objective)?
                    }
                    FlowLossKind::Alt => alt_flow_loss(f, &crops, &model, &mixed.latent, &config.loss)?,
                };
                (l.value, l.grads)
            };
            if !value.is_finite() {
                return Err(diverged("finetune", step, "flow loss"));
            }
            flow_step(f, fo, &grads.to_flat())?;
            flow_value = Some(value);
            if step % s.flow_sample_every == 0 || step + 1 == s.finetune_steps {
                snapshots.push((step, f.sample(s.flow_sample_count, &mut probe_rng)?));
            }
        }
        model_step(&mut model, &mut opt, &g.to_flat())?;
        if log_due(step, s.finetune_steps, s.log_every) {
            curve.push(CurvePoint {
                step,
                phase: "finetune",
                loss: loss.value + penalty,
                terms: Some(loss.terms),
                penalty,
                flow_loss: flow_value,
            });
        }
    }
    Ok(TrainedSystem {
        model,
        flow,
        curve,
        flow_snapshots: snapshots,
    })
}
