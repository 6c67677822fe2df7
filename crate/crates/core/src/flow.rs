//! Affine-coupling normalizing flow used as a synthetic negative generator.
//!
//! The flow acts pointwise on element feature vectors, so a patch of any
//! spatial size is sampled by inverting an i.i.d. Gaussian latent grid.
//! Layer `i` conditions on coordinates `j` with `j % 2 == i % 2` and
//! transforms the rest, so two consecutive layers touch every coordinate.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::checkpoint::{Checkpoint, SectionTag};
use crate::error::{shape_err, Error, Result};
use crate::losses::LossWeights;
use crate::model::HybridModel;
use crate::numerics::{
    lse, sigmoid, softmax_into, softplus, Activation, Dense, ForwardCache, MlpGradients, MlpNetwork, Tensor,
};
use crate::rng::rng_from_seed;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub dim: usize,
    pub depth: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub max_log_scale: f64,
    /// Inclusive range of square patch side lengths accepted by [`flow_sample`].
    pub patch_min: usize,
    pub patch_max: usize,
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            depth: 8,
            hidden_width: 32,
            hidden_layers: 2,
            max_log_scale: 2.0,
            patch_min: 4,
            patch_max: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct CouplingLayer {
    cond: Vec<usize>,
    trans: Vec<usize>,
    /// Maps `x[cond]` to `[raw scale; shift]` over `trans`.
    net: MlpNetwork,
}

fn split_coords(dim: usize, layer: usize) -> (Vec<usize>, Vec<usize>) {
    (0..dim).partition(|j| j % 2 == layer % 2)
}

#[derive(Clone, Debug, PartialEq)]
pub struct CouplingFlow {
    dim: usize,
    max_log_scale: f64,
    patch_min: usize,
    patch_max: usize,
    layers: Vec<CouplingLayer>,
}

#[derive(Clone, Debug)]
struct LayerTrace {
    net_cache: ForwardCache,
    /// Pre-tanh scale outputs.
    raw: Vec<f64>,
    log_scale: Vec<f64>,
    /// The transformed coordinates on the data side of the layer.
    x_b: Vec<f64>,
}

/// Cached data → latent pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub latent: Tensor,
    pub log_det: Vec<f64>,
    traces: Vec<LayerTrace>,
}

/// Cached latent → data pass.
#[derive(Clone, Debug)]
pub struct InversePass {
    pub sample: Tensor,
    traces: Vec<LayerTrace>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowGradients {
    pub layers: Vec<MlpGradients>,
}

impl FlowGradients {
    pub fn zeros_like(flow: &CouplingFlow) -> Self {
        Self {
            layers: flow.layers.iter().map(|l| MlpGradients::zeros_like(&l.net)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &FlowGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.add_assign(b);
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            l.write_flat(&mut out);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NegativePatch {
    pub height: usize,
    pub width: usize,
    /// `height·width × dim`, row-major over the grid.
    pub values: Tensor,
}

impl CouplingFlow {
    /// A flow whose conditioners end in a zero layer, hence the identity map.
    pub fn new<R: Rng + ?Sized>(config: &FlowConfig, rng: &mut R) -> Result<Self> {
        if config.dim < 2 {
            return Err(Error::InvalidArgument("coupling needs at least two coordinates".into()));
        }
        if config.depth < 2 {
            return Err(Error::InvalidArgument(
                "depth < 2 leaves coordinates untransformed".into(),
            ));
        }
        if !(config.max_log_scale.is_finite() && config.max_log_scale > 0.0) {
            return Err(Error::InvalidArgument("max_log_scale must be positive".into()));
        }
        if config.patch_min == 0 || config.patch_min > config.patch_max {
            return Err(Error::InvalidArgument("empty patch size interval".into()));
        }
        let layers = (0..config.depth)
            .map(|i| {
                let (cond, trans) = split_coords(config.dim, i);
                let mut dense = Vec::new();
                let mut width = cond.len();
                for _ in 0..config.hidden_layers {
                    dense.push(Dense::random(width, config.hidden_width, Activation::Tanh, rng));
                    width = config.hidden_width;
                }
                dense.push(Dense::zeros(width, 2 * trans.len(), Activation::Identity));
                Ok(CouplingLayer {
                    cond,
                    trans,
                    net: MlpNetwork::new(dense)?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: config.dim,
            max_log_scale: config.max_log_scale,
            patch_min: config.patch_min,
            patch_max: config.patch_max,
            layers,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn patch_interval(&self) -> (usize, usize) {
        (self.patch_min, self.patch_max)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.net.param_count()).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            l.net.write_params(&mut out);
        }
        out
    }

    pub fn set_params(&mut self, src: &[f64]) -> Result<()> {
        if src.len() != self.param_count() {
            return Err(shape_err("flow parameter vector length"));
        }
        let mut at = 0;
        for l in &mut self.layers {
            at += l.net.read_params(&src[at..])?;
        }
        Ok(())
    }

    /// Perturbs every conditioner output layer; useful for tests that need a
    /// non-trivial flow without training.
    pub fn randomize_outputs<R: Rng + ?Sized>(&mut self, scale: f64, rng: &mut R) {
        for l in &mut self.layers {
            let last = l.net.layers_mut().last_mut().expect("conditioner has layers");
            for w in last.weights.iter_mut().chain(last.bias.iter_mut()) {
                let n: f64 = StandardNormal.sample(rng);
                *w = scale * n;
            }
        }
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim {
            return Err(shape_err(format!(
                "flow expects elements of width {}, got {:?}",
                self.dim,
                x.shape()
            )));
        }
        x.ensure_finite("flow input")
    }

    fn conditioner(
        &self,
        layer: &CouplingLayer,
        side: &Tensor,
    ) -> Result<(ForwardCache, Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = side.rows();
        let cond = Tensor::matrix(
            n,
            layer.cond.len(),
            (0..n)
                .flat_map(|r| layer.cond.iter().map(move |&j| side.row(r)[j]))
                .collect(),
        )?;
        let (out, cache) = layer.net.forward(&cond)?;
        let nb = layer.trans.len();
        let m = self.max_log_scale;
        let mut raw = Vec::with_capacity(n * nb);
        let mut ls = Vec::with_capacity(n * nb);
        let mut shift = Vec::with_capacity(n * nb);
        for r in 0..n {
            let o = out.row(r);
            for b in 0..nb {
                raw.push(o[b]);
                ls.push(m * (o[b] / m).tanh());
                shift.push(o[nb + b]);
            }
        }
        Ok((cache, raw, ls, shift))
    }

    /// Data → latent with per-row log-determinants.
    pub fn forward(&self, x: &Tensor) -> Result<ForwardPass> {
        self.check_input(x)?;
        let n = x.rows();
        let mut cur = x.clone();
        let mut log_det = vec![0.0; n];
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (net_cache, raw, log_scale, shift) = self.conditioner(layer, &cur)?;
            let nb = layer.trans.len();
            let mut x_b = Vec::with_capacity(n * nb);
            for r in 0..n {
                let row = cur.row_mut(r);
                for (b, &j) in layer.trans.iter().enumerate() {
                    let q = r * nb + b;
                    x_b.push(row[j]);
                    row[j] = row[j] * log_scale[q].exp() + shift[q];
                    log_det[r] += log_scale[q];
                }
            }
            traces.push(LayerTrace {
                net_cache,
                raw,
                log_scale,
                x_b,
            });
        }
        Ok(ForwardPass {
            latent: cur,
            log_det,
            traces,
        })
    }

    /// Latent → data.
    pub fn inverse(&self, z: &Tensor) -> Result<InversePass> {
        self.check_input(z)?;
        let n = z.rows();
        let mut cur = z.clone();
        let mut traces = Vec::with_capacity(self.layers.len());
        for layer in self.layers.iter().rev() {
            let (net_cache, raw, log_scale, shift) = self.conditioner(layer, &cur)?;
            let nb = layer.trans.len();
            let mut x_b = Vec::with_capacity(n * nb);
            for r in 0..n {
                let row = cur.row_mut(r);
                for (b, &j) in layer.trans.iter().enumerate() {
                    let q = r * nb + b;
                    row[j] = (row[j] - shift[q]) * (-log_scale[q]).exp();
                    x_b.push(row[j]);
                }
            }
            traces.push(LayerTrace {
                net_cache,
                raw,
                log_scale,
                x_b,
            });
        }
        traces.reverse();
        Ok(InversePass { sample: cur, traces })
    }

    fn scale_grad(&self, trace: &LayerTrace, q: usize, d_ls: f64) -> f64 {
        let t = (trace.raw[q] / self.max_log_scale).tanh();
        d_ls * (1.0 - t * t)
    }

    fn net_backward(
        &self,
        layer: &CouplingLayer,
        trace: &LayerTrace,
        d_out: Vec<f64>,
        n: usize,
        d_side: &mut Tensor,
    ) -> Result<MlpGradients> {
        let d_out = Tensor::matrix(n, 2 * layer.trans.len(), d_out)?;
        let (grads, d_cond) = layer.net.backward(&trace.net_cache, &d_out)?;
        for r in 0..n {
            for (a, &j) in layer.cond.iter().enumerate() {
                d_side.row_mut(r)[j] += d_cond.row(r)[a];
            }
        }
        Ok(grads)
    }

    /// Gradients of a loss `L(z, log_det)` given `∂L/∂z` and `∂L/∂log_det`.
    /// Returns parameter gradients and `∂L/∂x`.
    pub fn backward_forward(
        &self,
        pass: &ForwardPass,
        d_latent: &Tensor,
        d_log_det: &[f64],
    ) -> Result<(FlowGradients, Tensor)> {
        let n = pass.latent.rows();
        if d_latent.shape() != pass.latent.shape() || d_log_det.len() != n {
            return Err(shape_err("flow forward gradient shapes"));
        }
        let mut dy = d_latent.clone();
        let mut grads = vec![None; self.layers.len()];
        for (li, layer) in self.layers.iter().enumerate().rev() {
            let trace = &pass.traces[li];
            let nb = layer.trans.len();
            let mut d_out = vec![0.0; n * 2 * nb];
            for r in 0..n {
                let row = dy.row_mut(r);
                for (b, &j) in layer.trans.iter().enumerate() {
                    let q = r * nb + b;
                    let e = trace.log_scale[q].exp();
                    let g = row[j];
                    let d_ls = g * trace.x_b[q] * e + d_log_det[r];
                    d_out[r * 2 * nb + b] = self.scale_grad(trace, q, d_ls);
                    d_out[r * 2 * nb + nb + b] = g;
                    row[j] = g * e;
                }
            }
            grads[li] = Some(self.net_backward(layer, trace, d_out, n, &mut dy)?);
        }
        Ok((
            FlowGradients {
                layers: grads.into_iter().map(|g| g.expect("every layer visited")).collect(),
            },
            dy,
        ))
    }

    /// Gradients of a loss on generated samples given `∂L/∂x`.
    /// Returns parameter gradients and `∂L/∂z`.
    pub fn backward_inverse(&self, pass: &InversePass, d_sample: &Tensor) -> Result<(FlowGradients, Tensor)> {
        let n = pass.sample.rows();
        if d_sample.shape() != pass.sample.shape() {
            return Err(shape_err("flow inverse gradient shape"));
        }
        let mut dx = d_sample.clone();
        let mut grads = Vec::with_capacity(self.layers.len());
        for (li, layer) in self.layers.iter().enumerate() {
            let trace = &pass.traces[li];
            let nb = layer.trans.len();
            let mut d_out = vec![0.0; n * 2 * nb];
            for r in 0..n {
                let row = dx.row_mut(r);
                for (b, &j) in layer.trans.iter().enumerate() {
                    let q = r * nb + b;
                    let inv = (-trace.log_scale[q]).exp();
                    let g = row[j];
                    d_out[r * 2 * nb + b] = self.scale_grad(trace, q, -g * trace.x_b[q]);
                    d_out[r * 2 * nb + nb + b] = -g * inv;
                    row[j] = g * inv;
                }
            }
            grads.push(self.net_backward(layer, trace, d_out, n, &mut dx)?);
        }
        Ok((FlowGradients { layers: grads }, dx))
    }

    /// `ln p_ζ(x)` per row.
    pub fn logprob(&self, x: &Tensor) -> Result<Vec<f64>> {
        let pass = self.forward(x)?;
        Ok(logprob_of(&pass, self.dim))
    }

    pub fn sample_latent<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Tensor {
        self.sample_latent_tempered(n, 1.0, rng)
    }

    /// Latents from `N(0, τ²I)`; `τ > 1` reaches further into the tails.
    pub fn sample_latent_tempered<R: Rng + ?Sized>(&self, n: usize, temperature: f64, rng: &mut R) -> Tensor {
        let data = (0..n * self.dim)
            .map(|_| temperature * Distribution::<f64>::sample(&StandardNormal, rng))
            .collect();
        Tensor::matrix(n, self.dim, data).expect("latent shape")
    }

    /// `n` independent samples.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Tensor> {
        let z = self.sample_latent(n, rng);
        Ok(self.inverse(&z)?.sample)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            tag: SectionTag::Flow,
            meta: vec![
                self.dim as f64,
                self.max_log_scale,
                self.patch_min as f64,
                self.patch_max as f64,
            ],
            networks: self.layers.iter().map(|l| l.net.clone()).collect(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        let ckpt = ckpt.expect_tag(SectionTag::Flow)?;
        let [dim, m, pmin, pmax] = ckpt.meta[..] else {
            return Err(Error::Format("flow checkpoint needs four meta values".into()));
        };
        let as_count = |v: f64| -> Result<usize> {
            if v >= 0.0 && v.fract() == 0.0 && v < 1e9 {
                Ok(v as usize)
            } else {
                Err(Error::Format(format!("bad count {v} in flow checkpoint")))
            }
        };
        let dim = as_count(dim)?;
        let layers = ckpt
            .networks
            .into_iter()
            .enumerate()
            .map(|(i, net)| {
                let (cond, trans) = split_coords(dim, i);
                if net.input_width() != cond.len() || net.output_width() != 2 * trans.len() {
                    return Err(Error::Format(format!("coupling layer {i} has the wrong widths")));
                }
                Ok(CouplingLayer { cond, trans, net })
            })
            .collect::<Result<Vec<_>>>()?;
        if layers.len() < 2 || !(m.is_finite() && m > 0.0) {
            return Err(Error::Format("invalid flow checkpoint".into()));
        }
        Ok(Self {
            dim,
            max_log_scale: m,
            patch_min: as_count(pmin)?,
            patch_max: as_count(pmax)?,
            layers,
        })
    }
}

fn logprob_of(pass: &ForwardPass, dim: usize) -> Vec<f64> {
    (0..pass.latent.rows())
        .map(|r| {
            let sq: f64 = pass.latent.row(r).iter().map(|v| v * v).sum();
            -0.5 * sq - 0.5 * dim as f64 * LN_2PI + pass.log_det[r]
        })
        .collect()
}

/// `z = h_ζ(x)` and `ln |det ∂z/∂x|` per row.
pub fn flow_forward(flow: &CouplingFlow, x: &Tensor) -> Result<(Tensor, Vec<f64>)> {
    let pass = flow.forward(x)?;
    Ok((pass.latent, pass.log_det))
}

pub fn flow_inverse(flow: &CouplingFlow, z: &Tensor) -> Result<Tensor> {
    Ok(flow.inverse(z)?.sample)
}

pub fn flow_logprob(flow: &CouplingFlow, x: &Tensor) -> Result<Vec<f64>> {
    flow.logprob(x)
}

/// A `height × width` patch from a fresh latent seeded by `seed`.
pub fn flow_sample(flow: &CouplingFlow, size: (usize, usize), seed: u64) -> Result<NegativePatch> {
    let (lo, hi) = flow.patch_interval();
    let (h, w) = size;
    if !(lo..=hi).contains(&h) || !(lo..=hi).contains(&w) {
        return Err(Error::InvalidArgument(format!(
            "patch size {h}x{w} outside [{lo}, {hi}]"
        )));
    }
    let mut rng = rng_from_seed(seed);
    let values = flow.sample(h * w, &mut rng)?;
    Ok(NegativePatch {
        height: h,
        width: w,
        values,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowLoss {
    pub value: f64,
    pub grads: FlowGradients,
}

/// `-mean ln p_ζ(x)` over a batch of inlier elements.
pub fn loss_mle(flow: &CouplingFlow, crops: &Tensor) -> Result<FlowLoss> {
    if crops.shape().len() != 2 || crops.rows() == 0 {
        return Err(Error::EmptyAxis);
    }
    let pass = flow.forward(crops)?;
    let n = crops.rows() as f64;
    let lp = logprob_of(&pass, flow.dim);
    let value = -lp.iter().sum::<f64>() / n;
    if !value.is_finite() {
        return Err(Error::NonFinite("flow NLL".into()));
    }
    let d_latent = pass.latent.map(|v| v / n);
    let d_log_det = vec![-1.0 / n; crops.rows()];
    let (grads, _) = flow.backward_forward(&pass, &d_latent, &d_log_det)?;
    Ok(FlowLoss { value, grads })
}

/// Jensen–Shannon divergence between `p` and the uniform distribution,
/// natural logs, `½KL(P‖M) + ½KL(U‖M)`.
pub fn jsd_to_uniform(p: &[f64]) -> f64 {
    let u = 1.0 / p.len() as f64;
    let mut total = 0.0;
    for &pk in p {
        let m = 0.5 * (pk + u);
        if pk > 0.0 {
            total += 0.5 * pk * (pk / m).ln();
        }
        total += 0.5 * u * (u / m).ln();
    }
    total
}

/// Rescaling that maps a one-hot posterior to `ln 2`.
pub fn jsd_scale(classes: usize) -> f64 {
    let mut one_hot = vec![0.0; classes];
    one_hot[0] = 1.0;
    std::f64::consts::LN_2 / jsd_to_uniform(&one_hot)
}

fn check_distribution(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.len() < 2 || p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) || (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("not a distribution: {p:?}")));
    }
    Ok(())
}

/// Mean boundary-attraction loss over posterior rows: zero iff every row is
/// uniform, `ln 2` iff every row is one-hot.
pub fn loss_jsd(posteriors: &Tensor) -> Result<f64> {
    if posteriors.shape().len() != 2 || posteriors.rows() == 0 {
        return Err(Error::EmptyAxis);
    }
    let scale = jsd_scale(posteriors.cols());
    let mut total = 0.0;
    for r in 0..posteriors.rows() {
        let p = posteriors.row(r);
        check_distribution(p)?;
        total += scale * jsd_to_uniform(p);
    }
    Ok(total / posteriors.rows() as f64)
}

/// [`loss_jsd`] of `softmax(logits)` with its gradient w.r.t. the logits.
pub fn loss_jsd_logits(logits: &Tensor) -> Result<(f64, Tensor)> {
    if logits.shape().len() != 2 || logits.rows() == 0 || logits.cols() < 2 {
        return Err(Error::EmptyAxis);
    }
    let (n, k) = (logits.rows(), logits.cols());
    let scale = jsd_scale(k) / n as f64;
    let u = 1.0 / k as f64;
    let mut d = Tensor::zeros(vec![n, k]);
    let mut p = vec![0.0; k];
    let mut total = 0.0;
    for r in 0..n {
        softmax_into(logits.row(r), &mut p);
        total += jsd_to_uniform(&p);
        // ∂J/∂p_k = ½ ln(p_k / m_k), pushed through the softmax Jacobian
        let g: Vec<f64> = p
            .iter()
            .map(|&pk| {
                if pk > 0.0 {
                    0.5 * (2.0 * pk / (pk + u)).ln()
                } else {
                    0.0
                }
            })
            .collect();
        let mean: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum();
        for (c, slot) in d.row_mut(r).iter_mut().enumerate() {
            *slot = scale * p[c] * (g[c] - mean);
        }
    }
    Ok((scale * total, d))
}

/// Weighting of the boundary term in the flow objective.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowObjective {
    pub lambda: f64,
    /// `+1` penalises confident posteriors on generated samples; `-1` rewards them.
    pub jsd_sign: f64,
}

impl Default for FlowObjective {
    fn default() -> Self {
        Self {
            lambda: 0.03,
            jsd_sign: 1.0,
        }
    }
}

impl FlowObjective {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!("lambda {} must be >= 0", self.lambda)));
        }
        if self.jsd_sign != 1.0 && self.jsd_sign != -1.0 {
            return Err(Error::InvalidArgument("jsd_sign must be +1 or -1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowTotalLoss {
    pub value: f64,
    pub mle: f64,
    /// Boundary term on the generated samples, before λ and sign.
    pub boundary: f64,
    pub grads: FlowGradients,
}

fn through_model(
    flow: &CouplingFlow,
    model: &HybridModel,
    latent: &Tensor,
    loss: impl FnOnce(&Tensor, &[f64]) -> Result<(f64, Tensor, Vec<f64>)>,
) -> Result<(f64, FlowGradients)> {
    let inv = flow.inverse(latent)?;
    let pass = model.forward(&inv.sample)?;
    let (value, d_logits, d_post) = loss(&pass.logits, &pass.posterior_logits)?;
    let (_, dx) = model.backward(&pass, &d_logits, &d_post)?;
    let (grads, _) = flow.backward_inverse(&inv, &dx)?;
    Ok((value, grads))
}

fn combine(mle: FlowLoss, weight: f64, boundary: f64, mut grads: FlowGradients) -> FlowTotalLoss {
    for layer in &mut grads.layers {
        for g in &mut layer.layers {
            g.weights.iter_mut().chain(g.bias.iter_mut()).for_each(|v| *v *= weight);
        }
    }
    grads.add_assign(&mle.grads);
    FlowTotalLoss {
        value: mle.value + weight * boundary,
        mle: mle.value,
        boundary,
        grads,
    }
}

/// `L_mle(crops) ± λ·L_jsd(model posterior at flow samples of latent)`.
///
/// Gradients of the boundary term pass through the whole model into ζ; the
/// model's own parameters are not touched.
pub fn flow_total_loss(
    flow: &CouplingFlow,
    crops: &Tensor,
    model: &HybridModel,
    latent: &Tensor,
    objective: &FlowObjective,
) -> Result<FlowTotalLoss> {
    objective.validate()?;
    let mle = loss_mle(flow, crops)?;
    if objective.lambda == 0.0 {
        let grads = mle.grads.clone();
        return Ok(FlowTotalLoss {
            value: mle.value,
            mle: mle.value,
            boundary: 0.0,
            grads,
        });
    }
    let (boundary, grads) = through_model(flow, model, latent, |logits, post| {
        let (v, d) = loss_jsd_logits(logits)?;
        Ok((v, d, vec![0.0; post.len()]))
    })?;
    Ok(combine(mle, objective.jsd_sign * objective.lambda, boundary, grads))
}

/// The ablated objective: the flow is trained on the detector's negative-side
/// terms at its samples, `L_mle + β3·mean softplus(g) + β4·mean LSE(s)`.
pub fn alt_flow_loss(
    flow: &CouplingFlow,
    crops: &Tensor,
    model: &HybridModel,
    latent: &Tensor,
    weights: &LossWeights,
) -> Result<FlowTotalLoss> {
    let mle = loss_mle(flow, crops)?;
    let (b3, b4) = (weights.beta3, weights.beta4);
    if b3 == 0.0 && b4 == 0.0 {
        let grads = mle.grads.clone();
        return Ok(FlowTotalLoss {
            value: mle.value,
            mle: mle.value,
            boundary: 0.0,
            grads,
        });
    }
    let (boundary, grads) = through_model(flow, model, latent, |logits, post| {
        let (n, k) = (logits.rows(), logits.cols());
        let nf = n as f64;
        let mut d = Tensor::zeros(vec![n, k]);
        let mut dp = vec![0.0; n];
        let mut p = vec![0.0; k];
        let mut total = 0.0;
        for r in 0..n {
            let s = logits.row(r);
            total += b3 * softplus(post[r]) + b4 * lse(s);
            dp[r] = b3 * sigmoid(post[r]) / nf;
            softmax_into(s, &mut p);
            for (slot, pc) in d.row_mut(r).iter_mut().zip(&p) {
                *slot = b4 * pc / nf;
            }
        }
        Ok((total / nf, d, dp))
    })?;
    Ok(combine(mle, 1.0, boundary, grads))
}
