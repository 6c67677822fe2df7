//! Experiment configuration: every knob of a run, serialisable as JSON.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::data::{DenseToyConfig, NegativeSource, Toy2dConfig};
use crate::error::{Error, Result};
use crate::flow::{FlowConfig, FlowObjective};
use crate::losses::LossWeights;
use crate::model::{ModelConfig, ScoreWeights};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Toy2d,
    Dense,
}

/// Both dataset configs are always present; `kind` selects one. This keeps
/// every key addressable by an override regardless of the active dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSettings {
    pub kind: DatasetKind,
    pub toy2d: Toy2dConfig,
    pub dense: DenseToyConfig,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Toy2d,
            toy2d: Toy2dConfig::default(),
            dense: DenseToyConfig::default(),
        }
    }
}

impl DatasetSettings {
    pub fn input_dim(&self) -> usize {
        match self.kind {
            DatasetKind::Toy2d => 2,
            DatasetKind::Dense => self.dense.feature_dim,
        }
    }

    pub fn classes(&self) -> usize {
        match self.kind {
            DatasetKind::Toy2d => 2,
            DatasetKind::Dense => self.dense.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden_width: usize,
    pub feature_layers: usize,
    pub posterior_hidden: usize,
}

impl Default for ModelSettings {
    fn default() -> Self {
        let m = ModelConfig::toy(2, 2);
        Self {
            hidden_width: m.hidden_width,
            feature_layers: m.feature_layers,
            posterior_hidden: m.posterior_hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowSettings {
    pub depth: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub max_log_scale: f64,
    pub patch_min: usize,
    pub patch_max: usize,
}

impl Default for FlowSettings {
    fn default() -> Self {
        let f = FlowConfig::new(2);
        Self {
            depth: f.depth,
            hidden_width: f.hidden_width,
            hidden_layers: f.hidden_layers,
            max_log_scale: f.max_log_scale,
            patch_min: f.patch_min,
            patch_max: f.patch_max,
        }
    }
}

/// Which objective trains the flow during joint training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowLossKind {
    /// `L_mle ± λ·L_jsd`.
    Boundary,
    /// `L_mle` plus the detector's negative-side terms at the samples.
    Alt,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Schedule {
    /// Closed-set cross-entropy steps before fine-tuning.
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    /// Maximum-likelihood steps on inliers before joint training.
    pub flow_pretrain_steps: usize,
    pub batch_inliers: usize,
    /// Negatives per step (point data); mixed images per step (dense data).
    pub batch_negatives: usize,
    pub learning_rate: f64,
    pub flow_learning_rate: f64,
    pub log_every: usize,
    /// Flow samples are written to the run every this many fine-tune steps.
    pub flow_sample_every: usize,
    pub flow_sample_count: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self {
            pretrain_steps: 1000,
            finetune_steps: 2000,
            flow_pretrain_steps: 1000,
            batch_inliers: 64,
            batch_negatives: 64,
            learning_rate: 1e-3,
            flow_learning_rate: 1e-3,
            log_every: 50,
            flow_sample_every: 500,
            flow_sample_count: 16,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSettings {
    pub target_tpr: f64,
    /// Toy heatmaps cover `[-extent, extent]²` at `resolution²` points.
    pub heatmap_resolution: usize,
    pub heatmap_extent: f64,
    /// Flow samples used to probe the classifier's confidence after training.
    pub flow_probe_samples: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            target_tpr: 0.95,
            heatmap_resolution: 64,
            heatmap_extent: 4.0,
            flow_probe_samples: 2000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    /// Root seed; every random stream of the run derives from it.
    pub seed: u64,
    pub dataset: DatasetSettings,
    pub model: ModelSettings,
    pub score_weights: ScoreWeights,
    pub loss: LossWeights,
    /// Weight of the quadratic log-sum-exp anchor added during fine-tuning.
    pub lse_penalty: f64,
    /// Probability that a negative is real rather than flow-generated.
    pub mixing_b: f64,
    pub latent_temperature: f64,
    pub flow: FlowSettings,
    pub flow_objective: FlowObjective,
    pub flow_loss: FlowLossKind,
    pub schedule: Schedule,
    pub evaluation: EvalSettings,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::toy()
    }
}

impl ExperimentConfig {
    /// 2-D toy run with real negatives, seed 7.
    pub fn toy() -> Self {
        Self {
            name: "toy2d".into(),
            seed: 7,
            dataset: DatasetSettings::default(),
            model: ModelSettings::default(),
            score_weights: ScoreWeights::default(),
            loss: LossWeights::default(),
            lse_penalty: 0.001,
            mixing_b: 1.0,
            latent_temperature: 1.5,
            flow: FlowSettings::default(),
            flow_objective: FlowObjective::default(),
            flow_loss: FlowLossKind::Boundary,
            schedule: Schedule::default(),
            evaluation: EvalSettings::default(),
            output_dir: "runs/toy2d".into(),
        }
    }

    /// Dense toy world; one mixed image per fine-tune step.
    pub fn dense() -> Self {
        let mut c = Self::toy();
        c.name = "dense".into();
        c.dataset.kind = DatasetKind::Dense;
        c.schedule.pretrain_steps = 500;
        c.schedule.finetune_steps = 1000;
        c.schedule.flow_pretrain_steps = 500;
        c.schedule.batch_negatives = 1;
        c.output_dir = "runs/dense".into();
        c
    }

    pub fn negative_source(&self) -> Result<NegativeSource> {
        NegativeSource::from_b(self.mixing_b)
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            input_dim: self.dataset.input_dim(),
            classes: self.dataset.classes(),
            hidden_width: self.model.hidden_width,
            feature_layers: self.model.feature_layers,
            posterior_hidden: self.model.posterior_hidden,
        }
    }

    pub fn flow_config(&self) -> FlowConfig {
        FlowConfig {
            dim: self.dataset.input_dim(),
            depth: self.flow.depth,
            hidden_width: self.flow.hidden_width,
            hidden_layers: self.flow.hidden_layers,
            max_log_scale: self.flow.max_log_scale,
            patch_min: self.flow.patch_min,
            patch_max: self.flow.patch_max,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |e: Error| Error::Config(e.to_string());
        match self.dataset.kind {
            DatasetKind::Toy2d => self.dataset.toy2d.validate().map_err(cfg)?,
            DatasetKind::Dense => self.dataset.dense.validate().map_err(cfg)?,
        }
        self.loss.validate().map_err(cfg)?;
        self.flow_objective.validate().map_err(cfg)?;
        self.negative_source().map_err(cfg)?;
        let s = &self.schedule;
        if s.batch_inliers == 0 || s.batch_negatives == 0 || s.log_every == 0 || s.flow_sample_every == 0 {
            return Err(Error::Config(
                "batch sizes and logging intervals must be positive".into(),
            ));
        }
        for (name, lr) in [
            ("learning_rate", s.learning_rate),
            ("flow_learning_rate", s.flow_learning_rate),
        ] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lse_penalty.is_finite() && self.lse_penalty >= 0.0) {
            return Err(Error::Config("lse_penalty must be >= 0".into()));
        }
        if !(self.latent_temperature.is_finite() && self.latent_temperature > 0.0) {
            return Err(Error::Config("latent_temperature must be positive".into()));
        }
        let e = &self.evaluation;
        if !(e.target_tpr > 0.0 && e.target_tpr <= 1.0) {
            return Err(Error::Config("target_tpr must lie in (0, 1]".into()));
        }
        if e.heatmap_resolution < 2 || !(e.heatmap_extent.is_finite() && e.heatmap_extent > 0.0) {
            return Err(Error::Config(
                "heatmap grid must be at least 2x2 with a positive extent".into(),
            ));
        }
        let m = &self.model;
        if m.hidden_width == 0 || m.feature_layers == 0 || m.posterior_hidden == 0 {
            return Err(Error::Config("model widths and depth must be positive".into()));
        }
        let f = &self.flow;
        if f.depth == 0
            || f.hidden_width == 0
            || !(f.max_log_scale > 0.0)
            || f.patch_min == 0
            || f.patch_min > f.patch_max
        {
            return Err(Error::Config("flow settings are inconsistent".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    /// Applies `dotted.path=value`. The path must already exist; the value is
    /// parsed as JSON, falling back to a plain string.
    pub fn with_override(&self, assignment: &str) -> Result<Self> {
        let (path, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
        let mut root = serde_json::to_value(self).expect("config serialises");
        let mut slot = &mut root;
        for key in path.split('.') {
            slot = slot
                .as_object_mut()
                .and_then(|o| o.get_mut(key))
                .ok_or_else(|| Error::Config(format!("unknown config key {path:?}")))?;
        }
        *slot = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
        let c: Self = serde_json::from_value(root).map_err(|e| Error::Config(format!("{path}: {e}")))?;
        c.validate()?;
        Ok(c)
    }

    pub fn with_overrides<S: AsRef<str>>(&self, assignments: &[S]) -> Result<Self> {
        assignments
            .iter()
            .try_fold(self.clone(), |c, a| c.with_override(a.as_ref()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        for c in [ExperimentConfig::toy(), ExperimentConfig::dense()] {
            c.validate().unwrap();
            assert_eq!(ExperimentConfig::from_json(&c.to_json()).unwrap(), c);
        }
    }

    #[test]
    fn overrides_follow_dotted_paths() {
        let c = ExperimentConfig::toy();
        let d = c
            .with_overrides(&["seed=11", "loss.beta3=0.5", "dataset.kind=dense", "name=x"])
            .unwrap();
        assert_eq!(d.seed, 11);
        assert_eq!(d.loss.beta3, 0.5);
        assert_eq!(d.dataset.kind, DatasetKind::Dense);
        assert_eq!(d.name, "x");
        assert!(matches!(c.with_override("loss.beta9=1"), Err(Error::Config(_))));
        assert!(matches!(c.with_override("seed"), Err(Error::Config(_))));
        assert!(matches!(c.with_override("seed=minus"), Err(Error::Config(_))));
        assert!(matches!(c.with_override("mixing_b=2"), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_fields_rejected() {
        let mut v = serde_json::to_value(ExperimentConfig::toy()).unwrap();
        v["extra"] = Value::Bool(true);
        assert!(ExperimentConfig::from_json(&v.to_string()).is_err());
    }
}
