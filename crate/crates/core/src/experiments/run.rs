//! Run directories: every operation writes its artifacts under one directory
//! together with a manifest of SHA-256 hashes.

use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use super::config::{DatasetKind, ExperimentConfig};
use super::evaluate::{
    ablate_components, component_map, evaluate_toy, evaluate_world, flow_sample_confidence, score_scene, scored_images,
    toy_score_grid, AblationTable, COMPONENTS,
};
use super::train::{curve_csv, train_system, Dataset, TrainedSystem};
use crate::checkpoint::Checkpoint;
use crate::data::{write_dense_world, write_scored_images, write_toy2d, DenseToyScene};
use crate::error::{Error, Result};
use crate::heatmap::{emit_heatmap, Grid};
use crate::maps::Label;
use crate::metrics::report::fmt_f64;
use crate::metrics::{metrics_csv, MetricRow};
use crate::model::{DenseScores, HybridModel};
use crate::numerics::Tensor;
use crate::rng::{stream_rng, Stream};
use crate::theory::{theory_sweep, SufficiencyReport, TheorySweep, IDENTITY_TOLERANCE};

pub const MANIFEST: &str = "manifest.json";

#[derive(Serialize)]
struct ManifestEntry {
    path: String,
    bytes: u64,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    format: &'a str,
    version: u32,
    operation: &'a str,
    artifacts: Vec<ManifestEntry>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Everything an operation wrote, relative paths resolved against `dir`.
#[derive(Clone, Debug, Default)]
pub struct RunReport {
    pub dir: PathBuf,
    pub metrics: Vec<MetricRow>,
    pub metrics_csv: Option<PathBuf>,
    pub theory_csv: Option<PathBuf>,
    pub heatmaps: Vec<PathBuf>,
    pub checkpoints: Vec<PathBuf>,
    pub config_echo: Option<PathBuf>,
    pub artifacts: Vec<PathBuf>,
    pub manifest: PathBuf,
}

impl RunReport {
    pub fn metric(&self, metric: &str, split: &str) -> Option<f64> {
        self.metrics
            .iter()
            .find(|r| r.metric == metric && r.split == split)
            .map(|r| r.value)
    }
}

struct RunDir {
    report: RunReport,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self {
            report: RunReport {
                dir: dir.to_path_buf(),
                ..RunReport::default()
            },
        })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.report.dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<PathBuf> {
        let p = self.path(name);
        if let Some(parent) = p.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(&p, bytes)?;
        self.report.artifacts.push(p.clone());
        Ok(p)
    }

    fn config(&mut self, config: &ExperimentConfig) -> Result<()> {
        self.report.config_echo = Some(self.write("config.json", config.to_json())?);
        Ok(())
    }

    fn metrics(&mut self, name: &str, rows: Vec<MetricRow>) -> Result<()> {
        let p = self.write(name, metrics_csv(&rows)?)?;
        self.report.metrics_csv.get_or_insert(p);
        self.report.metrics.extend(rows);
        Ok(())
    }

    fn theory(&mut self, sweep: &TheorySweep) -> Result<()> {
        self.report.theory_csv = Some(self.write("theory.csv", sweep.csv())?);
        Ok(())
    }

    fn checkpoint(&mut self, name: &str, ckpt: &Checkpoint) -> Result<()> {
        let p = self.write(name, ckpt.to_bytes())?;
        self.report.checkpoints.push(p);
        Ok(())
    }

    fn heatmaps(&mut self, prefix: &str, scores: &DenseScores) -> Result<()> {
        for name in COMPONENTS {
            let map = component_map(scores, name);
            let (pgm, csv) = emit_heatmap(Grid::from_map(map)?, &self.path(&format!("{prefix}_{name}.pgm")))?;
            self.report.artifacts.push(pgm.clone());
            self.report.artifacts.push(csv);
            self.report.heatmaps.push(pgm);
        }
        Ok(())
    }

    fn adopt(&mut self, files: Vec<PathBuf>) {
        self.report.artifacts.extend(files);
    }

    fn finish(mut self, operation: &str) -> Result<RunReport> {
        let mut entries = Vec::new();
        let mut files = self.report.artifacts.clone();
        files.sort();
        files.dedup();
        for f in &files {
            let bytes = std::fs::read(f)?;
            let rel = f.strip_prefix(&self.report.dir).unwrap_or(f);
            entries.push(ManifestEntry {
                path: rel.to_string_lossy().replace('\\', "/"),
                bytes: bytes.len() as u64,
                sha256: sha256_hex(&bytes),
            });
        }
        let m = Manifest {
            format: "densehybrid-run",
            version: 1,
            operation,
            artifacts: entries,
        };
        let text = serde_json::to_string_pretty(&m).expect("manifest serialises") + "\n";
        let p = self.path(MANIFEST);
        std::fs::write(&p, text)?;
        self.report.manifest = p;
        Ok(self.report)
    }
}

fn single_report_sweep(r: SufficiencyReport) -> TheorySweep {
    TheorySweep {
        max_residual: r.residual,
        violations: usize::from(!r.implication_ok),
        condition_hits: usize::from(r.condition_holds),
        reports: vec![r],
    }
}

fn samples_csv(snapshots: &[(usize, Tensor)]) -> String {
    let dim = snapshots.first().map_or(0, |(_, t)| t.cols());
    let mut out = String::from("step,index");
    for d in 0..dim {
        out.push_str(&format!(",x{d}"));
    }
    out.push('\n');
    for (step, t) in snapshots {
        for r in 0..t.rows() {
            let cols: Vec<String> = t.row(r).iter().map(|&v| fmt_f64(v)).collect();
            out.push_str(&format!("{step},{r},{}\n", cols.join(",")));
        }
    }
    out
}

fn dense_pixels(scenes: &[DenseToyScene]) -> Result<(Tensor, Vec<bool>)> {
    let parts: Vec<&Tensor> = scenes.iter().map(|s| &s.features).collect();
    let x = Tensor::concat_rows(&parts)?;
    let out = scenes
        .iter()
        .flat_map(|s| {
            s.ground_truth()
                .labels()
                .iter()
                .map(|l| *l == Label::Outlier)
                .collect::<Vec<_>>()
        })
        .collect();
    Ok((x, out))
}

/// Detection ablation of `model` on the test split of `data`.
pub fn ablate_dataset(model: &HybridModel, data: &Dataset) -> Result<AblationTable> {
    match data {
        Dataset::Toy2d(d) => Ok(evaluate_toy(model, d)?.ablation),
        Dataset::Dense(w) => {
            let (x, out) = dense_pixels(&w.test)?;
            ablate_components(model, &x, &out)
        }
    }
}

/// Metric rows of a trained model on its dataset.
pub fn evaluation_rows(
    config: &ExperimentConfig,
    model: &HybridModel,
    flow: Option<&crate::flow::CouplingFlow>,
    data: &Dataset,
) -> Result<(Vec<MetricRow>, Option<SufficiencyReport>)> {
    let seed = config.seed;
    let (mut rows, suff) = match data {
        Dataset::Toy2d(d) => {
            let e = evaluate_toy(model, d)?;
            let mut rows = vec![MetricRow::new("closed_accuracy", "test", e.closed_accuracy, None, seed)];
            rows.extend(e.ablation.metric_rows("test", seed));
            (rows, e.ablation.sufficiency)
        }
        Dataset::Dense(w) => {
            let r = evaluate_world(model, w, config.evaluation.target_tpr)?;
            (r.metric_rows(seed), r.ablation.sufficiency)
        }
    };
    if let Some(f) = flow {
        let c = flow_sample_confidence(
            model,
            f,
            config.latent_temperature,
            config.evaluation.flow_probe_samples,
            seed,
        )?;
        rows.push(MetricRow::new("flow_sample_confidence", "flow", c, None, seed));
    }
    Ok((rows, suff))
}

fn write_heatmaps(dir: &mut RunDir, config: &ExperimentConfig, model: &HybridModel, data: &Dataset) -> Result<()> {
    match data {
        Dataset::Toy2d(_) => dir.heatmaps("heatmap", &toy_score_grid(model, config)?),
        Dataset::Dense(w) => {
            let scene = w
                .test
                .first()
                .ok_or_else(|| Error::Config("dense world has no test scenes".into()))?;
            dir.heatmaps("heatmap", &score_scene(model, scene)?.scores)
        }
    }
}

/// Trains per `config`, evaluates, and writes the full run under `out`.
pub fn run_training(config: &ExperimentConfig, out: &Path) -> Result<(RunReport, TrainedSystem)> {
    config.validate()?;
    let data = Dataset::generate(config)?;
    let system = train_system(config, &data)?;
    let mut dir = RunDir::create(out)?;
    dir.config(config)?;
    dir.write("loss_curve.csv", curve_csv(&system.curve))?;
    dir.checkpoint("model.ckpt", &system.model.to_checkpoint())?;
    if let Some(f) = &system.flow {
        dir.checkpoint("flow.ckpt", &f.to_checkpoint())?;
        dir.write("flow_samples.csv", samples_csv(&system.flow_snapshots))?;
    }
    let (rows, suff) = evaluation_rows(config, &system.model, system.flow.as_ref(), &data)?;
    dir.metrics("metrics.csv", rows)?;
    if let Some(r) = suff {
        dir.theory(&single_report_sweep(r))?;
    }
    write_heatmaps(&mut dir, config, &system.model, &data)?;
    Ok((dir.finish("train")?, system))
}

/// Hybrid training with whatever negatives `config` names.
pub fn train_hybrid(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    Ok(run_training(config, out)?.0)
}

/// Joint model/flow training; the config must draw some negatives from the flow.
pub fn train_joint_with_flow(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    if !config.negative_source()?.uses_flow() {
        return Err(Error::Config("joint flow training needs mixing_b < 1".into()));
    }
    train_hybrid(config, out)
}

pub fn load_model(path: &Path) -> Result<HybridModel> {
    HybridModel::from_checkpoint(Checkpoint::load(path)?)
}

/// Component ablation of a saved model on the config's dataset.
pub fn ablate_run(config: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<(RunReport, AblationTable)> {
    config.validate()?;
    let model = load_model(model_path)?;
    let data = Dataset::generate(config)?;
    let table = ablate_dataset(&model, &data)?;
    let mut dir = RunDir::create(out)?;
    dir.config(config)?;
    dir.metrics("ablation.csv", table.metric_rows("test", config.seed))?;
    if let Some(r) = table.sufficiency {
        dir.theory(&single_report_sweep(r))?;
    }
    Ok((dir.finish("ablate")?, table))
}

/// Evaluation of a saved model (open-set protocol on dense data).
pub fn evaluate_run(config: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<RunReport> {
    config.validate()?;
    let model = load_model(model_path)?;
    let data = Dataset::generate(config)?;
    let (rows, suff) = evaluation_rows(config, &model, None, &data)?;
    let mut dir = RunDir::create(out)?;
    dir.config(config)?;
    dir.metrics("metrics.csv", rows)?;
    if let Some(r) = suff {
        dir.theory(&single_report_sweep(r))?;
    }
    if let Dataset::Dense(w) = &data {
        let images = scored_images(&model, &w.test)?;
        dir.adopt(write_scored_images(w.config.classes, &images, &out.join("maps"))?);
    }
    dir.finish("eval")
}

pub fn heatmap_run(config: &ExperimentConfig, model_path: &Path, out: &Path) -> Result<RunReport> {
    config.validate()?;
    let model = load_model(model_path)?;
    let data = Dataset::generate(config)?;
    let mut dir = RunDir::create(out)?;
    write_heatmaps(&mut dir, config, &model, &data)?;
    dir.finish("heatmap")
}

pub fn generate_data(config: &ExperimentConfig, out: &Path) -> Result<RunReport> {
    config.validate()?;
    let mut dir = RunDir::create(out)?;
    dir.config(config)?;
    let files = match Dataset::generate(config)? {
        Dataset::Toy2d(d) => write_toy2d(&d, &out.join("data"))?,
        Dataset::Dense(w) => write_dense_world(&w, &out.join("data"))?,
    };
    dir.adopt(files);
    dir.finish("gen-data")
}

/// Monte Carlo check of the ensemble identity and sufficiency condition.
pub fn verify_theory(draws: usize, size: usize, seed: u64, out: &Path) -> Result<(RunReport, TheorySweep)> {
    let sweep = theory_sweep(draws, size, &mut stream_rng(seed, Stream::Theory))?;
    let mut dir = RunDir::create(out)?;
    dir.theory(&sweep)?;
    let rows = vec![
        MetricRow::new(
            "max_residual",
            "theory",
            sweep.max_residual,
            Some(IDENTITY_TOLERANCE),
            seed,
        ),
        MetricRow::new("violations", "theory", sweep.violations as f64, None, seed),
        MetricRow::new("condition_hits", "theory", sweep.condition_hits as f64, None, seed),
    ];
    dir.metrics("metrics.csv", rows)?;
    Ok((dir.finish("verify-theory")?, sweep))
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub b: f64,
    pub table: AblationTable,
    pub run: RunReport,
}

pub const SWEEP_HEADER: &str = "b,ap_discriminative,auroc_discriminative,fpr95_discriminative,\
ap_generative,auroc_generative,fpr95_generative,ap_hybrid,auroc_hybrid,fpr95_hybrid";

/// One full train/eval cycle per mixing probability `b`.
pub fn sweep_mixing(config: &ExperimentConfig, bs: &[f64], out: &Path) -> Result<(RunReport, Vec<SweepRow>)> {
    if bs.is_empty() {
        return Err(Error::Config("empty b sweep".into()));
    }
    let mut rows = Vec::new();
    let mut dir = RunDir::create(out)?;
    dir.config(config)?;
    let mut csv = String::from(SWEEP_HEADER);
    csv.push('\n');
    for &b in bs {
        let mut c = config.clone();
        c.mixing_b = b;
        c.validate()?;
        let sub = out.join(format!("b_{}", fmt_f64(b)));
        let (run, system) = run_training(&c, &sub)?;
        let table = ablate_dataset(&system.model, &Dataset::generate(&c)?)?;
        let mut cells = vec![fmt_f64(b)];
        for name in COMPONENTS {
            let s = table.get(name).expect("component row");
            cells.extend([fmt_f64(s.ap), fmt_f64(s.auroc), fmt_f64(s.fpr95)]);
        }
        csv.push_str(&cells.join(","));
        csv.push('\n');
        dir.adopt(run.artifacts.clone());
        dir.adopt(vec![run.manifest.clone()]);
        rows.push(SweepRow { b, table, run });
    }
    dir.write("sweep.csv", csv)?;
    Ok((dir.finish("sweep-b")?, rows))
}

/// The kind string used in logs.
pub fn dataset_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Toy2d => "toy2d",
        DatasetKind::Dense => "dense",
    }
}
