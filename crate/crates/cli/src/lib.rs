//! `densehybrid-lab`: a thin command-line shell over `densehybrid::experiments`.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
//! A one-line JSON summary goes to stdout; diagnostics go to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};
use densehybrid::experiments::{self, ExperimentConfig, RunReport};
use densehybrid::Error;
use serde_json::json;

pub const EXIT_OK: i32 = 0;
pub const EXIT_RUNTIME: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

pub const THREADS_ENV: &str = "DENSEHYBRID_LAB_THREADS";

#[derive(Debug, Parser)]
#[command(name = "densehybrid-lab", about = "Hybrid dense anomaly detection lab", version)]
struct Cli {
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON experiment config; defaults to the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in config used when --config is absent.
    #[arg(long, default_value = "toy2d", value_parser = ["toy2d", "dense"])]
    preset: String,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's output_dir.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Config override `dotted.key=value` (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Debug, Args)]
struct WithModel {
    #[command(flatten)]
    common: Common,
    /// Model checkpoint; defaults to <out>/model.ckpt.
    #[arg(long)]
    model: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Verb {
    /// Write the configured dataset.
    GenData(Common),
    /// Train the hybrid detector (negatives as configured by mixing_b).
    Train(Common),
    /// Train jointly with the flow; needs mixing_b < 1.
    TrainFlow(Common),
    /// Re-evaluate a saved model.
    Eval(WithModel),
    /// Component ablation and theory report for a saved model.
    Ablate(WithModel),
    /// One training run per mixing probability.
    SweepB {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        b: Vec<f64>,
    },
    /// Monte Carlo check of the ensemble identity and sufficiency condition.
    VerifyTheory {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        /// Samples per draw.
        #[arg(long, default_value_t = 100)]
        size: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "runs/theory")]
        out: PathBuf,
    },
    /// Score heatmaps for a saved model.
    Heatmap(WithModel),
}

impl Common {
    fn resolve(&self) -> densehybrid::Result<(ExperimentConfig, PathBuf)> {
        let base = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None if self.preset == "dense" => ExperimentConfig::dense(),
            None => ExperimentConfig::toy(),
        };
        let mut c = base.with_overrides(&self.overrides)?;
        if let Some(seed) = self.seed {
            c = c.with_override(&format!("seed={seed}"))?;
        }
        let out = self.out.clone().unwrap_or_else(|| PathBuf::from(&c.output_dir));
        Ok((c, out))
    }
}

impl WithModel {
    fn resolve(&self) -> densehybrid::Result<(ExperimentConfig, PathBuf, PathBuf)> {
        let (c, out) = self.common.resolve()?;
        let model = self.model.clone().unwrap_or_else(|| out.join("model.ckpt"));
        Ok((c, out, model))
    }
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => EXIT_CONFIG,
        _ => EXIT_RUNTIME,
    }
}

/// Parses a thread-count value; `None` when unset.
pub fn parse_threads(value: Option<&str>) -> Result<Option<usize>, String> {
    match value {
        None => Ok(None),
        Some(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(format!("{THREADS_ENV}={v:?} is not a positive integer")),
        },
    }
}

fn summary(verb: &str, report: &RunReport, extra: serde_json::Value) -> String {
    let metrics: Vec<_> = report
        .metrics
        .iter()
        .map(|r| json!({"metric": r.metric, "split": r.split, "value": r.value}))
        .collect();
    let mut v = json!({
        "verb": verb,
        "dir": report.dir,
        "manifest": report.manifest,
        "artifacts": report.artifacts.len(),
        "metrics": metrics,
    });
    if let (Some(obj), serde_json::Value::Object(more)) = (v.as_object_mut(), extra) {
        obj.extend(more);
    }
    v.to_string()
}

fn log_start(err: &mut dyn Write, verb: &str, c: &ExperimentConfig, out: &Path) {
    let _ = writeln!(
        err,
        "{verb}: {} ({}), seed {}, b {} -> {}",
        c.name,
        experiments::dataset_name(c.dataset.kind),
        c.seed,
        c.mixing_b,
        out.display()
    );
}

fn dispatch(verb: Verb, err: &mut dyn Write) -> densehybrid::Result<String> {
    Ok(match verb {
        Verb::GenData(common) => {
            let (c, out) = common.resolve()?;
            log_start(err, "gen-data", &c, &out);
            summary("gen-data", &experiments::generate_data(&c, &out)?, json!({}))
        }
        Verb::Train(common) => {
            let (c, out) = common.resolve()?;
            log_start(err, "train", &c, &out);
            summary("train", &experiments::train_hybrid(&c, &out)?, json!({}))
        }
        Verb::TrainFlow(common) => {
            let (c, out) = common.resolve()?;
            log_start(err, "train-flow", &c, &out);
            summary("train-flow", &experiments::train_joint_with_flow(&c, &out)?, json!({}))
        }
        Verb::Eval(args) => {
            let (c, out, model) = args.resolve()?;
            let out = out.join("eval");
            log_start(err, "eval", &c, &out);
            summary("eval", &experiments::evaluate_run(&c, &model, &out)?, json!({}))
        }
        Verb::Ablate(args) => {
            let (c, out, model) = args.resolve()?;
            let out = out.join("ablate");
            log_start(err, "ablate", &c, &out);
            let (report, table) = experiments::ablate_run(&c, &model, &out)?;
            let s = table.sufficiency;
            let extra = json!({
                "condition_lhs": s.map(|s| s.lhs),
                "improved": s.map(|s| s.improved),
            });
            summary("ablate", &report, extra)
        }
        Verb::SweepB { common, b } => {
            let (c, out) = common.resolve()?;
            log_start(err, "sweep-b", &c, &out);
            let (report, rows) = experiments::sweep_mixing(&c, &b, &out)?;
            let per_b: Vec<_> = rows
                .iter()
                .map(|r| json!({"b": r.b, "auroc_hybrid": r.table.auroc("hybrid")}))
                .collect();
            summary("sweep-b", &report, json!({"sweep": per_b}))
        }
        Verb::VerifyTheory { n, size, seed, out } => {
            let _ = writeln!(
                err,
                "verify-theory: {n} draws of {size}, seed {seed} -> {}",
                out.display()
            );
            let (report, sweep) = experiments::verify_theory(n, size, seed, &out)?;
            if !sweep.all_pass() {
                let _ = writeln!(
                    err,
                    "verify-theory: FAILED ({} violations, max residual {:e})",
                    sweep.violations, sweep.max_residual
                );
            }
            summary("verify-theory", &report, json!({"all_pass": sweep.all_pass()}))
        }
        Verb::Heatmap(args) => {
            let (c, out, model) = args.resolve()?;
            let out = out.join("heatmap");
            log_start(err, "heatmap", &c, &out);
            summary("heatmap", &experiments::heatmap_run(&c, &model, &out)?, json!({}))
        }
    })
}

/// Runs one command line (`argv[0]` is the program name) and returns the exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(err, "{text}")
            } else {
                write!(out, "{text}")
            };
            if matches!(e.kind(), ErrorKind::InvalidSubcommand | ErrorKind::MissingSubcommand) {
                let _ = write!(err, "\n{}", Cli::command().render_help());
            }
            return code;
        }
    };
    match parse_threads(std::env::var(THREADS_ENV).ok().as_deref()) {
        Err(msg) => {
            let _ = writeln!(err, "error: {msg}");
            return EXIT_CONFIG;
        }
        // the global pool can be set once per process; later calls keep it
        Ok(Some(n)) => {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
        Ok(None) => {}
    }
    match dispatch(cli.verb, err) {
        Ok(line) => {
            let _ = writeln!(out, "{line}");
            EXIT_OK
        }
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}
