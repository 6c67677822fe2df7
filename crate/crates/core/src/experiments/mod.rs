//! Orchestration of training, evaluation, ablations and sweeps.

pub mod config;
pub mod evaluate;
pub mod run;
pub mod train;

pub use config::{
    DatasetKind, DatasetSettings, EvalSettings, ExperimentConfig, FlowLossKind, FlowSettings, ModelSettings, Schedule,
};
pub use evaluate::{
    ablate_components, ablation_table, evaluate_open_set, evaluate_toy, evaluate_world, flow_sample_confidence,
    scored_images, toy_score_grid, AblationRow, AblationTable, OpenSetReport, ToyEvaluation, COMPONENTS,
};
pub use run::{
    ablate_dataset, ablate_run, dataset_name, evaluate_run, generate_data, heatmap_run, load_model, run_training,
    sha256_hex, sweep_mixing, train_hybrid, train_joint_with_flow, verify_theory, RunReport, SweepRow, MANIFEST,
};
pub use train::{train_system, CurvePoint, Dataset, TrainedSystem};
