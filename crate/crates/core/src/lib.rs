//! Desk-scale reproduction of hybrid anomaly scoring for dense open-set
//! recognition: classifier + dataset-posterior head, compound training loss,
//! coupling-flow negatives, dense metrics and an ensemble-error analysis.

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod experiments;
pub mod flow;
pub mod heatmap;
pub mod losses;
pub mod maps;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod rng;
pub mod theory;

pub use error::{Error, Result};
pub use maps::{Label, LabelMap, ScoreMap};
