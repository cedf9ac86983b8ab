//! Experiment plumbing: synthetic data, training, corruption evaluation and
//! ablation grids.

pub mod ablate;
pub mod config;
pub mod data;
pub mod eval;
pub mod train;

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::corruption::CorruptionError;
use crate::geometry::GeometryError;
use crate::loss::LossError;
use crate::model::ModelError;
use crate::sampling::SamplingError;

pub use ablate::{ablate, write_table_csv, AblationGrid, AblationRow, AblationTable, GridPoint};
pub use config::{EvalSettings, Optimizer, RunConfig, TrainConfig};
pub use data::{gen_dataset, load_dataset, save_dataset, Dataset, ShapeKind, SyntheticDatasetSpec};
pub use eval::{
    aggregate, evaluate, evaluate_checkpoint, predict_all, write_curves_csv, Condition, EvalReport, KindReport,
    ModelPredictor, PredictionLog, PredictionRecord, Predictor,
};
pub use train::{train, train_with_progress, write_history_csv, EpochStats, TrainOutcome};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("data: {0}")]
    Data(String),
    #[error("training diverged in epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Corruption(#[from] CorruptionError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}
