//! Benchmark systems, evaluation metrics, experiment configuration, file
//! formats and replicate studies.

pub mod config;
pub mod files;
pub mod metrics;
pub mod pipeline;
pub mod study;
pub mod systems;

pub use config::{Estimator, ExperimentConfig, SystemKind};
pub use metrics::{
    precision_recall, roc_auroc, trajectory_mse, Mse, NetworkScore, RocCurve, MSE_CAP,
};
pub use pipeline::{evaluate_dir, fit_dir, simulate_to_dir, Evaluation};
pub use study::{fit_sequence, mm_bias_study, run_replicate, run_replicates, Settings};
pub use systems::{simulate_dataset, simulate_test_set, GroundTruth, Simulation, System};
