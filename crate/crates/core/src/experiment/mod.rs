//! Experiment orchestration: configuration, repeated seeded runs per
//! strategy persisted under `<output_dir>/<name>/<label>/run_NNNN/`, and
//! evaluation of the finished runs into reports.

mod backend;
mod config;
mod evaluate;
mod run;

pub use backend::{anchor_latents, Models};
pub use config::{BackendConfig, EvaluationConfig, ExperimentConfig, StrategyEntry, TargetSpec};
pub use evaluate::{
    evaluate_experiment, evaluate_experiment_with, experiment_status, load_experiment_config,
    ExperimentEvaluation, StrategyStatus, MIN_SAMPLES,
};
pub use run::{
    config_hash, run_dir, run_experiment, run_seed, RunManifest, RunRecord, RunStatus, RunSummary,
    CONFIG_FILE, IMAGE_FILE, LATENT_FILE, MANIFEST_FILE, REPORTS_DIR, TRACE_FILE,
};
