use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::Models;
use super::config::{BackendConfig, ExperimentConfig, StrategyEntry, TargetSpec};
use crate::error::{Error, Result};
use crate::image_tensor::ImageTensor;
use crate::latent::{InitStrategy, LatentCode, LatentInit, LatentShape};
use crate::objective::{CutoutPolicy, FeatureVector};
use crate::optim::{FitnessTrace, StrategyKind};
use crate::seed;
use crate::toy::ToyConfig;

pub const CONFIG_FILE: &str = "experiment.toml";
pub const TRACE_FILE: &str = "trace.csv";
pub const LATENT_FILE: &str = "latent.txt";
pub const IMAGE_FILE: &str = "final.png";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORTS_DIR: &str = "reports";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    Failed,
}

/// Written last into each run directory; its presence with status
/// `complete` marks the run as done.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub strategy: String,
    pub run_index: usize,
    pub seed: u64,
    pub status: RunStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub evaluations: usize,
    pub final_fitness: Option<f64>,
    pub truncated: bool,
    pub wall_time_secs: f64,
    /// Hash of every setting that influences this run's artifacts.
    pub config_hash: String,
    pub code_version: String,
    pub generator: String,
    pub encoder: String,
    pub strategy_config: StrategyKind,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
    }

    pub fn is_complete(&self) -> bool {
        self.status == RunStatus::Complete
    }
}

/// One finished run loaded back from disk.
#[derive(Debug, Clone)]
pub struct RunRecord {
    pub manifest: RunManifest,
    pub trace: FitnessTrace,
    pub final_latent: LatentCode,
    pub final_image: ImageTensor,
}

impl RunRecord {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::load(&dir.join(MANIFEST_FILE))?;
        if !manifest.is_complete() {
            return Err(Error::Config(format!(
                "{} is not a completed run",
                dir.display()
            )));
        }
        Ok(RunRecord {
            manifest,
            trace: FitnessTrace::load(&dir.join(TRACE_FILE))?,
            final_latent: LatentCode::read_dump(&dir.join(LATENT_FILE))?,
            final_image: ImageTensor::load_png(&dir.join(IMAGE_FILE))?,
        })
    }

    pub fn final_fitness(&self) -> f64 {
        self.manifest.final_fitness.unwrap_or(f64::NAN)
    }
}

pub fn run_seed(master_seed: u64, label: &str, index: usize) -> u64 {
    seed::derive_seed(master_seed, label, index as u64)
}

pub fn run_dir(experiment_dir: &Path, label: &str, index: usize) -> PathBuf {
    experiment_dir.join(label).join(format!("run_{index:04}"))
}

#[derive(Serialize)]
struct RunIdentity<'a> {
    text: &'a str,
    target: &'a TargetSpec,
    backend: &'a BackendConfig,
    init: InitStrategy,
    toy: Option<&'a ToyConfig>,
    shape: LatentShape,
    cutouts: CutoutPolicy,
    label: &'a str,
    strategy: &'a StrategyKind,
    master_seed: u64,
}

/// Hex SHA-256 over the settings that determine one strategy's runs.
/// Settings of other strategies, the run count, and evaluation options are
/// excluded so they can change without invalidating finished runs.
pub fn config_hash(cfg: &ExperimentConfig, entry: &StrategyEntry) -> Result<String> {
    let identity = RunIdentity {
        text: &cfg.text,
        target: &cfg.target,
        backend: &cfg.backend,
        init: cfg.init_strategy(),
        toy: matches!(cfg.backend, BackendConfig::Toy).then_some(&cfg.toy),
        shape: cfg.latent_shape()?,
        cutouts: cfg.cutout_policy(),
        label: entry.label(),
        strategy: &entry.kind,
        master_seed: cfg.master_seed,
    };
    let digest = Sha256::digest(serde_json::to_vec(&identity)?);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub experiment_dir: PathBuf,
    pub executed: usize,
    pub skipped: usize,
    /// `(label, index, message)` of runs that failed in this invocation.
    pub failed: Vec<(String, usize, String)>,
}

struct Job<'a> {
    entry: &'a StrategyEntry,
    hash: String,
    index: usize,
    dir: PathBuf,
}

/// Executes every missing run of every strategy and returns what happened.
///
/// Completed runs with a matching config hash are skipped. Finding a
/// completed run with a different hash is a configuration error: the
/// directory belongs to another experiment.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunSummary> {
    cfg.validate()?;
    let models = Models::open(cfg)?;
    let target = models.target(cfg)?;
    let exp_dir = cfg.experiment_dir();
    fs::create_dir_all(&exp_dir).map_err(|e| Error::io(&exp_dir, e))?;
    write_atomic(&exp_dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;

    let probe = models.fitness_function(target.clone(), cfg.cutout_policy())?;
    let mut jobs = Vec::new();
    let mut summary = RunSummary {
        experiment_dir: exp_dir.clone(),
        ..RunSummary::default()
    };
    for entry in &cfg.strategies {
        if entry.kind.needs_gradient() && !probe.supports_gradient() {
            return Err(Error::Capability(format!(
                "strategy {} needs gradients, which the backend cannot provide",
                entry.label()
            )));
        }
        let hash = config_hash(cfg, entry)?;
        for index in 0..cfg.runs_per_strategy {
            let dir = run_dir(&exp_dir, entry.label(), index);
            let manifest_path = dir.join(MANIFEST_FILE);
            if manifest_path.exists() {
                let manifest = RunManifest::load(&manifest_path)?;
                if manifest.is_complete() {
                    if manifest.config_hash != hash {
                        return Err(Error::Config(format!(
                            "{} was produced by a different configuration; use another output_dir or name",
                            dir.display()
                        )));
                    }
                    summary.skipped += 1;
                    continue;
                }
            }
            jobs.push(Job {
                entry,
                hash: hash.clone(),
                index,
                dir,
            });
        }
    }
    drop(probe);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let outcomes: Vec<Result<Option<String>>> = pool.install(|| {
        jobs.par_iter()
            .map(|job| execute(cfg, &models, &target, job))
            .collect()
    });
    for (job, outcome) in jobs.iter().zip(outcomes) {
        match outcome? {
            None => summary.executed += 1,
            Some(message) => {
                summary
                    .failed
                    .push((job.entry.label().to_string(), job.index, message))
            }
        }
    }
    Ok(summary)
}

/// Runs one job. Search failures are recorded in a failed manifest and
/// returned as `Ok(Some(message))`; only persistence failures are errors.
fn execute(
    cfg: &ExperimentConfig,
    models: &Models,
    target: &FeatureVector,
    job: &Job,
) -> Result<Option<String>> {
    let label = job.entry.label();
    let seed = run_seed(cfg.master_seed, label, job.index);
    fs::create_dir_all(&job.dir).map_err(|e| Error::io(&job.dir, e))?;
    let manifest_path = job.dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        fs::remove_file(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    }
    let mut manifest = RunManifest {
        strategy: label.to_string(),
        run_index: job.index,
        seed,
        status: RunStatus::Failed,
        error: None,
        evaluations: 0,
        final_fitness: None,
        truncated: false,
        wall_time_secs: 0.0,
        config_hash: job.hash.clone(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        generator: models.generator().identity(),
        encoder: models.encoder().identity(),
        strategy_config: job.entry.kind,
    };

    let start = Instant::now();
    let searched = (|| {
        let init = LatentCode::new(
            models.shape(),
            LatentInit::new(cfg.init_strategy(), seed::derive_seed(seed, "init", 0)),
        )?;
        let cutouts = CutoutPolicy {
            seed_stream: seed::derive_seed(seed, "cutout-stream", 0),
            ..cfg.cutout_policy()
        };
        let f = models.fitness_function(target.clone(), cutouts)?;
        let outcome = job.entry.kind.run(f.as_ref(), &init, seed)?;
        let image = models.generator().generate(&outcome.best_latent)?;
        Ok::<_, Error>((outcome, image))
    })();
    manifest.wall_time_secs = start.elapsed().as_secs_f64();

    let failure = match searched {
        Ok((outcome, image)) => {
            outcome.trace.save(&job.dir.join(TRACE_FILE))?;
            outcome.best_latent.write_dump(&job.dir.join(LATENT_FILE))?;
            image.save_png(&job.dir.join(IMAGE_FILE))?;
            manifest.status = RunStatus::Complete;
            manifest.evaluations = outcome.evaluations();
            manifest.final_fitness = Some(outcome.best_fitness);
            manifest.truncated = outcome.truncated;
            None
        }
        Err(e) => {
            let message = e.to_string();
            log::warn!("{label} run {} failed: {message}", job.index);
            manifest.error = Some(message.clone());
            Some(message)
        }
    };
    write_atomic(&manifest_path, &serde_json::to_vec_pretty(&manifest)?)?;
    Ok(failure)
}

pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}
