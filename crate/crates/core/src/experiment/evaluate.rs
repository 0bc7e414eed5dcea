use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use super::backend::Models;
use super::config::{EvaluationConfig, ExperimentConfig};
use super::run::{
    run_dir, write_atomic, RunManifest, RunRecord, CONFIG_FILE, MANIFEST_FILE, REPORTS_DIR,
};
use crate::error::{Error, Result};
use crate::evaluation::{
    best_performing, confidence_interval, evaluate_methods, fitness_curves, mean, save_montage,
    CurveTable, JaccardReport, TsneConfig,
};
use crate::objective::FeatureVector;

/// Methods with fewer completed runs than this cannot be evaluated.
pub const MIN_SAMPLES: usize = 5;

/// Completed and failed run counts of one strategy.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StrategyStatus {
    pub label: String,
    pub planned: usize,
    pub complete: usize,
    pub failed: usize,
    pub mean_final_fitness: Option<f64>,
    pub ci95: Option<f64>,
}

/// Reads the configuration stored by `run_experiment`.
pub fn load_experiment_config(dir: &Path) -> Result<ExperimentConfig> {
    ExperimentConfig::load(&dir.join(CONFIG_FILE))
}

/// Manifests of one strategy's run directories, by run index. Missing
/// directories are skipped.
fn manifests(dir: &Path, label: &str, runs: usize) -> Result<Vec<RunManifest>> {
    let mut out = Vec::new();
    for index in 0..runs {
        let path = run_dir(dir, label, index).join(MANIFEST_FILE);
        if path.exists() {
            out.push(RunManifest::load(&path)?);
        }
    }
    Ok(out)
}

pub fn experiment_status(dir: &Path) -> Result<Vec<StrategyStatus>> {
    let cfg = load_experiment_config(dir)?;
    cfg.strategies
        .iter()
        .map(|entry| {
            let label = entry.label();
            let found = manifests(dir, label, cfg.runs_per_strategy)?;
            let finals: Vec<f64> = found
                .iter()
                .filter(|m| m.is_complete())
                .filter_map(|m| m.final_fitness)
                .collect();
            let (mean_final_fitness, ci95) = match finals.len() {
                0 => (None, None),
                1 => (Some(finals[0]), None),
                _ => {
                    let (m, h) = confidence_interval(&finals)?;
                    (Some(m), Some(h))
                }
            };
            Ok(StrategyStatus {
                label: label.to_string(),
                planned: cfg.runs_per_strategy,
                complete: finals.len(),
                failed: found.iter().filter(|m| !m.is_complete()).count(),
                mean_final_fitness,
                ci95,
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ExperimentEvaluation {
    pub baseline: String,
    pub report: JaccardReport,
    pub curves: CurveTable,
    /// Samples pooled per method.
    pub samples: BTreeMap<String, usize>,
    pub failed_runs: BTreeMap<String, usize>,
    /// Final best fitness of every completed run, per method.
    pub final_fitness: BTreeMap<String, Vec<f64>>,
    pub reports_dir: PathBuf,
}

#[derive(Serialize)]
struct MethodSummary {
    samples: usize,
    completed_runs: usize,
    failed_runs: usize,
    final_fitness_mean: f64,
    final_fitness_ci95: Option<f64>,
    mean_occupied_cells: f64,
    jaccard_mean: Option<f64>,
    jaccard_ci95: Option<f64>,
}

#[derive(Serialize)]
struct Summary<'a> {
    experiment: &'a str,
    baseline: &'a str,
    grid_size: usize,
    repeats: usize,
    calibration_warnings: usize,
    methods: BTreeMap<&'a str, MethodSummary>,
}

/// Evaluates a finished experiment with its stored evaluation settings.
pub fn evaluate_experiment(dir: &Path, baseline: Option<&str>) -> Result<ExperimentEvaluation> {
    let cfg = load_experiment_config(dir)?;
    evaluate_experiment_with(dir, baseline, &cfg.evaluation)
}

/// Encodes each method's final images, compares the methods' t-SNE grid
/// occupancy against the baseline, builds fitness curves, and writes
/// `jaccard.csv`, `curves.csv`, `summary.json`, and one montage per method
/// under `reports/`.
///
/// The baseline is `baseline`, else the configured one, else the method with
/// the best mean final fitness. Failed runs are left out and counted.
pub fn evaluate_experiment_with(
    dir: &Path,
    baseline: Option<&str>,
    settings: &EvaluationConfig,
) -> Result<ExperimentEvaluation> {
    let cfg = load_experiment_config(dir)?;
    let models = Models::open(&cfg)?;
    let encoder = models.encoder();
    let encoder_id = encoder.identity();

    let mut records: BTreeMap<String, Vec<RunRecord>> = BTreeMap::new();
    let mut failed_runs = BTreeMap::new();
    for entry in &cfg.strategies {
        let label = entry.label();
        let found = manifests(dir, label, cfg.runs_per_strategy)?;
        failed_runs.insert(
            label.to_string(),
            found.iter().filter(|m| !m.is_complete()).count(),
        );
        let mut loaded = Vec::new();
        for m in found.iter().filter(|m| m.is_complete()) {
            if m.encoder != encoder_id {
                return Err(Error::Config(format!(
                    "{label} run {} was scored with encoder {:?}, but this experiment's encoder is {:?}",
                    m.run_index, m.encoder, encoder_id
                )));
            }
            loaded.push(RunRecord::load(&run_dir(dir, label, m.run_index))?);
        }
        if loaded.len() < MIN_SAMPLES {
            return Err(Error::Config(format!(
                "method {label} has {} completed runs; at least {MIN_SAMPLES} are needed to evaluate",
                loaded.len()
            )));
        }
        records.insert(label.to_string(), loaded);
    }

    let final_fitness: BTreeMap<String, Vec<f64>> = records
        .iter()
        .map(|(l, runs)| {
            (
                l.clone(),
                runs.iter().map(RunRecord::final_fitness).collect(),
            )
        })
        .collect();
    let baseline = match baseline
        .map(str::to_string)
        .or_else(|| settings.baseline.clone())
    {
        Some(b) => b,
        None => best_performing(&final_fitness)
            .ok_or_else(|| Error::Degenerate("no method has a final fitness".into()))?,
    };
    if !records.contains_key(&baseline) {
        return Err(Error::Config(format!(
            "baseline {baseline:?} is not one of the strategies {:?}",
            records.keys().collect::<Vec<_>>()
        )));
    }

    let side = cfg.cutout_policy().resize_to;
    let mut features: BTreeMap<String, Vec<FeatureVector>> = BTreeMap::new();
    let mut samples = BTreeMap::new();
    for (label, runs) in &records {
        let used = &runs[..runs.len().min(settings.samples_per_model)];
        let encoded = used
            .par_iter()
            .map(|r| {
                models.image_features(&r.final_image, side).map_err(|e| {
                    e.in_context(format!("encoding {label} run {}", r.manifest.run_index))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        samples.insert(label.clone(), encoded.len());
        features.insert(label.clone(), encoded);
    }

    let tsne = TsneConfig {
        perplexity: settings.perplexity,
        iterations: settings.tsne_iterations,
        seed: settings.tsne_seed,
        ..TsneConfig::default()
    };
    let report = evaluate_methods(
        &features,
        &baseline,
        &tsne,
        settings.grid_size,
        settings.repeats,
    )?;
    for w in &report.calibration_warnings {
        log::warn!("{w:?}");
    }
    let traces: BTreeMap<String, Vec<Vec<f64>>> = records
        .iter()
        .map(|(l, runs)| {
            (
                l.clone(),
                runs.iter().map(|r| r.trace.best_series()).collect(),
            )
        })
        .collect();
    let curves = fitness_curves(&traces)?;

    let reports_dir = dir.join(REPORTS_DIR);
    fs::create_dir_all(&reports_dir).map_err(|e| Error::io(&reports_dir, e))?;
    let mut buf = Vec::new();
    report.write_csv(&mut buf)?;
    write_atomic(&reports_dir.join("jaccard.csv"), &buf)?;
    let mut buf = Vec::new();
    curves.write_csv(&mut buf)?;
    write_atomic(&reports_dir.join("curves.csv"), &buf)?;

    // montages use the first repeat's grid
    let first = &report.outcomes[0];
    let mut offset = 0;
    for (label, runs) in &records {
        let n = samples[label];
        let tiles: Vec<_> = (0..n)
            .map(|i| (first.grid.point_cells[offset + i], &runs[i].final_image))
            .collect();
        offset += n;
        save_montage(
            &reports_dir.join(format!("montage_{label}.png")),
            report.grid_size,
            settings.thumbnail,
            &tiles,
        )?;
    }

    let mut methods = BTreeMap::new();
    for (label, finals) in &final_fitness {
        let sizes = report.occupancy_sizes(label);
        let jaccard = report.method(label);
        methods.insert(
            label.as_str(),
            MethodSummary {
                samples: samples[label],
                completed_runs: finals.len(),
                failed_runs: failed_runs[label],
                final_fitness_mean: mean(finals),
                final_fitness_ci95: confidence_interval(finals).ok().map(|(_, h)| h),
                mean_occupied_cells: mean(&sizes.iter().map(|&s| s as f64).collect::<Vec<_>>()),
                jaccard_mean: jaccard.map(|j| j.mean),
                jaccard_ci95: jaccard.map(|j| j.half_width_95),
            },
        );
    }
    let summary = Summary {
        experiment: &cfg.name,
        baseline: &baseline,
        grid_size: report.grid_size,
        repeats: report.repeats,
        calibration_warnings: report.calibration_warnings.len(),
        methods,
    };
    write_atomic(
        &reports_dir.join("summary.json"),
        &serde_json::to_vec_pretty(&summary)?,
    )?;

    Ok(ExperimentEvaluation {
        baseline,
        report,
        curves,
        samples,
        failed_runs,
        final_fitness,
        reports_dir,
    })
}
