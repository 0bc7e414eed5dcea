//! Diversity evaluation: embed pooled sample features with t-SNE, bin the
//! embedding into a grid, and compare each method's occupied cells with a
//! baseline method's by the Jaccard index, over repeated t-SNE runs.

mod curves;
mod grid;
mod montage;
mod stats;
mod tsne;

use std::collections::{BTreeMap, HashMap};
use std::io::Write;

use rayon::prelude::*;

pub use curves::{fitness_curves, percent_index, resample, Curve, CurveTable, CURVE_POINTS};
pub use grid::{
    default_grid_size, grid_assign, jaccard_index, Cell, GridAssignment, GridOccupancy,
};
pub use montage::{render_montage, save_montage};
pub use stats::{confidence_interval, mean, sample_stdev, Z_95};
pub use tsne::{
    calibrate_affinities, embed_affinities, kl_divergence, tsne_embed, Affinities,
    CalibrationWarning, Embedding, TsneConfig,
};

use crate::error::{Error, Result};
use crate::objective::FeatureVector;
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct MethodJaccard {
    pub label: String,
    /// One Jaccard index against the baseline per repeat.
    pub values: Vec<f64>,
    pub mean: f64,
    pub half_width_95: f64,
}

/// One t-SNE repeat: its seed and the resulting grid assignment.
#[derive(Debug, Clone)]
pub struct RepeatOutcome {
    pub seed: u64,
    pub embedding: Vec<[f64; 2]>,
    pub grid: GridAssignment,
}

#[derive(Debug, Clone)]
pub struct JaccardReport {
    pub baseline_label: String,
    pub grid_size: usize,
    pub repeats: usize,
    /// Non-baseline methods in label order.
    pub methods: Vec<MethodJaccard>,
    /// Pooled sample labels, in embedding order.
    pub labels: Vec<String>,
    pub outcomes: Vec<RepeatOutcome>,
    pub calibration_warnings: Vec<CalibrationWarning>,
}

impl JaccardReport {
    pub fn method(&self, label: &str) -> Option<&MethodJaccard> {
        self.methods.iter().find(|m| m.label == label)
    }

    /// Occupied cell count of `label` in each repeat.
    pub fn occupancy_sizes(&self, label: &str) -> Vec<usize> {
        self.outcomes
            .iter()
            .map(|o| o.grid.occupancy.get(label).map_or(0, GridOccupancy::len))
            .collect()
    }

    /// CSV `method,baseline,repeats,grid_size,jaccard_mean,jaccard_ci95`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "method",
            "baseline",
            "repeats",
            "grid_size",
            "jaccard_mean",
            "jaccard_ci95",
        ])?;
        for m in &self.methods {
            w.write_record([
                m.label.clone(),
                self.baseline_label.clone(),
                self.repeats.to_string(),
                self.grid_size.to_string(),
                format!("{:.16e}", m.mean),
                format!("{:.16e}", m.half_width_95),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Repeats the t-SNE → grid → Jaccard pipeline `repeats` times with seeds
/// derived from `tsne.seed`, comparing every method with `baseline`.
///
/// Samples are pooled in label order. Bit-identical feature vectors are
/// embedded once and share a position. `grid_size` defaults to `⌈√N⌉`
/// over all pooled samples.
pub fn evaluate_methods(
    samples: &BTreeMap<String, Vec<FeatureVector>>,
    baseline: &str,
    tsne: &TsneConfig,
    grid_size: Option<usize>,
    repeats: usize,
) -> Result<JaccardReport> {
    if samples.len() < 2 {
        return Err(Error::Config(format!(
            "evaluation needs at least two methods, got {}",
            samples.len()
        )));
    }
    if !samples.contains_key(baseline) {
        return Err(Error::Config(format!(
            "baseline {baseline:?} is not among the methods {:?}",
            samples.keys().collect::<Vec<_>>()
        )));
    }
    if repeats < 2 {
        return Err(Error::Config(format!(
            "at least 2 repeats are needed for a confidence interval, got {repeats}"
        )));
    }
    if let Some((label, _)) = samples.iter().find(|(_, v)| v.is_empty()) {
        return Err(Error::Config(format!("method {label} has no samples")));
    }
    let mut pooled = Vec::new();
    let mut labels = Vec::new();
    for (label, feats) in samples {
        pooled.extend(feats.iter().cloned());
        labels.extend(std::iter::repeat_n(label.clone(), feats.len()));
    }
    let grid_size = grid_size.unwrap_or_else(|| default_grid_size(pooled.len()));
    let (unique, slot) = deduplicate(&pooled);
    tsne.validate(unique.len())?;
    let affinities = calibrate_affinities(&unique, tsne.perplexity)?;

    let outcomes = (0..repeats)
        .into_par_iter()
        .map(|r| {
            let seed = seed::derive_seed(tsne.seed, "tsne-repeat", r as u64);
            let embedding = embed_affinities(&affinities, &TsneConfig { seed, ..*tsne })
                .map_err(|e| e.in_context(format!("t-SNE repeat {r}")))?;
            let points: Vec<[f64; 2]> = slot.iter().map(|&u| embedding.points[u]).collect();
            let grid = grid_assign(&points, &labels, grid_size)?;
            Ok(RepeatOutcome {
                seed,
                embedding: points,
                grid,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let methods = samples
        .keys()
        .filter(|l| l.as_str() != baseline)
        .map(|label| {
            let values = outcomes
                .iter()
                .map(|o| jaccard_index(&o.grid.occupancy[label], &o.grid.occupancy[baseline]))
                .collect::<Result<Vec<_>>>()?;
            let (mean, half_width_95) = confidence_interval(&values)?;
            Ok(MethodJaccard {
                label: label.clone(),
                values,
                mean,
                half_width_95,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(JaccardReport {
        baseline_label: baseline.to_string(),
        grid_size,
        repeats,
        methods,
        labels,
        outcomes,
        calibration_warnings: affinities.warnings,
    })
}

/// Unique vectors in first-seen order, and each input's index among them.
fn deduplicate(features: &[FeatureVector]) -> (Vec<FeatureVector>, Vec<usize>) {
    let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
    let mut unique = Vec::new();
    let slot = features
        .iter()
        .map(|f| {
            let key = f.values().iter().map(|v| v.to_bits()).collect();
            *index.entry(key).or_insert_with(|| {
                unique.push(f.clone());
                unique.len() - 1
            })
        })
        .collect();
    (unique, slot)
}

/// The method with the highest mean final fitness; ties go to the first label.
pub fn best_performing(final_fitness: &BTreeMap<String, Vec<f64>>) -> Option<String> {
    let mut best: Option<(&String, f64)> = None;
    for (label, values) in final_fitness {
        if values.is_empty() {
            continue;
        }
        let m = mean(values);
        if best.is_none_or(|(_, b)| m > b) {
            best = Some((label, m));
        }
    }
    best.map(|(l, _)| l.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn cluster(center: &[f64], spread: f64, n: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| {
                FeatureVector::new(
                    center
                        .iter()
                        .map(|c| c + spread * rng.sample::<f64, _>(StandardNormal))
                        .collect(),
                )
                .unwrap()
            })
            .collect()
    }

    fn quick_tsne() -> TsneConfig {
        TsneConfig {
            perplexity: 10.0,
            iterations: 300,
            ..TsneConfig::default()
        }
    }

    #[test]
    fn identical_sample_sets_score_one() {
        let feats = cluster(&[0.0; 4], 1.0, 20, 1);
        let samples = BTreeMap::from([("a".to_string(), feats.clone()), ("b".to_string(), feats)]);
        let report = evaluate_methods(&samples, "b", &quick_tsne(), None, 3).unwrap();
        assert_eq!(report.methods.len(), 1);
        assert_eq!(report.methods[0].values, vec![1.0; 3]);
        assert_eq!(report.methods[0].half_width_95, 0.0);
    }

    #[test]
    fn duplicates_share_one_position() {
        let feats = cluster(&[0.0; 4], 1.0, 12, 4);
        let mut doubled = feats.clone();
        doubled.extend(feats.iter().cloned());
        let (unique, slot) = deduplicate(&doubled);
        assert_eq!(unique.len(), 12);
        assert_eq!(&slot[12..], &slot[..12]);
    }

    #[test]
    fn configuration_errors() {
        let feats = cluster(&[0.0; 4], 1.0, 20, 1);
        let one = BTreeMap::from([("a".to_string(), feats.clone())]);
        assert!(matches!(
            evaluate_methods(&one, "a", &quick_tsne(), None, 3),
            Err(Error::Config(_))
        ));
        let two = BTreeMap::from([("a".to_string(), feats.clone()), ("b".to_string(), feats)]);
        assert!(matches!(
            evaluate_methods(&two, "c", &quick_tsne(), None, 3),
            Err(Error::Config(_))
        ));
        assert!(evaluate_methods(&two, "a", &quick_tsne(), None, 1).is_err());
    }

    #[test]
    fn csv_has_one_row_per_non_baseline_method() {
        let samples = BTreeMap::from([
            ("adam".to_string(), cluster(&[0.0; 4], 1.0, 15, 1)),
            ("cmaes".to_string(), cluster(&[3.0; 4], 1.0, 15, 2)),
            ("hybrid".to_string(), cluster(&[1.0; 4], 1.0, 15, 3)),
        ]);
        let report = evaluate_methods(&samples, "hybrid", &quick_tsne(), Some(6), 2).unwrap();
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(
            lines[0],
            "method,baseline,repeats,grid_size,jaccard_mean,jaccard_ci95"
        );
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("adam,hybrid,2,6,"));
        assert!(lines[2].starts_with("cmaes,hybrid,2,6,"));
        assert_eq!(report.occupancy_sizes("adam").len(), 2);
    }

    #[test]
    fn best_performing_picks_highest_mean() {
        let fits = BTreeMap::from([
            ("adam".to_string(), vec![0.3, 0.5]),
            ("cmaes".to_string(), vec![0.45, 0.45]),
            ("hybrid".to_string(), vec![]),
        ]);
        assert_eq!(best_performing(&fits).as_deref(), Some("cmaes"));
        assert_eq!(best_performing(&BTreeMap::new()), None);
    }
}
