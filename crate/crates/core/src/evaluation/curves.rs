use std::collections::BTreeMap;
use std::io::Write;

use super::stats::{confidence_interval, mean};
use crate::error::{Error, Result};

/// Number of resampling points: 0%, 1%, …, 100%.
pub const CURVE_POINTS: usize = 101;

/// Index into a trace of `len` evaluations at `percent` progress: the
/// `max(1, ⌈percent·len/100⌉)`-th evaluation. With 1000 and 100 evaluations,
/// 50% lands on evaluations 500 and 50 respectively.
pub fn percent_index(percent: usize, len: usize) -> usize {
    let eval = (percent * len).div_ceil(100).max(1);
    eval - 1
}

pub fn resample(trace: &[f64]) -> Vec<f64> {
    (0..CURVE_POINTS)
        .map(|p| trace[percent_index(p, trace.len())])
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Curve {
    pub runs: usize,
    pub mean: Vec<f64>,
    /// 95% half-widths; absent when only one run exists.
    pub half_width: Option<Vec<f64>>,
}

/// Mean best-fitness curves over iteration percentage, per method.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveTable {
    pub curves: BTreeMap<String, Curve>,
}

pub fn fitness_curves(traces: &BTreeMap<String, Vec<Vec<f64>>>) -> Result<CurveTable> {
    if traces.is_empty() || traces.values().all(|runs| runs.is_empty()) {
        return Err(Error::Degenerate(
            "no run records to build curves from".into(),
        ));
    }
    let mut curves = BTreeMap::new();
    for (label, runs) in traces {
        if runs.is_empty() {
            continue;
        }
        if runs.iter().any(|t| t.is_empty()) {
            return Err(Error::Degenerate(format!(
                "method {label} has an empty trace"
            )));
        }
        let resampled: Vec<Vec<f64>> = runs.iter().map(|t| resample(t)).collect();
        let column = |p: usize| resampled.iter().map(|r| r[p]).collect::<Vec<f64>>();
        let (means, half_width) = if resampled.len() >= 2 {
            let (m, h): (Vec<f64>, Vec<f64>) = (0..CURVE_POINTS)
                .map(|p| confidence_interval(&column(p)))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .unzip();
            (m, Some(h))
        } else {
            ((0..CURVE_POINTS).map(|p| mean(&column(p))).collect(), None)
        };
        curves.insert(
            label.clone(),
            Curve {
                runs: resampled.len(),
                mean: means,
                half_width,
            },
        );
    }
    Ok(CurveTable { curves })
}

impl CurveTable {
    /// Wide CSV: `percent` then `<label>_mean` and, when defined,
    /// `<label>_ci95` for each method in label order.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["percent".to_string()];
        for (label, curve) in &self.curves {
            header.push(format!("{label}_mean"));
            if curve.half_width.is_some() {
                header.push(format!("{label}_ci95"));
            }
        }
        w.write_record(&header)?;
        for p in 0..CURVE_POINTS {
            let mut row = vec![p.to_string()];
            for curve in self.curves.values() {
                row.push(format!("{:.16e}", curve.mean[p]));
                if let Some(h) = &curve.half_width {
                    row.push(format!("{:.16e}", h[p]));
                }
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}
