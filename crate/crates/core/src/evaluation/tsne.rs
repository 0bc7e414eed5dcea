//! Exact t-SNE (O(N²) per iteration).
//!
//! Input affinities use a Gaussian kernel on squared Euclidean distances
//! with per-point precision found by bisection so that each conditional
//! row's perplexity `exp(H)` (equivalently `2^H` with `H` in bits) matches
//! the target. The joint matrix is `(P + Pᵀ) / 2N`.
//!
//! Optimization follows the reference implementation: Student-t output
//! kernel, early exaggeration of P, momentum switch, and per-coordinate
//! gains (+0.2 on sign flip, ×0.8 otherwise, floor 0.01). The embedding is
//! initialized from `N(0, 1e-4²)` and re-centered every iteration.
//!
//! All pairwise sums run in row-major index order.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::FeatureVector;
use crate::seed;

/// Bisection stops once the achieved perplexity is this close to the target.
const PERPLEXITY_TOLERANCE: f64 = 1e-7;
const MAX_BISECTION_STEPS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneConfig {
    pub perplexity: f64,
    pub iterations: usize,
    pub early_exaggeration: f64,
    pub exaggeration_iters: usize,
    pub learning_rate: f64,
    pub momentum_initial: f64,
    pub momentum_final: f64,
    pub momentum_switch_iter: usize,
    pub seed: u64,
}

impl Default for TsneConfig {
    fn default() -> Self {
        TsneConfig {
            perplexity: 40.0,
            iterations: 1000,
            early_exaggeration: 12.0,
            exaggeration_iters: 250,
            learning_rate: 200.0,
            momentum_initial: 0.5,
            momentum_final: 0.8,
            momentum_switch_iter: 250,
            seed: 0,
        }
    }
}

impl TsneConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if n < 3 {
            return Err(Error::Config(format!(
                "t-SNE needs at least 3 points, got {n}"
            )));
        }
        if !(self.perplexity > 1.0) || self.perplexity > (n - 1) as f64 {
            return Err(Error::Config(format!(
                "perplexity must lie in (1, N-1] = (1, {}], got {}",
                n - 1,
                self.perplexity
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("t-SNE needs at least one iteration".into()));
        }
        if !(self.learning_rate > 0.0) || !(self.early_exaggeration >= 1.0) {
            return Err(Error::Config(format!(
                "invalid t-SNE optimizer settings {self:?}"
            )));
        }
        Ok(())
    }
}

/// A row whose bisection ended off-target.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationWarning {
    pub row: usize,
    pub achieved: f64,
    pub target: f64,
}

#[derive(Debug, Clone)]
pub struct Affinities {
    n: usize,
    /// Row-major conditional matrix `P(j|i)`.
    pub conditional: Vec<f64>,
    /// Row-major symmetric joint matrix summing to 1.
    pub joint: Vec<f64>,
    pub row_perplexities: Vec<f64>,
    pub warnings: Vec<CalibrationWarning>,
}

impl Affinities {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
}

fn squared_distances(features: &[FeatureVector]) -> Result<Vec<f64>> {
    let n = features.len();
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(Error::shape(format!("{dim} features"), f.len()));
    }
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in (i + 1)..n {
            let dij: f64 = features[i]
                .values()
                .iter()
                .zip(features[j].values())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            d[i * n + j] = dij;
            d[j * n + i] = dij;
        }
    }
    Ok(d)
}

/// Fills `row` with `P(j|i)` for precision `beta` and returns the perplexity.
fn conditional_row(dist: &[f64], i: usize, beta: f64, row: &mut [f64]) -> f64 {
    let d_min = dist
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &d)| d)
        .fold(f64::INFINITY, f64::min);
    let mut z = 0.0;
    for (j, (p, &d)) in row.iter_mut().zip(dist).enumerate() {
        *p = if j == i {
            0.0
        } else {
            (-beta * (d - d_min)).exp()
        };
        z += *p;
    }
    let mut weighted = 0.0;
    for (j, (p, &d)) in row.iter_mut().zip(dist).enumerate() {
        *p /= z;
        if j != i {
            weighted += *p * (d - d_min);
        }
    }
    // entropy in nats: ln Z + β E[d - d_min]
    (z.ln() + beta * weighted).exp()
}

/// Per-row precision search plus symmetrization.
pub fn calibrate_affinities(features: &[FeatureVector], perplexity: f64) -> Result<Affinities> {
    let n = features.len();
    TsneConfig {
        perplexity,
        ..TsneConfig::default()
    }
    .validate(n)?;
    let dist = squared_distances(features)?;
    let mut conditional = vec![0.0; n * n];
    let mut row_perplexities = Vec::with_capacity(n);
    let mut warnings = Vec::new();
    for i in 0..n {
        let d = &dist[i * n..(i + 1) * n];
        let row = &mut conditional[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (0.0_f64, f64::INFINITY);
        let mut beta = 1.0;
        let mut achieved = conditional_row(d, i, beta, row);
        let mut steps = 0;
        while (achieved - perplexity).abs() > PERPLEXITY_TOLERANCE && steps < MAX_BISECTION_STEPS {
            if achieved > perplexity {
                lo = beta;
                beta = if hi.is_finite() {
                    (beta + hi) / 2.0
                } else {
                    beta * 2.0
                };
            } else {
                hi = beta;
                beta = (beta + lo) / 2.0;
            }
            achieved = conditional_row(d, i, beta, row);
            steps += 1;
        }
        if (achieved - perplexity).abs() > PERPLEXITY_TOLERANCE {
            log::warn!(
                "perplexity bisection for row {i} stopped at {achieved} (target {perplexity}) after {steps} steps"
            );
            warnings.push(CalibrationWarning {
                row: i,
                achieved,
                target: perplexity,
            });
        }
        row_perplexities.push(achieved);
    }
    let mut joint = vec![0.0; n * n];
    let denom = 2.0 * n as f64;
    for i in 0..n {
        for j in 0..n {
            joint[i * n + j] = (conditional[i * n + j] + conditional[j * n + i]) / denom;
        }
    }
    Ok(Affinities {
        n,
        conditional,
        joint,
        row_perplexities,
        warnings,
    })
}

#[derive(Debug, Clone)]
pub struct Embedding {
    pub points: Vec<[f64; 2]>,
    /// `(iteration, KL(P‖Q))` after every 50th update and after the last.
    pub kl_history: Vec<(usize, f64)>,
}

impl Embedding {
    pub fn kl_at(&self, iteration: usize) -> Option<f64> {
        self.kl_history
            .iter()
            .find(|(it, _)| *it == iteration)
            .map(|(_, kl)| *kl)
    }

    pub fn final_kl(&self) -> f64 {
        self.kl_history
            .last()
            .map(|(_, kl)| *kl)
            .unwrap_or(f64::NAN)
    }
}

pub fn tsne_embed(features: &[FeatureVector], cfg: &TsneConfig) -> Result<Embedding> {
    cfg.validate(features.len())?;
    let affinities = calibrate_affinities(features, cfg.perplexity)?;
    embed_affinities(&affinities, cfg)
}

/// Gradient descent on KL(P‖Q) from precomputed affinities.
pub fn embed_affinities(affinities: &Affinities, cfg: &TsneConfig) -> Result<Embedding> {
    let n = affinities.len();
    cfg.validate(n)?;
    let p = &affinities.joint;
    let mut rng = seed::rng(seed::derive_seed(cfg.seed, "tsne-init", 0));
    let mut y: Vec<[f64; 2]> = (0..n)
        .map(|_| {
            [
                1e-4 * rng.sample::<f64, _>(StandardNormal),
                1e-4 * rng.sample::<f64, _>(StandardNormal),
            ]
        })
        .collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    let mut kl_history = Vec::new();

    for iter in 0..cfg.iterations {
        let exaggeration = if iter < cfg.exaggeration_iters {
            cfg.early_exaggeration
        } else {
            1.0
        };
        let momentum = if iter < cfg.momentum_switch_iter {
            cfg.momentum_initial
        } else {
            cfg.momentum_final
        };

        let sum_num = student_kernel(&y, &mut num);
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let k = i * n + j;
                let q = num[k] / sum_num;
                let coeff = (exaggeration * p[k] - q) * num[k];
                g[0] += coeff * (y[i][0] - y[j][0]);
                g[1] += coeff * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }

        for i in 0..n {
            for d in 0..2 {
                let same_sign = (grad[i][d] > 0.0) == (update[i][d] > 0.0);
                gains[i][d] = if same_sign {
                    gains[i][d] * 0.8
                } else {
                    gains[i][d] + 0.2
                }
                .max(0.01);
                update[i][d] =
                    momentum * update[i][d] - cfg.learning_rate * gains[i][d] * grad[i][d];
                y[i][d] += update[i][d];
            }
        }
        let mut center = [0.0; 2];
        for pt in &y {
            center[0] += pt[0];
            center[1] += pt[1];
        }
        center[0] /= n as f64;
        center[1] /= n as f64;
        for pt in &mut y {
            pt[0] -= center[0];
            pt[1] -= center[1];
        }
        if y.iter().any(|pt| !pt[0].is_finite() || !pt[1].is_finite()) {
            return Err(Error::Numeric(format!(
                "t-SNE embedding overflowed at iteration {}",
                iter + 1
            )));
        }

        let done = iter + 1;
        if done % 50 == 0 || done == cfg.iterations {
            kl_history.push((done, kl_divergence(p, &y, &mut num)));
        }
    }
    Ok(Embedding {
        points: y,
        kl_history,
    })
}

/// Fills `num[i*n+j] = 1/(1+‖yi-yj‖²)` (zero diagonal) and returns the sum.
fn student_kernel(y: &[[f64; 2]], num: &mut [f64]) -> f64 {
    let n = y.len();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            let v = if i == j {
                0.0
            } else {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                1.0 / (1.0 + dx * dx + dy * dy)
            };
            num[i * n + j] = v;
            sum += v;
        }
    }
    sum
}

/// `KL(P‖Q) = Σ p log(p/q)` over pairs with `p > 0`.
pub fn kl_divergence(p: &[f64], y: &[[f64; 2]], scratch: &mut [f64]) -> f64 {
    let sum = student_kernel(y, scratch);
    p.iter()
        .zip(scratch.iter())
        .filter(|(pij, _)| **pij > 0.0)
        .map(|(pij, nij)| pij * (pij / (nij / sum).max(1e-300)).ln())
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fv(v: Vec<f64>) -> FeatureVector {
        FeatureVector::new(v).unwrap()
    }

    fn random_features(n: usize, dim: usize, seed: u64) -> Vec<FeatureVector> {
        let mut rng = seed::rng(seed);
        (0..n)
            .map(|_| fv((0..dim).map(|_| rng.sample(StandardNormal)).collect()))
            .collect()
    }

    #[test]
    fn equidistant_triple_gives_uniform_rows() {
        let pts = vec![
            fv(vec![1., 0., 0.]),
            fv(vec![0., 1., 0.]),
            fv(vec![0., 0., 1.]),
        ];
        let aff = calibrate_affinities(&pts, 2.0).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert!((aff.conditional[i * 3 + j] - expected).abs() < 1e-15);
            }
        }
        assert!(aff.warnings.is_empty());
    }

    #[test]
    fn rows_hit_target_perplexity_and_joint_sums_to_one() {
        let pts = random_features(60, 8, 4);
        let aff = calibrate_affinities(&pts, 15.0).unwrap();
        assert!(aff.warnings.is_empty());
        for perp in &aff.row_perplexities {
            assert!((perp - 15.0).abs() < 1e-5);
        }
        let total: f64 = aff.joint.iter().sum();
        assert!((total - 1.0).abs() < 1e-9);
        for i in 0..60 {
            for j in 0..60 {
                assert_eq!(aff.joint[i * 60 + j], aff.joint[j * 60 + i]);
            }
        }
    }

    #[test]
    fn unreachable_perplexity_warns() {
        // three identical points: every row is uniform regardless of precision
        let pts = [fv(vec![1.0]), fv(vec![1.0]), fv(vec![1.0]), fv(vec![2.0])];
        let aff = calibrate_affinities(&pts[..3], 1.5).unwrap();
        assert_eq!(aff.warnings.len(), 3);
        assert!((aff.warnings[0].achieved - 2.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let pts = random_features(10, 3, 1);
        assert!(calibrate_affinities(&pts[..2], 1.5).is_err());
        assert!(calibrate_affinities(&pts, 9.5).is_err());
        assert!(calibrate_affinities(&pts, 1.0).is_err());
    }

    #[test]
    fn embedding_is_deterministic_and_kl_decreases() {
        let pts = random_features(40, 6, 9);
        let cfg = TsneConfig {
            perplexity: 10.0,
            iterations: 400,
            seed: 3,
            ..TsneConfig::default()
        };
        let a = tsne_embed(&pts, &cfg).unwrap();
        let b = tsne_embed(&pts, &cfg).unwrap();
        assert_eq!(a.points, b.points);
        let kl50 = a.kl_at(50).unwrap();
        assert!(a.final_kl().is_finite() && a.final_kl() < kl50);
        let other = tsne_embed(&pts, &TsneConfig { seed: 4, ..cfg }).unwrap();
        assert_ne!(a.points, other.points);
    }
}
