//! Covariance matrix adaptation evolution strategy (minimization).
//!
//! Strategy constants, with `D` the dimension and `μ = ⌊λ/2⌋`:
//!
//! ```text
//! w_i     ∝ ln(μ + 1/2) - ln i,  i = 1..μ, normalized to sum 1
//! μ_eff   = 1 / Σ w_i²
//! c_σ     = (μ_eff + 2) / (D + μ_eff + 5)
//! d_σ     = 1 + 2·max(0, √((μ_eff - 1)/(D + 1)) - 1) + c_σ
//! c_c     = (4 + μ_eff/D) / (D + 4 + 2μ_eff/D)
//! c_1     = 2 / ((D + 1.3)² + μ_eff)
//! c_μ     = min(1 - c_1, 2(μ_eff - 2 + 1/μ_eff) / ((D + 2)² + μ_eff))
//! χ_N     = √D (1 - 1/(4D) + 1/(21D²))
//! ```
//!
//! `tell` ranks candidates by loss with a stable sort (ties keep input
//! order), so the update depends only on the ranking. The eigendecomposition
//! `C = B diag(d) Bᵀ` is refreshed lazily, every
//! `max(1, ⌊1 / (10 D (c_1 + c_μ))⌋)` generations.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct EigenCache {
    pub eigenvalues: DVector<f64>,
    pub eigenvectors: DMatrix<f64>,
    /// Generation at which the decomposition was computed.
    pub computed_at: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CmaState {
    pub dim: usize,
    pub lambda: usize,
    pub mu: usize,
    pub mean: DVector<f64>,
    pub sigma: f64,
    pub cov: DMatrix<f64>,
    pub p_sigma: DVector<f64>,
    pub p_c: DVector<f64>,
    pub weights: Vec<f64>,
    pub mu_eff: f64,
    pub c_sigma: f64,
    pub d_sigma: f64,
    pub c_c: f64,
    pub c_1: f64,
    pub c_mu: f64,
    pub chi_n: f64,
    pub generation: u64,
    pub eigen: EigenCache,
    pub eigen_interval: u64,
}

impl CmaState {
    pub fn new(mean0: &[f64], sigma0: f64, lambda: usize) -> Result<Self> {
        let dim = mean0.len();
        if dim == 0 {
            return Err(Error::Config("CMA-ES dimension must be at least 1".into()));
        }
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::Config(format!(
                "sigma0 must be positive, got {sigma0}"
            )));
        }
        if lambda < 2 {
            return Err(Error::Config(format!(
                "population size must be >= 2, got {lambda}"
            )));
        }
        if mean0.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("initial mean has non-finite entries".into()));
        }
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let d = dim as f64;
        let c_sigma = (mu_eff + 2.0) / (d + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (d + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / d) / (d + 4.0 + 2.0 * mu_eff / d);
        let c_1 = 2.0 / ((d + 1.3).powi(2) + mu_eff);
        let c_mu =
            (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((d + 2.0).powi(2) + mu_eff));
        let chi_n = d.sqrt() * (1.0 - 1.0 / (4.0 * d) + 1.0 / (21.0 * d * d));
        let eigen_interval = ((1.0 / (10.0 * d * (c_1 + c_mu))).floor() as u64).max(1);

        Ok(CmaState {
            dim,
            lambda,
            mu,
            mean: DVector::from_column_slice(mean0),
            sigma: sigma0,
            cov: DMatrix::identity(dim, dim),
            p_sigma: DVector::zeros(dim),
            p_c: DVector::zeros(dim),
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
            generation: 0,
            eigen: EigenCache {
                eigenvalues: DVector::from_element(dim, 1.0),
                eigenvectors: DMatrix::identity(dim, dim),
                computed_at: 0,
            },
            eigen_interval,
        })
    }

    pub fn mean(&self) -> &[f64] {
        self.mean.as_slice()
    }

    fn refresh_eigen(&mut self) -> Result<()> {
        if self.generation - self.eigen.computed_at < self.eigen_interval {
            return Ok(());
        }
        let generation = self.generation;
        let eig = SymmetricEigen::try_new(self.cov.clone(), f64::EPSILON, 0).ok_or_else(|| {
            Error::Numeric(format!(
                "covariance eigendecomposition did not converge at generation {generation}"
            ))
        })?;
        let min = eig.eigenvalues.min();
        if !(min > 0.0) || eig.eigenvalues.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "covariance lost positive-definiteness at generation {generation} (min eigenvalue {min:e})"
            )));
        }
        self.eigen = EigenCache {
            eigenvalues: eig.eigenvalues,
            eigenvectors: eig.eigenvectors,
            computed_at: generation,
        };
        Ok(())
    }

    /// Samples `λ` candidates `mean + σ B diag(√d) n`, `n ~ N(0, I)`.
    /// Normals are drawn candidate by candidate from a ChaCha8 stream seeded
    /// with `rng_seed`.
    pub fn ask(&mut self, rng_seed: u64) -> Result<Vec<Vec<f64>>> {
        self.refresh_eigen()?;
        let mut rng = seed::rng(rng_seed);
        let scale = self.eigen.eigenvalues.map(f64::sqrt);
        let mut population = Vec::with_capacity(self.lambda);
        for _ in 0..self.lambda {
            let z = DVector::from_fn(self.dim, |_, _| rng.sample::<f64, _>(StandardNormal));
            let y = &self.eigen.eigenvectors * z.component_mul(&scale);
            let x = &self.mean + y * self.sigma;
            population.push(x.as_slice().to_vec());
        }
        Ok(population)
    }

    /// Updates mean, paths, step size and covariance from ranked candidates.
    pub fn tell(&mut self, candidates: &[Vec<f64>], losses: &[f64]) -> Result<()> {
        if candidates.len() != self.lambda || losses.len() != self.lambda {
            return Err(Error::shape(
                format!("{} candidates and losses", self.lambda),
                format!("{} candidates, {} losses", candidates.len(), losses.len()),
            ));
        }
        if let Some(bad) = losses.iter().find(|l| !l.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite loss {bad} at generation {}",
                self.generation
            )));
        }
        if let Some(c) = candidates.iter().find(|c| c.len() != self.dim) {
            return Err(Error::shape(
                format!("candidates of length {}", self.dim),
                c.len(),
            ));
        }

        let mut order: Vec<usize> = (0..self.lambda).collect();
        order.sort_by(|&a, &b| losses[a].total_cmp(&losses[b]));

        let old_mean = self.mean.clone();
        let steps: Vec<DVector<f64>> = order[..self.mu]
            .iter()
            .map(|&i| (DVector::from_column_slice(&candidates[i]) - &old_mean) / self.sigma)
            .collect();
        let mut y_w = DVector::zeros(self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            y_w.axpy(*w, y, 1.0);
        }
        self.mean = &old_mean + &y_w * self.sigma;

        // C^{-1/2} y_w = B diag(1/√d) Bᵀ y_w
        let b = &self.eigen.eigenvectors;
        let inv_sqrt = self.eigen.eigenvalues.map(|v| 1.0 / v.sqrt());
        let whitened = b * (b.tr_mul(&y_w)).component_mul(&inv_sqrt);

        let cs = self.c_sigma;
        self.p_sigma =
            &self.p_sigma * (1.0 - cs) + whitened * (cs * (2.0 - cs) * self.mu_eff).sqrt();
        let ps_norm = self.p_sigma.norm();
        let gens = (self.generation + 1) as i32;
        let correction = (1.0 - (1.0 - cs).powi(2 * gens)).sqrt();
        let d = self.dim as f64;
        let h_sigma = ps_norm / correction < (1.4 + 2.0 / (d + 1.0)) * self.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };

        let cc = self.c_c;
        self.p_c = &self.p_c * (1.0 - cc) + &y_w * (h * (cc * (2.0 - cc) * self.mu_eff).sqrt());

        let delta_h = (1.0 - h) * cc * (2.0 - cc);
        let mut rank_mu = DMatrix::zeros(self.dim, self.dim);
        for (w, y) in self.weights.iter().zip(&steps) {
            rank_mu.ger(*w, y, y, 1.0);
        }
        let decay = 1.0 - self.c_1 - self.c_mu + self.c_1 * delta_h;
        let mut cov = &self.cov * decay;
        cov.ger(self.c_1, &self.p_c, &self.p_c, 1.0);
        cov += rank_mu * self.c_mu;
        // enforce exact symmetry
        let upper = cov.upper_triangle();
        self.cov = &upper + upper.transpose() - DMatrix::from_diagonal(&cov.diagonal());

        self.sigma *= ((cs / self.d_sigma) * (ps_norm / self.chi_n - 1.0)).exp();
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::Numeric(format!(
                "step size became {} at generation {}",
                self.sigma, self.generation
            )));
        }
        self.generation += 1;
        Ok(())
    }
}

pub fn cma_init(dim: usize, mean0: &[f64], sigma0: f64, lambda: usize) -> Result<CmaState> {
    if mean0.len() != dim {
        return Err(Error::shape(format!("mean of length {dim}"), mean0.len()));
    }
    CmaState::new(mean0, sigma0, lambda)
}

pub fn cma_ask(state: &mut CmaState, rng_seed: u64) -> Result<Vec<Vec<f64>>> {
    state.ask(rng_seed)
}

pub fn cma_tell(state: &CmaState, candidates: &[Vec<f64>], losses: &[f64]) -> Result<CmaState> {
    let mut next = state.clone();
    next.tell(candidates, losses)?;
    Ok(next)
}
