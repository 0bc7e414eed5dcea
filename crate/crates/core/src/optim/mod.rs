//! Latent search strategies sharing one evaluation-budget contract.
//!
//! Every call to the fitness function, including the forward pass that
//! produces a gradient, consumes one evaluation. Under the default
//! configurations all three strategies spend exactly 1000:
//!
//! * Adam: 1000 iterations, one gradient evaluation each.
//! * CMA-ES: 100 generations of 10 candidates.
//! * Hybrid: 50 generations of 10 candidates, each refined by `k = 1` Adam
//!   step (one evaluation) and then re-evaluated (one more).
//!
//! Within a generation every evaluation uses the generation index as its
//! cutout iteration, so candidates are ranked on the same windows. Adam uses
//! its step index.

mod adam;
mod cma;
mod trace;

use serde::{Deserialize, Serialize};

pub use adam::{adam_step, AdamParams, AdamState};
pub use cma::{cma_ask, cma_init, cma_tell, CmaState, EigenCache};
pub use trace::{FitnessTrace, TraceRow};

use crate::error::{Error, Result};
use crate::latent::LatentCode;
use crate::objective::FitnessFunction;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    max_evaluations: usize,
    used: usize,
}

impl Budget {
    pub fn new(max_evaluations: usize) -> Self {
        Budget {
            max_evaluations,
            used: 0,
        }
    }

    pub fn max_evaluations(&self) -> usize {
        self.max_evaluations
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.max_evaluations - self.used
    }

    /// Reserves `n` evaluations, or returns false without reserving any.
    pub fn try_consume(&mut self, n: usize) -> bool {
        if n > self.remaining() {
            return false;
        }
        self.used += n;
        true
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategyKind {
    Adam {
        #[serde(default = "defaults::iterations")]
        iterations: usize,
        #[serde(default)]
        adam: AdamParams,
    },
    CmaEs {
        #[serde(default = "defaults::cma_generations")]
        generations: usize,
        #[serde(default = "defaults::population")]
        population: usize,
        #[serde(default = "defaults::sigma")]
        sigma0: f64,
    },
    Hybrid {
        #[serde(default = "defaults::hybrid_generations")]
        generations: usize,
        #[serde(default = "defaults::population")]
        population: usize,
        #[serde(default = "defaults::k")]
        k: usize,
        #[serde(default = "defaults::sigma")]
        sigma0: f64,
        #[serde(default)]
        adam: AdamParams,
        /// Keep one Adam state per population slot across generations
        /// instead of starting every candidate from fresh moments.
        #[serde(default)]
        persist_moments: bool,
        /// Tell CMA-ES the Adam-refined vectors (true) or the raw samples
        /// paired with the refined losses (false).
        #[serde(default = "defaults::lamarckian")]
        lamarckian: bool,
    },
}

mod defaults {
    pub fn iterations() -> usize {
        1000
    }
    pub fn cma_generations() -> usize {
        100
    }
    pub fn hybrid_generations() -> usize {
        50
    }
    pub fn population() -> usize {
        10
    }
    pub fn sigma() -> f64 {
        0.2
    }
    pub fn k() -> usize {
        1
    }
    pub fn lamarckian() -> bool {
        true
    }
}

impl StrategyKind {
    pub fn adam() -> Self {
        StrategyKind::Adam {
            iterations: defaults::iterations(),
            adam: AdamParams::default(),
        }
    }

    pub fn cma_es() -> Self {
        StrategyKind::CmaEs {
            generations: defaults::cma_generations(),
            population: defaults::population(),
            sigma0: defaults::sigma(),
        }
    }

    pub fn hybrid() -> Self {
        StrategyKind::Hybrid {
            generations: defaults::hybrid_generations(),
            population: defaults::population(),
            k: defaults::k(),
            sigma0: defaults::sigma(),
            adam: AdamParams::default(),
            persist_moments: false,
            lamarckian: defaults::lamarckian(),
        }
    }

    pub fn default_label(&self) -> &'static str {
        match self {
            StrategyKind::Adam { .. } => "adam",
            StrategyKind::CmaEs { .. } => "cmaes",
            StrategyKind::Hybrid { .. } => "hybrid",
        }
    }

    /// Evaluations the configuration spends if the budget never binds.
    pub fn planned_evaluations(&self) -> usize {
        match *self {
            StrategyKind::Adam { iterations, .. } => iterations,
            StrategyKind::CmaEs {
                generations,
                population,
                ..
            } => generations * population,
            StrategyKind::Hybrid {
                generations,
                population,
                k,
                ..
            } => generations * population * (k + 1),
        }
    }

    pub fn needs_gradient(&self) -> bool {
        match self {
            StrategyKind::Adam { .. } => true,
            StrategyKind::CmaEs { .. } => false,
            StrategyKind::Hybrid { k, .. } => *k > 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            StrategyKind::Adam { adam, .. } => adam.validate(),
            StrategyKind::CmaEs {
                population, sigma0, ..
            } => validate_cma(*population, *sigma0),
            StrategyKind::Hybrid {
                population,
                sigma0,
                adam,
                ..
            } => {
                adam.validate()?;
                validate_cma(*population, *sigma0)
            }
        }
    }

    /// Runs the strategy from `init` with a budget sized to its plan.
    pub fn run(
        &self,
        f: &dyn FitnessFunction,
        init: &LatentCode,
        seed: u64,
    ) -> Result<SearchOutcome> {
        let mut budget = Budget::new(self.planned_evaluations());
        self.run_with_budget(f, init, &mut budget, seed)
    }

    pub fn run_with_budget(
        &self,
        f: &dyn FitnessFunction,
        init: &LatentCode,
        budget: &mut Budget,
        seed: u64,
    ) -> Result<SearchOutcome> {
        self.validate()?;
        match *self {
            StrategyKind::Adam { iterations, adam } => run_adam(f, init, iterations, adam, budget),
            StrategyKind::CmaEs {
                generations,
                population,
                sigma0,
            } => run_cmaes(
                f,
                init,
                &CmaRunConfig {
                    generations,
                    population,
                    sigma0,
                },
                budget,
                seed,
            ),
            StrategyKind::Hybrid {
                generations,
                population,
                k,
                sigma0,
                adam,
                persist_moments,
                lamarckian,
            } => run_hybrid(
                f,
                init,
                &HybridRunConfig {
                    cma: CmaRunConfig {
                        generations,
                        population,
                        sigma0,
                    },
                    k,
                    adam,
                    persist_moments,
                    lamarckian,
                },
                budget,
                seed,
            ),
        }
    }
}

fn validate_cma(population: usize, sigma0: f64) -> Result<()> {
    if population < 2 {
        return Err(Error::Config(format!(
            "population must be >= 2, got {population}"
        )));
    }
    if !(sigma0 > 0.0) || !sigma0.is_finite() {
        return Err(Error::Config(format!(
            "sigma0 must be positive, got {sigma0}"
        )));
    }
    Ok(())
}

/// What a search produced. `best_latent` is the best candidate ever
/// evaluated and `best_fitness` its score, which is also the last value of
/// the trace's running best.
#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub trace: FitnessTrace,
    pub best_latent: LatentCode,
    pub best_fitness: f64,
    /// True when the budget ran out before the configured plan completed.
    pub truncated: bool,
    /// Completed iterations (Adam) or generations (CMA-ES, hybrid).
    pub steps_completed: usize,
}

impl SearchOutcome {
    pub fn evaluations(&self) -> usize {
        self.trace.len()
    }
}

struct Recorder {
    trace: FitnessTrace,
    best: Option<LatentCode>,
}

impl Recorder {
    fn new() -> Self {
        Recorder {
            trace: FitnessTrace::new(),
            best: None,
        }
    }

    fn record(&mut self, fitness: f64, latent: &LatentCode) {
        if self.trace.record(fitness) {
            self.best = Some(latent.clone());
        }
    }

    fn finish(self, truncated: bool, steps_completed: usize) -> Result<SearchOutcome> {
        let best_fitness = self
            .trace
            .best()
            .ok_or_else(|| Error::Config("budget allows no evaluations".into()))?;
        Ok(SearchOutcome {
            best_latent: self.best.expect("a best latent accompanies every trace"),
            trace: self.trace,
            best_fitness,
            truncated,
            steps_completed,
        })
    }
}

fn check_fitness(value: f64, context: impl FnOnce() -> String) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::Numeric(format!("non-finite fitness {value}")).in_context(context()))
    }
}

fn require_gradient(f: &dyn FitnessFunction, strategy: &str) -> Result<()> {
    if f.supports_gradient() {
        Ok(())
    } else {
        Err(Error::Capability(format!(
            "{strategy} needs gradients but the backend is gradient-free; use CMA-ES"
        )))
    }
}

/// Gradient ascent on fitness with Adam, one evaluation per iteration.
pub fn run_adam(
    f: &dyn FitnessFunction,
    init: &LatentCode,
    iterations: usize,
    params: AdamParams,
    budget: &mut Budget,
) -> Result<SearchOutcome> {
    require_gradient(f, "Adam")?;
    params.validate()?;
    let shape = init.shape();
    let mut state = AdamState::new(init.flatten(), params);
    let mut rec = Recorder::new();
    let mut truncated = false;
    let mut done = 0;
    for i in 0..iterations {
        if !budget.try_consume(1) {
            truncated = true;
            break;
        }
        let latent = LatentCode::unflatten(&state.params, shape)?;
        let ctx = || format!("adam iteration {i}");
        let (fitness, grad) = f
            .fitness_and_loss_gradient(&latent, i as u64)
            .map_err(|e| e.in_context(ctx()))?;
        rec.record(check_fitness(fitness, ctx)?, &latent);
        state.step(&grad).map_err(|e| e.in_context(ctx()))?;
        done += 1;
    }
    rec.finish(truncated, done)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CmaRunConfig {
    pub generations: usize,
    pub population: usize,
    pub sigma0: f64,
}

fn ask_seed(run_seed: u64, generation: usize) -> u64 {
    seed::derive_seed(run_seed, "cma-ask", generation as u64)
}

/// CMA-ES on the flat latent, minimizing `-fitness`.
pub fn run_cmaes(
    f: &dyn FitnessFunction,
    init: &LatentCode,
    cfg: &CmaRunConfig,
    budget: &mut Budget,
    seed: u64,
) -> Result<SearchOutcome> {
    let (outcome, _) = run_cmaes_with_state(f, init, cfg, budget, seed)?;
    Ok(outcome)
}

/// As [`run_cmaes`], also returning the final strategy state.
pub fn run_cmaes_with_state(
    f: &dyn FitnessFunction,
    init: &LatentCode,
    cfg: &CmaRunConfig,
    budget: &mut Budget,
    seed: u64,
) -> Result<(SearchOutcome, CmaState)> {
    validate_cma(cfg.population, cfg.sigma0)?;
    let shape = init.shape();
    let mut state = CmaState::new(&init.flatten(), cfg.sigma0, cfg.population)?;
    let mut rec = Recorder::new();
    let mut truncated = false;
    let mut done = 0;
    for g in 0..cfg.generations {
        if !budget.try_consume(cfg.population) {
            truncated = true;
            break;
        }
        let population = state.ask(ask_seed(seed, g))?;
        let mut losses = Vec::with_capacity(population.len());
        for (i, x) in population.iter().enumerate() {
            let latent = LatentCode::unflatten(x, shape)?;
            let ctx = || format!("cma-es generation {g} candidate {i}");
            let fitness = f
                .fitness(&latent, g as u64)
                .map_err(|e| e.in_context(ctx()))?;
            let fitness = check_fitness(fitness, ctx)?;
            rec.record(fitness, &latent);
            losses.push(-fitness);
        }
        state.tell(&population, &losses)?;
        done += 1;
    }
    Ok((rec.finish(truncated, done)?, state))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HybridRunConfig {
    pub cma: CmaRunConfig,
    pub k: usize,
    pub adam: AdamParams,
    pub persist_moments: bool,
    pub lamarckian: bool,
}

impl HybridRunConfig {
    pub fn new(cma: CmaRunConfig, k: usize, adam: AdamParams) -> Self {
        HybridRunConfig {
            cma,
            k,
            adam,
            persist_moments: false,
            lamarckian: true,
        }
    }
}

/// CMA-ES where each sampled candidate first takes `k` Adam steps.
pub fn run_hybrid(
    f: &dyn FitnessFunction,
    init: &LatentCode,
    cfg: &HybridRunConfig,
    budget: &mut Budget,
    seed: u64,
) -> Result<SearchOutcome> {
    let (outcome, _) = run_hybrid_with_state(f, init, cfg, budget, seed)?;
    Ok(outcome)
}

pub fn run_hybrid_with_state(
    f: &dyn FitnessFunction,
    init: &LatentCode,
    cfg: &HybridRunConfig,
    budget: &mut Budget,
    seed: u64,
) -> Result<(SearchOutcome, CmaState)> {
    let CmaRunConfig {
        generations,
        population,
        sigma0,
    } = cfg.cma;
    validate_cma(population, sigma0)?;
    cfg.adam.validate()?;
    if cfg.k > 0 {
        require_gradient(f, "the hybrid strategy")?;
    }
    let shape = init.shape();
    let per_generation = population * (cfg.k + 1);
    let mut state = CmaState::new(&init.flatten(), sigma0, population)?;
    let mut slots: Vec<Option<AdamState>> = vec![None; population];
    let mut rec = Recorder::new();
    let mut truncated = false;
    let mut done = 0;
    for g in 0..generations {
        if !budget.try_consume(per_generation) {
            truncated = true;
            break;
        }
        let iteration = g as u64;
        let raw = state.ask(ask_seed(seed, g))?;
        let mut refined = Vec::with_capacity(population);
        let mut losses = Vec::with_capacity(population);
        for (i, x) in raw.iter().enumerate() {
            let mut adam = match slots[i].take() {
                Some(mut kept) if cfg.persist_moments => {
                    kept.reset_params(x.clone());
                    kept
                }
                _ => AdamState::new(x.clone(), cfg.adam),
            };
            for step in 0..cfg.k {
                let latent = LatentCode::unflatten(&adam.params, shape)?;
                let ctx = || format!("hybrid generation {g} candidate {i} adam step {step}");
                let (fitness, grad) = f
                    .fitness_and_loss_gradient(&latent, iteration)
                    .map_err(|e| e.in_context(ctx()))?;
                rec.record(check_fitness(fitness, ctx)?, &latent);
                adam.step(&grad).map_err(|e| e.in_context(ctx()))?;
            }
            let latent = LatentCode::unflatten(&adam.params, shape)?;
            let ctx = || format!("hybrid generation {g} candidate {i}");
            let fitness = f
                .fitness(&latent, iteration)
                .map_err(|e| e.in_context(ctx()))?;
            let fitness = check_fitness(fitness, ctx)?;
            rec.record(fitness, &latent);
            losses.push(-fitness);
            refined.push(adam.params.clone());
            if cfg.persist_moments {
                slots[i] = Some(adam);
            }
        }
        let told = if cfg.lamarckian { &refined } else { &raw };
        state.tell(told, &losses)?;
        done += 1;
    }
    Ok((rec.finish(truncated, done)?, state))
}
