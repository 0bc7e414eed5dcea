//! Acceptance suite: one PASS/FAIL line per criterion, run in sequence so
//! the wall-clock limits are measured without contention.
//!
//! `cargo test -p latent-explorer --test acceptance [-- <name filter>...]`

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use latent_explorer::evaluation::{
    calibrate_affinities, embed_affinities, jaccard_index, GridOccupancy, TsneConfig, CURVE_POINTS,
};
use latent_explorer::experiment::*;
use latent_explorer::optim::{AdamParams, AdamState, CmaState, StrategyKind};
use latent_explorer::seed::derive_seed;
use latent_explorer::toy::{gradient_check, toy_text_target, ToyConfig};
use latent_explorer::{
    CutoutPolicy, FeatureVector, FitnessFunction, InitStrategy, LatentCode, LatentInit,
    LatentShape, Result,
};

struct Check {
    pass: bool,
    detail: String,
}

fn check(pass: bool, detail: String) -> Check {
    Check { pass, detail }
}

fn secs(d: Duration) -> String {
    format!("{:.1} s", d.as_secs_f64())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(rand_distr::StandardNormal)
}

// ---------------------------------------------------------------- budget

struct Counting<'a> {
    inner: &'a dyn FitnessFunction,
    calls: AtomicUsize,
}

impl FitnessFunction for Counting<'_> {
    fn latent_shape(&self) -> LatentShape {
        self.inner.latent_shape()
    }

    fn fitness(&self, latent: &LatentCode, iteration: u64) -> Result<f64> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.fitness(latent, iteration)
    }

    fn fitness_and_loss_gradient(
        &self,
        latent: &LatentCode,
        iteration: u64,
    ) -> Result<(f64, Vec<f64>)> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.inner.fitness_and_loss_gradient(latent, iteration)
    }

    fn supports_gradient(&self) -> bool {
        self.inner.supports_gradient()
    }
}

fn budget_exactness() -> Check {
    let toy = ToyConfig::default();
    let target = toy_text_target("a red fox in the snow", toy.feature_dim).unwrap();
    let objective = toy.objective(target, CutoutPolicy::toy_default()).unwrap();
    let init = LatentCode::new(
        toy.shape().unwrap(),
        LatentInit::new(InitStrategy::StandardNormal, 7),
    )
    .unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for kind in [
        StrategyKind::adam(),
        StrategyKind::cma_es(),
        StrategyKind::hybrid(),
    ] {
        let counting = Counting {
            inner: &objective,
            calls: AtomicUsize::new(0),
        };
        let start = Instant::now();
        let outcome = kind.run(&counting, &init, 11).unwrap();
        let took = start.elapsed();
        let calls = counting.calls.load(Ordering::Relaxed);
        let ok = calls == 1000
            && outcome.evaluations() == 1000
            && !outcome.truncated
            && took < Duration::from_secs(10);
        pass &= ok;
        parts.push(format!(
            "{} {calls} evals in {}",
            kind.default_label(),
            secs(took)
        ));
    }
    check(pass, parts.join(", "))
}

// -------------------------------------------------------------- gradient

fn gradient_oracle() -> Check {
    let configs = [
        (
            "default toy",
            ToyConfig::default(),
            CutoutPolicy::toy_default(),
        ),
        (
            "deeper narrow toy",
            ToyConfig {
                hidden_layers: 3,
                latent_dim: 8,
                hidden_width: 40,
                image_side: 24,
                encoder_input_side: 20,
                generator_seed: 5,
                encoder_seed: 6,
                ..ToyConfig::default()
            },
            CutoutPolicy {
                num_cuts: 5,
                min_fraction: 0.3,
                resize_to: 20,
                ..CutoutPolicy::toy_default()
            },
        ),
    ];
    let start = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, toy, cutouts) in configs {
        let target = toy_text_target("gradient oracle", toy.feature_dim).unwrap();
        let objective = toy.objective(target, cutouts).unwrap();
        let result = gradient_check(&objective, 20, 1e-5, 3).unwrap();
        pass &= result.errors.len() == 20 && result.passes(1e-4);
        parts.push(format!("{name} max rel err {:.2e}", result.max_error()));
    }
    let took = start.elapsed();
    pass &= took < Duration::from_secs(30);
    check(
        pass,
        format!(
            "{} over 20 probes each, step 1e-5, {}",
            parts.join(", "),
            secs(took)
        ),
    )
}

// ------------------------------------------------------------------ CMA

fn minimize(
    f: fn(&[f64]) -> f64,
    mean0: &[f64],
    sigma0: f64,
    lambda: usize,
    generations: usize,
    goal: f64,
    trial: u64,
) -> (bool, usize) {
    let mut state = CmaState::new(mean0, sigma0, lambda).unwrap();
    let mut best = f64::INFINITY;
    for g in 0..generations {
        let pop = state
            .ask(derive_seed(trial, "benchmark", g as u64))
            .unwrap();
        let losses: Vec<f64> = pop.iter().map(|x| f(x)).collect();
        best = losses.iter().copied().fold(best, f64::min);
        if best < goal {
            return (true, g + 1);
        }
        state.tell(&pop, &losses).unwrap();
    }
    (false, generations)
}

fn sphere(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn rosenbrock(x: &[f64]) -> f64 {
    x.windows(2)
        .map(|w| 100.0 * (w[1] - w[0] * w[0]).powi(2) + (1.0 - w[0]).powi(2))
        .sum()
}

fn cma_convergence() -> Check {
    let start = Instant::now();
    let mut sphere_ok = 0;
    let mut sphere_gens = Vec::new();
    for trial in 0..20 {
        let (ok, g) = minimize(sphere, &[1.0; 10], 0.5, 10, 1000, 1e-10, trial);
        sphere_ok += ok as usize;
        sphere_gens.push(g);
    }
    // default population 4 + ⌊3 ln 5⌋
    let lambda = 4 + (3.0 * 5f64.ln()).floor() as usize;
    let mut rosen_ok = 0;
    let mut rosen_gens = Vec::new();
    for trial in 0..20 {
        let (ok, g) = minimize(rosenbrock, &[0.0; 5], 0.5, lambda, 3000, 1e-8, 100 + trial);
        rosen_ok += ok as usize;
        rosen_gens.push(g);
    }
    let took = start.elapsed();
    let median = |v: &mut Vec<usize>| {
        v.sort_unstable();
        v[v.len() / 2]
    };
    check(
        sphere_ok >= 19 && rosen_ok >= 18 && took < Duration::from_secs(120),
        format!(
            "sphere {sphere_ok}/20 (median {} generations), rosenbrock {rosen_ok}/20 with λ={lambda} (median {}), {}",
            median(&mut sphere_gens),
            median(&mut rosen_gens),
            secs(took)
        ),
    )
}

// ------------------------------------------------------- rank invariance

fn same_bits(a: &CmaState, b: &CmaState) -> bool {
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    bits(a.mean.as_slice()) == bits(b.mean.as_slice())
        && a.sigma.to_bits() == b.sigma.to_bits()
        && bits(a.cov.as_slice()) == bits(b.cov.as_slice())
        && bits(a.p_sigma.as_slice()) == bits(b.p_sigma.as_slice())
        && bits(a.p_c.as_slice()) == bits(b.p_c.as_slice())
        && a.generation == b.generation
        && bits(a.eigen.eigenvalues.as_slice()) == bits(b.eigen.eigenvalues.as_slice())
        && bits(a.eigen.eigenvectors.as_slice()) == bits(b.eigen.eigenvectors.as_slice())
}

fn rank_invariance() -> Check {
    let mut r = rng(17);
    let mut state = CmaState::new(&[0.3; 6], 0.4, 8).unwrap();
    let mut identical = 0;
    for t in 0..100 {
        let pop = state.ask(derive_seed(17, "rank", t)).unwrap();
        let losses: Vec<f64> = pop.iter().map(|_| r.random_range(-3.0..3.0)).collect();
        let warped: Vec<f64> = losses.iter().map(|l| l * l * l + 5.0).collect();
        let mut a = state.clone();
        let mut b = state.clone();
        a.tell(&pop, &losses).unwrap();
        b.tell(&pop, &warped).unwrap();
        identical += same_bits(&a, &b) as usize;
        state = a;
    }
    check(
        identical == 100,
        format!("{identical}/100 tells give bit-identical states under loss³+5"),
    )
}

// --------------------------------------------------------------- jaccard

fn jaccard_oracle() -> Check {
    let mut r = rng(23);
    let mut agree = 0;
    let mut compared = 0;
    for _ in 0..200 {
        let g = r.random_range(1..=20usize);
        let draw = |r: &mut ChaCha8Rng| {
            let n = r.random_range(0..=g * g);
            (0..n)
                .map(|_| (r.random_range(0..g), r.random_range(0..g)))
                .collect::<Vec<_>>()
        };
        let (a, b) = (draw(&mut r), draw(&mut r));
        // brute force on plain lists
        let mut ua: Vec<(usize, usize)> = Vec::new();
        for c in &a {
            if !ua.contains(c) {
                ua.push(*c);
            }
        }
        let mut ub: Vec<(usize, usize)> = Vec::new();
        for c in &b {
            if !ub.contains(c) {
                ub.push(*c);
            }
        }
        let inter = ua.iter().filter(|c| ub.contains(c)).count();
        let union = ua.len() + ub.len() - inter;
        let oa = GridOccupancy::from_cells(g, "a", a).unwrap();
        let ob = GridOccupancy::from_cells(g, "b", b).unwrap();
        let got = jaccard_index(&oa, &ob);
        compared += 1;
        agree += match got {
            Ok(j) => union > 0 && j == inter as f64 / union as f64,
            Err(_) => union == 0,
        } as usize;
    }
    check(
        agree == compared,
        format!("{agree}/{compared} random pairs equal the brute-force value"),
    )
}

// ----------------------------------------------------------------- t-SNE

fn tsne_calibration() -> Check {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut warnings = 0;
    let mut kl_decreased = 0;
    for set in 0..300u64 {
        let mut r = rng(derive_seed(31, "tsne-set", set));
        let clusters = r.random_range(1..=6usize);
        let scale = r.random_range(0.2..3.0);
        let centers: Vec<Vec<f64>> = (0..clusters)
            .map(|_| (0..32).map(|_| 2.0 * gaussian(&mut r)).collect())
            .collect();
        let features: Vec<FeatureVector> = (0..200)
            .map(|i| {
                let c = &centers[i % clusters];
                FeatureVector::new(c.iter().map(|v| v + scale * gaussian(&mut r)).collect())
                    .unwrap()
            })
            .collect();
        let aff = calibrate_affinities(&features, 40.0).unwrap();
        warnings += aff.warnings.len();
        for p in &aff.row_perplexities {
            worst = worst.max((p - 40.0).abs());
        }
        let cfg = TsneConfig {
            seed: set,
            ..TsneConfig::default()
        };
        let emb = embed_affinities(&aff, &cfg).unwrap();
        kl_decreased += (emb.final_kl() < emb.kl_at(50).unwrap()) as usize;
    }
    check(
        worst <= 1e-5 && warnings == 0 && kl_decreased == 300,
        format!(
            "300 sets: worst |perplexity - 40| {worst:.1e}, {warnings} calibration warnings, final KL < KL@50 in {kl_decreased}/300, {}",
            secs(start.elapsed())
        ),
    )
}

// ----------------------------------------------------------- replication

fn replication_config(output: &Path) -> ExperimentConfig {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs/replication.toml");
    let mut cfg = ExperimentConfig::load(&path).unwrap();
    cfg.output_dir = output.to_path_buf();
    cfg
}

struct Replication {
    _root: tempfile::TempDir,
    cfg: ExperimentConfig,
    evaluation: ExperimentEvaluation,
    took: Duration,
}

fn replication() -> &'static Replication {
    static CELL: OnceLock<Replication> = OnceLock::new();
    CELL.get_or_init(|| {
        let root = tempfile::tempdir().unwrap();
        let cfg = replication_config(root.path());
        let start = Instant::now();
        let summary = run_experiment(&cfg).unwrap();
        assert!(summary.failed.is_empty(), "{:?}", summary.failed);
        let evaluation = evaluate_experiment(&cfg.experiment_dir(), Some("hybrid")).unwrap();
        Replication {
            _root: root,
            cfg,
            evaluation,
            took: start.elapsed(),
        }
    })
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Gradient ascent on the cutout-averaged fitness from each anchor and a few
/// random points. An optimum counts when it reaches 90% of the best one; two
/// optima lie in separate basins when the fitness at their midpoint is below
/// both. Returns the largest greedily built set of mutually separated optima.
fn separated_basins(cfg: &ExperimentConfig) -> (usize, String) {
    let TargetSpec::Anchors {
        count,
        spread,
        seed,
    } = cfg.target
    else {
        return (0, "target is not an anchor mixture".into());
    };
    let models = Models::open(cfg).unwrap();
    let f = models
        .fitness_function(models.target(cfg).unwrap(), cfg.cutout_policy())
        .unwrap();
    let shape = models.shape();
    let smoothed = |x: &[f64]| {
        let code = LatentCode::unflatten(x, shape).unwrap();
        (0..8).map(|it| f.fitness(&code, it).unwrap()).sum::<f64>() / 8.0
    };
    let loss_gradient = |x: &[f64]| {
        let code = LatentCode::unflatten(x, shape).unwrap();
        let mut g = vec![0.0; x.len()];
        for it in 0..8 {
            for (s, v) in g
                .iter_mut()
                .zip(f.fitness_and_loss_gradient(&code, it).unwrap().1)
            {
                *s += v / 8.0;
            }
        }
        g
    };
    let mut starts: Vec<Vec<f64>> = anchor_latents(shape, count, spread, seed)
        .unwrap()
        .iter()
        .map(LatentCode::flatten)
        .collect();
    for s in 0..4 {
        let init = LatentInit::new(
            InitStrategy::StandardNormal,
            derive_seed(seed, "basin-start", s),
        );
        starts.push(LatentCode::new(shape, init).unwrap().flatten());
    }
    let mut optima: Vec<(Vec<f64>, f64)> = starts
        .into_iter()
        .map(|x| {
            let mut adam = AdamState::new(x, AdamParams::default());
            for _ in 0..300 {
                let g = loss_gradient(&adam.params);
                adam.step(&g).unwrap();
            }
            let height = smoothed(&adam.params);
            (adam.params, height)
        })
        .collect();
    optima.sort_by(|a, b| b.1.total_cmp(&a.1));
    let best = optima[0].1;
    let mut chosen: Vec<&(Vec<f64>, f64)> = Vec::new();
    let mut min_dist = f64::INFINITY;
    for candidate in optima.iter().filter(|o| o.1 >= 0.9 * best) {
        let separate = chosen.iter().all(|c| {
            let mid: Vec<f64> =
                c.0.iter()
                    .zip(&candidate.0)
                    .map(|(a, b)| 0.5 * (a + b))
                    .collect();
            smoothed(&mid) < c.1.min(candidate.1)
        });
        if separate {
            for c in &chosen {
                min_dist = min_dist.min(distance(&c.0, &candidate.0));
            }
            chosen.push(candidate);
        }
    }
    let worst = optima.last().unwrap().1;
    (
        chosen.len(),
        format!(
            "{} of {} ascent optima in mutually separated basins (optima fitness {worst:.3}-{best:.3}, \
             min separation {min_dist:.1})",
            chosen.len(),
            optima.len()
        ),
    )
}

fn scaled_replication() -> Check {
    let rep = replication();
    let start = Instant::now();
    let (basins, basin_detail) = separated_basins(&rep.cfg);
    let took = rep.took + start.elapsed();
    let report = &rep.evaluation.report;
    let mean_cells = |label: &str| {
        let sizes = report.occupancy_sizes(label);
        sizes.iter().sum::<usize>() as f64 / sizes.len() as f64
    };
    let mut both = 0;
    for outcome in &report.outcomes {
        let occ = &outcome.grid.occupancy;
        let (adam, cma, hybrid) = (
            &occ["adam"].cells,
            &occ["cmaes"].cells,
            &occ["hybrid"].cells,
        );
        let adam_only: BTreeSet<_> = adam.difference(cma).collect();
        let cma_only: BTreeSet<_> = cma.difference(adam).collect();
        if adam_only.iter().any(|c| hybrid.contains(c))
            && cma_only.iter().any(|c| hybrid.contains(c))
        {
            both += 1;
        }
    }
    let runs_ok = rep.evaluation.samples.values().all(|&n| n == 50) && report.repeats == 30;
    let (adam, cma, hybrid) = (
        mean_cells("adam"),
        mean_cells("cmaes"),
        mean_cells("hybrid"),
    );
    check(
        basins >= 4 && runs_ok && cma > adam && both >= 25 && took < Duration::from_secs(900),
        format!(
            "{basin_detail}; mean occupied cells of {}x{} grid: adam {adam:.2}, cmaes {cma:.2}, hybrid {hybrid:.2}; \
             hybrid meets both exclusive regions in {both}/30 repeats; runs, evaluation and basin check {}",
            report.grid_size,
            report.grid_size,
            secs(took)
        ),
    )
}

// -------------------------------------------------------- fitness curves

fn fitness_curve_consistency() -> Check {
    let rep = replication();
    let exp = rep.cfg.experiment_dir();
    let mut worst: f64 = 0.0;
    let mut runs_ok = true;
    let mut finals = BTreeMap::new();
    for entry in &rep.cfg.strategies {
        let label = entry.label();
        let traces: Vec<Vec<f64>> = (0..rep.cfg.runs_per_strategy)
            .map(|i| {
                RunRecord::load(&run_dir(&exp, label, i))
                    .unwrap()
                    .trace
                    .best_series()
            })
            .collect();
        let curve = &rep.evaluation.curves.curves[label];
        runs_ok &= curve.runs == rep.cfg.runs_per_strategy && traces.len() == 50;
        let half = curve.half_width.as_ref().unwrap();
        for p in 0..CURVE_POINTS {
            // the ⌈p·len/100⌉-th evaluation, at least the first
            let column: Vec<f64> = traces
                .iter()
                .map(|t| t[(p * t.len()).div_ceil(100).max(1) - 1])
                .collect();
            let n = column.len() as f64;
            // Welford, unlike the library's two-pass form
            let (mut m, mut s) = (0.0, 0.0);
            for (k, v) in column.iter().enumerate() {
                let d = v - m;
                m += d / (k + 1) as f64;
                s += d * (v - m);
            }
            let expected = 1.96 * (s / (n - 1.0)).sqrt() / n.sqrt();
            worst = worst
                .max((half[p] - expected).abs())
                .max((curve.mean[p] - m).abs());
        }
        let last: Vec<f64> = traces.iter().map(|t| *t.last().unwrap()).collect();
        finals.insert(label, last.iter().sum::<f64>() / last.len() as f64);
    }
    let (hybrid, cma, adam) = (finals["hybrid"], finals["cmaes"], finals["adam"]);
    check(
        hybrid >= cma && runs_ok && worst <= 1e-12,
        format!(
            "mean final best fitness hybrid {hybrid:.4}, cmaes {cma:.4} (adam {adam:.4}); \
             curves over 50 runs each, largest mean/half-width deviation from the formula {worst:.1e}"
        ),
    )
}

// ----------------------------------------------------------- determinism

fn determinism() -> Check {
    let rep = replication();
    let root = tempfile::tempdir().unwrap();
    let cfg = replication_config(root.path());
    let start = Instant::now();
    run_experiment(&cfg).unwrap();
    let took = start.elapsed();
    let (mut same, mut total) = (0, 0);
    for entry in &cfg.strategies {
        for i in 0..cfg.runs_per_strategy {
            let a = std::fs::read(
                run_dir(&rep.cfg.experiment_dir(), entry.label(), i).join(TRACE_FILE),
            )
            .unwrap();
            let b =
                std::fs::read(run_dir(&cfg.experiment_dir(), entry.label(), i).join(TRACE_FILE))
                    .unwrap();
            total += 1;
            same += (a == b) as usize;
        }
    }
    check(
        same == total && total == 150,
        format!("{same}/{total} trace CSVs byte-identical across two experiments with master seed {} (rerun {})", cfg.master_seed, secs(took)),
    )
}

fn main() {
    type Criterion = (&'static str, fn() -> Check);
    let criteria: [Criterion; 9] = [
        ("budget exactness", budget_exactness),
        ("gradient oracle", gradient_oracle),
        ("cma-es convergence", cma_convergence),
        ("rank invariance", rank_invariance),
        ("jaccard oracle", jaccard_oracle),
        ("t-sne calibration", tsne_calibration),
        ("scaled replication", scaled_replication),
        ("fitness curves", fitness_curve_consistency),
        ("determinism", determinism),
    ];
    let filters: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filters.is_empty() && !filters.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            check(false, format!("panicked: {msg}"))
        });
        failed += !result.pass as usize;
        println!(
            "{} {name}: {} [{}]",
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            secs(start.elapsed())
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
