use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use latent_explorer::experiment::{
    evaluate_experiment_with, experiment_status, load_experiment_config, run_experiment,
    BackendConfig, ExperimentConfig, Models, REPORTS_DIR,
};
use latent_explorer::toy::{gradient_check, ToyConfig};
use latent_explorer::{CutoutPolicy, InitStrategy, LatentCode, LatentInit, Result};

/// Latent-space search with Adam, CMA-ES, and a hybrid, plus t-SNE/Jaccard
/// diversity evaluation.
#[derive(Parser, Debug)]
#[command(name = "latent-explorer", version)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Execute (or resume) every run of an experiment.
    Run(RunArgs),
    /// Score a finished experiment and write its reports.
    Evaluate(EvaluateArgs),
    /// Print run counts, final fitness, and any existing reports.
    Report {
        /// Experiment directory (`<output_dir>/<name>`).
        dir: PathBuf,
    },
    /// Compare analytic toy gradients with central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time objective evaluations and one run of each strategy.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    runs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    text: Option<String>,
    /// Worker threads; 0 uses every core.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Switch to the bridge backend at this endpoint.
    #[arg(long)]
    endpoint: Option<String>,
}

#[derive(Args, Debug)]
struct EvaluateArgs {
    /// Experiment directory (`<output_dir>/<name>`).
    dir: PathBuf,
    #[arg(long)]
    baseline: Option<String>,
    #[arg(long)]
    repeats: Option<usize>,
    #[arg(long)]
    perplexity: Option<f64>,
    #[arg(long)]
    tsne_iterations: Option<usize>,
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    grid_size: Option<usize>,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 20)]
    probes: usize,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Take the toy model and cutout settings from this experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value_t = 100)]
    evaluations: usize,
    /// Benchmark this experiment's backend and strategies.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

/// `Ok(false)` means the command ran but its check failed.
fn dispatch(command: Command) -> Result<bool> {
    match command {
        Command::Run(args) => run(args),
        Command::Evaluate(args) => evaluate(args),
        Command::Report { dir } => report(&dir),
        Command::Gradcheck(args) => gradcheck(args),
        Command::Bench(args) => bench(args),
    }
}

fn run(args: RunArgs) -> Result<bool> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(v) = args.runs {
        cfg.runs_per_strategy = v;
    }
    if let Some(v) = args.seed {
        cfg.master_seed = v;
    }
    if let Some(v) = args.output_dir {
        cfg.output_dir = v;
    }
    if let Some(v) = args.name {
        cfg.name = v;
    }
    if let Some(v) = args.text {
        cfg.text = v;
    }
    if let Some(v) = args.parallelism {
        cfg.parallelism = v;
    }
    if let Some(endpoint) = args.endpoint {
        cfg.backend = BackendConfig::Bridge { endpoint };
    }
    let summary = run_experiment(&cfg)?;
    println!(
        "{}: {} runs executed, {} already complete, {} failed",
        summary.experiment_dir.display(),
        summary.executed,
        summary.skipped,
        summary.failed.len()
    );
    for (label, index, message) in &summary.failed {
        println!("  failed {label} run {index}: {message}");
    }
    Ok(true)
}

fn evaluate(args: EvaluateArgs) -> Result<bool> {
    let mut settings = load_experiment_config(&args.dir)?.evaluation;
    if let Some(v) = args.repeats {
        settings.repeats = v;
    }
    if let Some(v) = args.perplexity {
        settings.perplexity = v;
    }
    if let Some(v) = args.tsne_iterations {
        settings.tsne_iterations = v;
    }
    if let Some(v) = args.samples {
        settings.samples_per_model = v;
    }
    if args.grid_size.is_some() {
        settings.grid_size = args.grid_size;
    }
    let ev = evaluate_experiment_with(&args.dir, args.baseline.as_deref(), &settings)?;
    println!(
        "baseline {} | grid {}x{} | {} repeats",
        ev.baseline, ev.report.grid_size, ev.report.grid_size, ev.report.repeats
    );
    for m in &ev.report.methods {
        println!(
            "  {:<12} jaccard {:.4} ± {:.4}",
            m.label, m.mean, m.half_width_95
        );
    }
    for (label, failed) in &ev.failed_runs {
        if *failed > 0 {
            println!("  {label}: {failed} failed runs excluded");
        }
    }
    println!("reports written to {}", ev.reports_dir.display());
    Ok(true)
}

fn report(dir: &std::path::Path) -> Result<bool> {
    println!(
        "{:<12} {:>9} {:>7} {:>14}",
        "strategy", "complete", "failed", "final fitness"
    );
    for s in experiment_status(dir)? {
        let fitness = match (s.mean_final_fitness, s.ci95) {
            (Some(m), Some(h)) => format!("{m:.4} ± {h:.4}"),
            (Some(m), None) => format!("{m:.4}"),
            _ => "-".into(),
        };
        println!(
            "{:<12} {:>5}/{:<3} {:>7} {:>14}",
            s.label, s.complete, s.planned, s.failed, fitness
        );
    }
    let jaccard = dir.join(REPORTS_DIR).join("jaccard.csv");
    if let Ok(text) = std::fs::read_to_string(&jaccard) {
        println!("\n{}:\n{text}", jaccard.display());
    }
    Ok(true)
}

fn toy_setup(config: Option<&PathBuf>) -> Result<(ToyConfig, CutoutPolicy)> {
    match config {
        None => Ok((ToyConfig::default(), CutoutPolicy::toy_default())),
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            Ok((cfg.toy, cfg.cutout_policy()))
        }
    }
}

fn gradcheck(args: GradcheckArgs) -> Result<bool> {
    let (toy, cutouts) = toy_setup(args.config.as_ref())?;
    let models = Models::toy(toy)?;
    let target = models.text_features("gradient check")?;
    let f = models.fitness_function(target, cutouts)?;
    let check = gradient_check(f.as_ref(), args.probes, args.step, args.seed)?;
    for (p, e) in check.errors.iter().enumerate() {
        println!("probe {p:>3}: max relative error {e:.3e}");
    }
    let ok = check.passes(args.tolerance);
    println!(
        "{} ({} probes, step {:e}, max {:.3e}, tolerance {:e})",
        if ok { "PASS" } else { "FAIL" },
        args.probes,
        args.step,
        check.max_error(),
        args.tolerance
    );
    Ok(ok)
}

fn bench(args: BenchArgs) -> Result<bool> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::new("benchmark"),
    };
    let models = Models::open(&cfg)?;
    let target = models.target(&cfg)?;
    let f = models.fitness_function(target, cfg.cutout_policy())?;
    let init = LatentCode::new(
        models.shape(),
        LatentInit::new(InitStrategy::StandardNormal, 0),
    )?;
    let n = args.evaluations.max(1);

    let start = Instant::now();
    for i in 0..n {
        f.fitness(&init, i as u64)?;
    }
    println!(
        "fitness:  {:>10.3} ms/eval",
        start.elapsed().as_secs_f64() * 1e3 / n as f64
    );
    if f.supports_gradient() {
        let start = Instant::now();
        for i in 0..n {
            f.fitness_and_loss_gradient(&init, i as u64)?;
        }
        println!(
            "gradient: {:>10.3} ms/eval",
            start.elapsed().as_secs_f64() * 1e3 / n as f64
        );
    }
    for entry in &cfg.strategies {
        if entry.kind.needs_gradient() && !f.supports_gradient() {
            continue;
        }
        let start = Instant::now();
        let outcome = entry.kind.run(f.as_ref(), &init, 0)?;
        println!(
            "{:<12} {:>5} evaluations in {:>7.2} s, best fitness {:.4}",
            entry.label(),
            outcome.evaluations(),
            start.elapsed().as_secs_f64(),
            outcome.best_fitness
        );
    }
    Ok(true)
}
