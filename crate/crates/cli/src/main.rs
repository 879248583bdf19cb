// SPDX-License-Identifier: Apache-2.0

//! `orbit`: calibrate the similarity threshold, run experiments, compare
//! report tables.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

mod config;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use orbit_core::fitness::Variant;
use orbit_core::harness::{
    compare_runs, plan_threshold, read_report_json, read_table, run_experiment, Approach, ExperimentPlan, HarnessError,
    ImageRecord, MetricColumn,
};
use orbit_core::metrics::GridStatsExtractor;
use orbit_core::model::{AdapterModel, ReferenceModel, ReferenceModelConfig, SegmentationModel};
use orbit_core::scene::{RealismTransform, TerrainClass, DEFAULT_SIZE};
use orbit_core::search::ArchivePolicy;
use orbit_core::ExecMode;
use serde::Serialize;

use config::{output_root, RunFile};

const ADAPTER_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Parser, Debug)]
#[command(
    name = "orbit",
    version,
    about = "Search-based test generation for terrain segmentation models",
    args_override_self = true
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mean pairwise feature distance over random scenes.
    Calibrate(CalibrateArgs),
    /// Run search variants and the random baseline.
    Run(Box<RunArgs>),
    /// Compare one column of two report tables.
    Compare(CompareArgs),
}

#[derive(Args, Debug)]
struct CalibrateArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value = "identity")]
    transform: String,
    /// Directory receiving `calibration.json`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// TOML file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Approach ids: flip, noise, sa, mcd, ground-truth, random or
    /// random-<variant>. Repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    variant: Vec<String>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    pop: Option<usize>,
    #[arg(long)]
    gens: Option<usize>,
    #[arg(long)]
    mut_prob: Option<f64>,
    #[arg(long)]
    cross_prob: Option<f64>,
    /// Fixed similarity threshold; calibrated when absent.
    #[arg(long)]
    t_similarity: Option<f64>,
    #[arg(long)]
    noise_var: Option<f64>,
    #[arg(long)]
    mcd_passes: Option<usize>,
    #[arg(long)]
    sky_threshold: Option<f64>,
    #[arg(long)]
    calibration_images: Option<usize>,
    /// Images per random cell; defaults to the search budget.
    #[arg(long)]
    random_images: Option<usize>,
    /// identity or style-perturb.
    #[arg(long)]
    transform: Option<String>,
    /// builtin or adapter:<command>.
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Keep every relevant random image instead of filtering by distance.
    #[arg(long)]
    no_archive: bool,
    /// Single-threaded execution; results are identical.
    #[arg(long)]
    sequential: bool,
}

#[derive(Args, Debug)]
struct CompareArgs {
    /// Report table (CSV, or JSON by extension).
    #[arg(long)]
    a: PathBuf,
    #[arg(long)]
    b: PathBuf,
    #[arg(long, default_value = "raw_metric")]
    column: String,
    #[arg(long)]
    paired: bool,
    /// Print the result as JSON.
    #[arg(long)]
    json: bool,
}

enum Failure {
    Usage(anyhow::Error),
    Runtime(anyhow::Error),
}

fn usage(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Usage(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

/// Invalid plans are the caller's fault; everything else is runtime.
fn harness(e: HarnessError) -> Failure {
    match e {
        HarnessError::Plan(_) | HarnessError::Fitness(_) => usage(e),
        other => runtime(other),
    }
}

fn env_out() -> Option<PathBuf> {
    std::env::var_os("ORBIT_OUT")
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

fn parse_transform(s: &str) -> Result<RealismTransform, Failure> {
    s.parse().map_err(|e| usage(anyhow!("--transform: {e}")))
}

fn load_model(choice: &str) -> Result<Box<dyn SegmentationModel>, Failure> {
    if choice == "builtin" {
        let m = ReferenceModel::new(ReferenceModelConfig::default()).map_err(runtime)?;
        return Ok(Box::new(m));
    }
    let Some(cmd) = choice.strip_prefix("adapter:").filter(|c| !c.trim().is_empty()) else {
        return Err(usage(anyhow!(
            "--model must be `builtin` or `adapter:<command>`, got `{choice}`"
        )));
    };
    let m = AdapterModel::spawn(cmd, (DEFAULT_SIZE, DEFAULT_SIZE), TerrainClass::COUNT, ADAPTER_TIMEOUT)
        .map_err(runtime)?;
    Ok(Box::new(m))
}

fn calibrate(args: CalibrateArgs) -> Result<(), Failure> {
    let out = output_root(args.out, env_out(), None);
    let mut plan = ExperimentPlan::new(vec![Approach::Random(Variant::Flip)], &out);
    plan.master_seed = args.seed;
    plan.fitness.calibration_images = args.n;
    plan.pipeline.transform = parse_transform(&args.transform)?;
    plan.validate().map_err(harness)?;
    let threshold = plan_threshold(&plan, &GridStatsExtractor::default()).map_err(harness)?;

    #[derive(Serialize)]
    struct Calibration<'a> {
        threshold: f64,
        n: usize,
        seed: u64,
        transform: &'a str,
    }
    let record = Calibration {
        threshold,
        n: args.n,
        seed: args.seed,
        transform: plan.pipeline.transform.id(),
    };
    std::fs::create_dir_all(&out)
        .with_context(|| format!("create {}", out.display()))
        .map_err(runtime)?;
    let path = out.join("calibration.json");
    let mut bytes = serde_json::to_vec_pretty(&record).map_err(runtime)?;
    bytes.push(b'\n');
    std::fs::write(&path, bytes)
        .with_context(|| format!("write {}", path.display()))
        .map_err(runtime)?;
    println!("threshold {threshold}");
    println!("written {}", path.display());
    Ok(())
}

fn build_plan(args: &RunArgs, file: RunFile) -> Result<(ExperimentPlan, String), Failure> {
    let ids = if args.variant.is_empty() {
        file.variant
            .map(|v| v.into_vec())
            .unwrap_or_else(|| vec!["flip".into()])
    } else {
        args.variant.clone()
    };
    let approaches = ids
        .iter()
        .map(|id| {
            id.parse::<Approach>()
                .map_err(|e| usage(anyhow!("--variant `{id}`: {e}")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let out = output_root(args.out.clone(), env_out(), file.out);
    let mut plan = ExperimentPlan::new(approaches, out);

    let s = &mut plan.settings;
    s.population_size = args.pop.or(file.pop).unwrap_or(s.population_size);
    s.generations = args.gens.or(file.gens).unwrap_or(s.generations);
    s.mutation_probability = args.mut_prob.or(file.mut_prob).unwrap_or(s.mutation_probability);
    s.crossover_probability = args.cross_prob.or(file.cross_prob).unwrap_or(s.crossover_probability);
    let f = &mut plan.fitness;
    f.similarity_threshold = args.t_similarity.or(file.t_similarity);
    f.noise_variance = args.noise_var.or(file.noise_var).unwrap_or(f.noise_variance);
    f.mcd_passes = args.mcd_passes.or(file.mcd_passes).unwrap_or(f.mcd_passes);
    f.sky_threshold = args.sky_threshold.or(file.sky_threshold).unwrap_or(f.sky_threshold);
    f.calibration_images = args
        .calibration_images
        .or(file.calibration_images)
        .unwrap_or(f.calibration_images);
    plan.repetitions = args.reps.or(file.reps).unwrap_or(plan.repetitions);
    plan.master_seed = args.seed.or(file.seed).unwrap_or(plan.master_seed);
    plan.random_images = args.random_images.or(file.random_images);
    if let Some(t) = args.transform.as_deref().or(file.transform.as_deref()) {
        plan.pipeline.transform = parse_transform(t)?;
    }
    if args.no_archive || file.no_archive == Some(true) {
        plan.random_policy = ArchivePolicy::KeepAll;
    }
    if args.sequential || file.sequential == Some(true) {
        plan.mode = ExecMode::Sequential;
    }
    plan.validate().map_err(harness)?;
    let model = args.model.clone().or(file.model).unwrap_or_else(|| "builtin".into());
    Ok((plan, model))
}

fn run(args: &RunArgs) -> Result<(), Failure> {
    let file = match &args.config {
        Some(path) => RunFile::load(path).map_err(usage)?,
        None => RunFile::default(),
    };
    let (plan, model_choice) = build_plan(args, file)?;
    let model = load_model(&model_choice)?;
    let outcome = run_experiment(&plan, model.as_ref(), &GridStatsExtractor::default()).map_err(harness)?;
    println!("threshold {}", outcome.threshold);
    for s in &outcome.summaries {
        let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"));
        println!(
            "{} rep-{} evaluations {} archive {} mean_raw {} mean_nearest {}",
            s.variant,
            s.rep,
            s.evaluations,
            s.archive_size,
            fmt(s.mean_raw_metric),
            fmt(s.mean_nearest_distance)
        );
    }
    println!("report {}", plan.output.join("report.csv").display());
    Ok(())
}

fn load_rows(path: &Path) -> Result<Vec<ImageRecord>, HarnessError> {
    if path.extension().is_some_and(|e| e == "json") {
        Ok(read_report_json(path)?.rows)
    } else {
        read_table(path)
    }
}

fn compare(args: CompareArgs) -> Result<(), Failure> {
    let column: MetricColumn = args.column.parse().map_err(usage)?;
    let a = load_rows(&args.a).map_err(runtime)?;
    let b = load_rows(&args.b).map_err(runtime)?;
    let result = compare_runs(&a, &b, column, args.paired).map_err(runtime)?;
    if args.json {
        println!("{}", serde_json::to_string(&result).map_err(runtime)?);
        return Ok(());
    }
    let effect = if args.paired { "e_hat" } else { "a12" };
    println!("test {:?}", result.test);
    println!("column {column}");
    println!("n {} {}", result.n_x, result.n_y);
    println!("statistic {}", result.statistic);
    println!("p_value {}", result.p_value);
    println!("{effect} {}", result.effect);
    println!("effect_class {:?}", result.effect_class);
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Calibrate(a) => calibrate(a),
        Command::Run(a) => run(&a),
        Command::Compare(a) => compare(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
