// SPDX-License-Identifier: Apache-2.0

//! Repeated seeded runs per approach, persisted artifacts and reports.
//!
//! Layout of an experiment directory:
//!
//! ```text
//! <out>/<approach>/rep-<r>/archive/slot-NNN-{image,mask}.pgm
//! <out>/<approach>/rep-<r>/run_log.ndjson
//! <out>/<approach>/rep-<r>/metrics.csv
//! <out>/<approach>/rep-<r>/manifest.json
//! <out>/report.csv, <out>/report.json, <out>/summary.csv
//! ```

mod persist;
mod report;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::{self, ExecMode};
use crate::fitness::{
    calibrate_threshold, training_activations, Evaluator, FitnessConfig, FitnessError, ScenePipeline, Variant,
};
use crate::metrics::{FeatureExtractor, MetricsError};
use crate::model::{ActivationVector, SegmentationModel};
use crate::search::{run_random, run_search, ArchivePolicy, AuditError, SearchFailure, SearchOutcome, SearchSettings};
use crate::seeds::{derive, derive_str, hash_bytes};
use crate::stats::StatsError;

use persist::write_cell;
pub use persist::{image_rows, verify_cell, CellManifest, ManifestFile, MANIFEST_VERSION};
pub use report::{
    archive_diversity, compare_runs, read_report_json, read_table, write_report, write_summary, CellSummary,
    ImageRecord, MetricColumn, Report, ReportFormat, REPORT_VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cell {approach}/rep-{rep}: {failure}")]
    Run {
        approach: String,
        rep: usize,
        failure: Box<SearchFailure>,
    },
    #[error(transparent)]
    Fitness(#[from] FitnessError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error("table: {0}")]
    Table(String),
    #[error("artifact check failed: {0}")]
    Verify(String),
}

impl HarnessError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        HarnessError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// One column of an experiment: a search variant, or uniform random
/// sampling scored with a variant's fitness.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Approach {
    Search(Variant),
    Random(Variant),
}

impl Approach {
    pub fn id(&self) -> String {
        match self {
            Approach::Search(v) => v.id().to_string(),
            Approach::Random(Variant::Flip) => "random".to_string(),
            Approach::Random(v) => format!("random-{v}"),
        }
    }

    pub fn variant(&self) -> Variant {
        match *self {
            Approach::Search(v) | Approach::Random(v) => v,
        }
    }

    pub fn is_random(&self) -> bool {
        matches!(self, Approach::Random(_))
    }
}

impl fmt::Display for Approach {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

impl FromStr for Approach {
    type Err = FitnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s == "random" {
            return Ok(Approach::Random(Variant::Flip));
        }
        if let Some(v) = s.strip_prefix("random-") {
            return Ok(Approach::Random(v.parse()?));
        }
        Ok(Approach::Search(s.parse()?))
    }
}

impl From<Approach> for String {
    fn from(a: Approach) -> Self {
        a.id()
    }
}

impl TryFrom<String> for Approach {
    type Error = FitnessError;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// Fitness parameters shared by every cell of a plan.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitnessParams {
    pub sky_threshold: f64,
    pub noise_variance: f64,
    pub mcd_passes: usize,
    /// `None` calibrates the threshold from random images.
    pub similarity_threshold: Option<f64>,
    pub calibration_images: usize,
    /// Size of the stand-in training corpus for the surprise variant.
    pub training_images: usize,
}

impl Default for FitnessParams {
    fn default() -> Self {
        let d = FitnessConfig::for_variant(Variant::Flip);
        Self {
            sky_threshold: d.sky_threshold,
            noise_variance: d.noise_variance,
            mcd_passes: d.mcd_passes,
            similarity_threshold: None,
            calibration_images: 1000,
            training_images: 200,
        }
    }
}

impl FitnessParams {
    pub fn config(&self, variant: Variant, threshold: f64) -> FitnessConfig {
        FitnessConfig {
            sky_threshold: self.sky_threshold,
            noise_variance: self.noise_variance,
            mcd_passes: self.mcd_passes,
            similarity_threshold: threshold,
            ..FitnessConfig::for_variant(variant)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub approaches: Vec<Approach>,
    pub repetitions: usize,
    /// Search settings; `master_seed` is replaced by each cell's seed.
    pub settings: SearchSettings,
    pub fitness: FitnessParams,
    pub pipeline: ScenePipeline,
    pub output: PathBuf,
    pub master_seed: u64,
    /// Images per random cell; `None` matches the search budget.
    pub random_images: Option<usize>,
    pub random_policy: ArchivePolicy,
    pub mode: ExecMode,
}

impl ExperimentPlan {
    /// Desk-scale defaults: population 12, 20 generations, 10 repetitions.
    pub fn new(approaches: Vec<Approach>, output: impl Into<PathBuf>) -> Self {
        Self {
            approaches,
            repetitions: 10,
            settings: SearchSettings {
                generations: 20,
                ..SearchSettings::default()
            },
            fitness: FitnessParams::default(),
            pipeline: ScenePipeline::default(),
            output: output.into(),
            master_seed: 0,
            random_images: None,
            random_policy: ArchivePolicy::Threshold,
            mode: ExecMode::default(),
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.approaches.is_empty() {
            return Err(HarnessError::Plan("no approaches".into()));
        }
        if self.repetitions == 0 {
            return Err(HarnessError::Plan("repetitions must be at least 1".into()));
        }
        let mut ids: Vec<String> = self.approaches.iter().map(Approach::id).collect();
        ids.sort();
        if let Some(w) = ids.windows(2).find(|w| w[0] == w[1]) {
            return Err(HarnessError::Plan(format!("approach `{}` listed twice", w[0])));
        }
        self.settings
            .validate()
            .map_err(|e| HarnessError::Plan(e.to_string()))?;
        if let Some(t) = self.fitness.similarity_threshold {
            self.fitness.config(Variant::Flip, t).validate()?;
        } else if self.fitness.calibration_images < 2 {
            return Err(HarnessError::Plan("calibration needs at least 2 images".into()));
        }
        if self.random_images == Some(0) {
            return Err(HarnessError::Plan("random baseline needs at least one image".into()));
        }
        Ok(())
    }

    /// Random-cell budget; defaults to the search's evaluation count.
    pub fn random_budget(&self) -> usize {
        self.random_images.unwrap_or(self.settings.evaluation_budget())
    }

    pub fn cell_dir(&self, approach: &Approach, rep: usize) -> PathBuf {
        self.output.join(approach.id()).join(format!("rep-{rep}"))
    }
}

/// Seed of one `(approach, repetition)` cell. Depends only on the master
/// seed, the approach id and the repetition, so adding an approach leaves
/// other cells unchanged.
pub fn cell_seed(master_seed: u64, approach: &Approach, rep: usize) -> u64 {
    master_seed ^ derive(hash_bytes(approach.id().as_bytes()), rep as u64)
}

/// Paths and headline numbers of one persisted cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunArtifacts {
    pub approach: Approach,
    pub rep: usize,
    pub seed: u64,
    pub dir: PathBuf,
    pub archive_dir: PathBuf,
    pub run_log: PathBuf,
    pub metrics: PathBuf,
    pub manifest: PathBuf,
    pub evaluations: usize,
    pub archive_size: usize,
}

/// Everything a finished experiment produced.
#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub threshold: f64,
    pub cells: Vec<RunArtifacts>,
    /// Per-image rows of every cell, in report order.
    pub rows: Vec<ImageRecord>,
    pub summaries: Vec<CellSummary>,
}

/// Fail early if `dir` cannot hold artifacts.
pub fn ensure_writable(dir: &Path) -> Result<(), HarnessError> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    let probe = dir.join(".orbit-write-probe");
    std::fs::write(&probe, b"").map_err(|e| HarnessError::io(&probe, e))?;
    std::fs::remove_file(&probe).map_err(|e| HarnessError::io(&probe, e))
}

/// Shared, read-only inputs of every cell.
struct CellContext<'a> {
    plan: &'a ExperimentPlan,
    model: &'a dyn SegmentationModel,
    extractor: &'a dyn FeatureExtractor,
    threshold: f64,
    training: Option<Vec<ActivationVector>>,
}

impl CellContext<'_> {
    fn run(
        &self,
        approach: Approach,
        rep: usize,
    ) -> Result<(RunArtifacts, Vec<ImageRecord>, CellSummary), HarnessError> {
        let plan = self.plan;
        let config = plan.fitness.config(approach.variant(), self.threshold);
        let training = match approach.variant() {
            Variant::Sa => self.training.as_deref(),
            _ => None,
        };
        let evaluator = Evaluator::new(&config, plan.pipeline, self.model, self.extractor, training)?;
        let seed = cell_seed(plan.master_seed, &approach, rep);
        let settings = SearchSettings {
            master_seed: seed,
            ..plan.settings
        };
        let result = match approach {
            Approach::Search(_) => run_search(&settings, &evaluator, plan.mode),
            Approach::Random(_) => run_random(
                &evaluator,
                plan.random_budget(),
                settings.population_size,
                seed,
                plan.random_policy,
                plan.mode,
            ),
        };
        let dir = plan.cell_dir(&approach, rep);
        let cell = persist::Cell {
            approach,
            rep,
            seed,
            threshold: self.threshold,
            policy: if approach.is_random() {
                plan.random_policy
            } else {
                ArchivePolicy::Threshold
            },
            settings,
            config: &config,
            transform: plan.pipeline.transform,
        };
        match result {
            Ok(outcome) => write_cell(&dir, &cell, &outcome, None),
            Err(failure) => {
                let partial = SearchOutcome {
                    archive: failure.archive.clone(),
                    log: failure.log.clone(),
                    population: Vec::new(),
                    evaluations: failure.log.len(),
                };
                write_cell(&dir, &cell, &partial, Some(&failure.error.to_string()))?;
                Err(HarnessError::Run {
                    approach: approach.id(),
                    rep,
                    failure,
                })
            }
        }
    }
}

/// Similarity threshold for a plan: configured, or calibrated from random
/// images through the plan's pipeline.
pub fn plan_threshold(plan: &ExperimentPlan, extractor: &dyn FeatureExtractor) -> Result<f64, HarnessError> {
    match plan.fitness.similarity_threshold {
        Some(t) => Ok(t),
        None => Ok(calibrate_threshold(
            &plan.pipeline,
            extractor,
            plan.fitness.calibration_images,
            derive_str(plan.master_seed, "calibration"),
            plan.mode,
        )?),
    }
}

/// Run every `(approach, repetition)` cell, persist artifacts and write the
/// experiment reports.
pub fn run_experiment(
    plan: &ExperimentPlan,
    model: &dyn SegmentationModel,
    extractor: &dyn FeatureExtractor,
) -> Result<ExperimentOutcome, HarnessError> {
    plan.validate()?;
    ensure_writable(&plan.output)?;
    let threshold = plan_threshold(plan, extractor)?;
    let training = if plan.approaches.iter().any(|a| a.variant() == Variant::Sa) {
        Some(training_activations(
            &plan.pipeline,
            model,
            plan.fitness.training_images,
            derive_str(plan.master_seed, "training"),
            plan.mode,
        )?)
    } else {
        None
    };
    let ctx = CellContext {
        plan,
        model,
        extractor,
        threshold,
        training,
    };
    let cells: Vec<(Approach, usize)> = plan
        .approaches
        .iter()
        .flat_map(|&a| (0..plan.repetitions).map(move |r| (a, r)))
        .collect();
    let results = exec::map(plan.mode, &cells, |_, &(a, r)| ctx.run(a, r));

    let mut artifacts = Vec::with_capacity(cells.len());
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for result in results {
        let (art, cell_rows, summary) = result?;
        artifacts.push(art);
        rows.extend(cell_rows);
        summaries.push(summary);
    }
    report::sort_rows(&mut rows);
    summaries.sort_by(|a, b| (&a.variant, a.rep).cmp(&(&b.variant, b.rep)));
    let report = Report::new(rows.clone());
    write_report(&report, ReportFormat::Csv, &plan.output.join("report.csv"))?;
    write_report(&report, ReportFormat::Json, &plan.output.join("report.json"))?;
    write_summary(&summaries, &plan.output.join("summary.csv"))?;
    Ok(ExperimentOutcome {
        threshold,
        cells: artifacts,
        rows,
        summaries,
    })
}

/// A single random-baseline cell, persisted like any other.
pub fn run_random_baseline(
    plan: &ExperimentPlan,
    scored_by: Variant,
    rep: usize,
    model: &dyn SegmentationModel,
    extractor: &dyn FeatureExtractor,
) -> Result<RunArtifacts, HarnessError> {
    let single = ExperimentPlan {
        approaches: vec![Approach::Random(scored_by)],
        ..plan.clone()
    };
    single.validate()?;
    ensure_writable(&single.output)?;
    let threshold = plan_threshold(&single, extractor)?;
    let training = if scored_by == Variant::Sa {
        Some(training_activations(
            &single.pipeline,
            model,
            single.fitness.training_images,
            derive_str(single.master_seed, "training"),
            single.mode,
        )?)
    } else {
        None
    };
    let ctx = CellContext {
        plan: &single,
        model,
        extractor,
        threshold,
        training,
    };
    Ok(ctx.run(Approach::Random(scored_by), rep)?.0)
}

#[cfg(test)]
mod tests;
