// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::grid::Image;
use crate::metrics::{FeatureVector, GridStatsExtractor};
use crate::model::{ModelError, Prediction, ReferenceModel, ReferenceModelConfig};
use crate::scene::SceneRenderer;
use crate::stats::EffectClass;

const SIDE: usize = 32;

fn model() -> ReferenceModel {
    ReferenceModel::new(ReferenceModelConfig {
        height: SIDE,
        width: SIDE,
        ..Default::default()
    })
    .unwrap()
}

fn small_plan(approaches: Vec<Approach>, out: &Path) -> ExperimentPlan {
    let mut plan = ExperimentPlan::new(approaches, out);
    plan.repetitions = 3;
    plan.settings.population_size = 4;
    plan.settings.generations = 2;
    plan.fitness.calibration_images = 40;
    plan.fitness.training_images = 20;
    plan.pipeline.renderer = SceneRenderer {
        height: SIDE,
        width: SIDE,
    };
    plan.master_seed = 17;
    plan
}

fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn row(rep: usize, genome: &str, raw: f64) -> ImageRecord {
    ImageRecord {
        variant: "flip".into(),
        rep,
        generation: 0,
        individual: 0,
        slot: 0,
        genome: genome.into(),
        genome_seed: 1,
        raw_metric: raw,
        gated_accuracy: raw,
        ground_truth_miou: 0.5,
        feature_distance_to_nearest_in_archive: None,
    }
}

#[test]
fn approach_ids_round_trip() {
    for a in [
        Approach::Search(Variant::Flip),
        Approach::Search(Variant::GroundTruth),
        Approach::Random(Variant::Flip),
        Approach::Random(Variant::Mcd),
    ] {
        assert_eq!(a.id().parse::<Approach>().unwrap(), a);
    }
    assert_eq!(Approach::Random(Variant::Flip).id(), "random");
    assert!("bogus".parse::<Approach>().is_err());
}

#[test]
fn plan_validation() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = small_plan(vec![Approach::Search(Variant::Flip)], dir.path());
    assert!(plan.validate().is_ok());
    plan.repetitions = 0;
    assert!(plan.validate().is_err());
    plan.repetitions = 1;
    plan.approaches.push(Approach::Search(Variant::Flip));
    assert!(plan.validate().is_err());
    plan.approaches.pop();
    plan.settings.population_size = 5;
    assert!(plan.validate().is_err());
}

#[test]
fn cell_seeds_depend_only_on_their_cell() {
    let a = Approach::Search(Variant::Flip);
    let b = Approach::Search(Variant::Noise);
    assert_eq!(cell_seed(9, &a, 2), cell_seed(9, &a, 2));
    assert_ne!(cell_seed(9, &a, 2), cell_seed(9, &a, 3));
    assert_ne!(cell_seed(9, &a, 2), cell_seed(9, &b, 2));
    assert_ne!(cell_seed(9, &a, 2), cell_seed(10, &a, 2));
}

#[test]
fn experiment_is_deterministic_and_replayable() {
    let m = model();
    let x = GridStatsExtractor::default();
    let d1 = tempfile::tempdir().unwrap();
    let d2 = tempfile::tempdir().unwrap();
    let approaches = vec![Approach::Search(Variant::Flip), Approach::Random(Variant::Flip)];
    let p1 = small_plan(approaches.clone(), d1.path());
    let p2 = small_plan(approaches, d2.path());
    let o1 = run_experiment(&p1, &m, &x).unwrap();
    let o2 = run_experiment(&p2, &m, &x).unwrap();
    assert_eq!(o1.cells.len(), 6);
    assert_eq!(tree(d1.path()), tree(d2.path()));
    assert_eq!(o1.rows, o2.rows);

    for cell in &o1.cells {
        assert_eq!(cell.evaluations, p1.settings.evaluation_budget());
        let cfg = p1.fitness.config(cell.approach.variant(), o1.threshold);
        let e = Evaluator::new(&cfg, p1.pipeline, &m, &x, None).unwrap();
        let manifest = verify_cell(&cell.dir, &e, ExecMode::Parallel).unwrap();
        assert_eq!(manifest.status, "complete");
        assert_eq!(manifest.files.len(), 2 * cell.archive_size + 2);
    }
    for r in &o1.rows {
        assert!((0.0..=1.0).contains(&r.ground_truth_miou));
    }
    let report = read_report_json(&p1.output.join("report.json")).unwrap();
    assert_eq!(report.rows, o1.rows);
    assert_eq!(read_table(&p1.output.join("report.csv")).unwrap(), o1.rows);

    // tampering is detected
    let cell = &o1.cells[0];
    std::fs::write(&cell.metrics, b"variant\n").unwrap();
    let cfg = p1.fitness.config(Variant::Flip, o1.threshold);
    let e = Evaluator::new(&cfg, p1.pipeline, &m, &x, None).unwrap();
    assert!(verify_cell(&cell.dir, &e, ExecMode::Parallel).is_err());
}

#[test]
fn surprise_and_dropout_cells_run() {
    let m = model();
    let x = GridStatsExtractor::default();
    let d = tempfile::tempdir().unwrap();
    let mut plan = small_plan(
        vec![Approach::Search(Variant::Sa), Approach::Search(Variant::Mcd)],
        d.path(),
    );
    plan.repetitions = 1;
    plan.fitness.similarity_threshold = Some(0.5);
    let out = run_experiment(&plan, &m, &x).unwrap();
    assert_eq!(out.threshold, 0.5);
    assert_eq!(out.cells.len(), 2);
    assert!(d.path().join("sa/rep-0/manifest.json").exists());
    assert!(d.path().join("summary.csv").exists());
}

#[test]
fn unwritable_output_fails_before_running() {
    let d = tempfile::tempdir().unwrap();
    let blocker = d.path().join("file");
    std::fs::write(&blocker, b"x").unwrap();
    let plan = small_plan(vec![Approach::Search(Variant::Flip)], &blocker.join("out"));
    let err = run_experiment(&plan, &model(), &GridStatsExtractor::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Io { .. }), "{err}");
}

#[test]
fn random_baseline_matches_the_search_budget() {
    let d = tempfile::tempdir().unwrap();
    let mut plan = small_plan(vec![Approach::Search(Variant::Flip)], d.path());
    plan.fitness.similarity_threshold = Some(0.5);
    let m = model();
    let x = GridStatsExtractor::default();
    let a = run_random_baseline(&plan, Variant::Flip, 0, &m, &x).unwrap();
    assert_eq!(a.evaluations, plan.settings.evaluation_budget());
    let first = tree(d.path());
    run_random_baseline(&plan, Variant::Flip, 0, &m, &x).unwrap();
    assert_eq!(tree(d.path()), first);

    plan.random_policy = ArchivePolicy::KeepAll;
    let all = run_random_baseline(&plan, Variant::Flip, 0, &m, &x).unwrap();
    assert!(all.archive_size >= a.archive_size);
}

struct FailingModel {
    inner: ReferenceModel,
    calls: AtomicUsize,
}

impl SegmentationModel for FailingModel {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn input_dims(&self) -> (usize, usize) {
        self.inner.input_dims()
    }
    fn predict(&self, image: &Image) -> Result<Prediction, ModelError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= 4 {
            return Err(ModelError::Remote("out of memory".into()));
        }
        self.inner.predict(image)
    }
    fn predict_with_dropout(&self, image: &Image, seed: u64) -> Result<Prediction, ModelError> {
        self.inner.predict_with_dropout(image, seed)
    }
    fn activations(&self, image: &Image) -> Result<crate::model::ActivationVector, ModelError> {
        self.inner.activations(image)
    }
}

#[test]
fn failed_cells_persist_their_partial_archive() {
    let d = tempfile::tempdir().unwrap();
    let mut plan = small_plan(vec![Approach::Search(Variant::GroundTruth)], d.path());
    plan.repetitions = 1;
    plan.fitness.similarity_threshold = Some(0.5);
    plan.mode = ExecMode::Sequential;
    let m = FailingModel {
        inner: model(),
        calls: AtomicUsize::new(0),
    };
    let err = run_experiment(&plan, &m, &GridStatsExtractor::default()).unwrap_err();
    assert!(matches!(err, HarnessError::Run { .. }), "{err}");
    let manifest: CellManifest =
        serde_json::from_slice(&std::fs::read(d.path().join("ground-truth/rep-0/manifest.json")).unwrap()).unwrap();
    assert!(manifest.status.starts_with("failed"));
    assert_eq!(manifest.evaluations, 4);
    assert!(manifest.archive_size >= 1);
}

#[test]
fn diversity_examples() {
    let fv = |v: &[f64]| FeatureVector { values: v.to_vec() };
    assert_eq!(
        archive_diversity(&[fv(&[1.0, 1.0]), fv(&[1.0, 1.0])]).unwrap(),
        vec![0.0, 0.0]
    );
    let d = archive_diversity(&[fv(&[0.0, 0.0]), fv(&[3.0, 4.0]), fv(&[100.0, 0.0])]).unwrap();
    assert_eq!(&d[..2], &[5.0, 5.0]);
    // nearest to (100, 0) is (3, 4)
    let oracle = (97.0f64 * 97.0 + 4.0 * 4.0).sqrt();
    assert!((d[2] - oracle).abs() < 1e-12);
    assert!(archive_diversity(&[fv(&[0.0])]).is_err());
}

#[test]
fn comparison_examples() {
    let a: Vec<ImageRecord> = (0..4).map(|i| row(i, "0.5", i as f64)).collect();
    let same = compare_runs(&a, &a, MetricColumn::RawMetric, false).unwrap();
    assert_eq!((same.effect, same.effect_class), (0.5, EffectClass::Negligible));
    let high: Vec<ImageRecord> = (0..4).map(|i| row(i, "0.5", 10.0 + i as f64)).collect();
    let low = compare_runs(&a, &high, MetricColumn::RawMetric, false).unwrap();
    assert_eq!((low.effect, low.effect_class), (0.0, EffectClass::Large));

    let x = [row(0, "a", 1.0), row(1, "b", 0.0), row(2, "c", 3.0)];
    let y = [row(2, "c", 0.0), row(0, "a", 0.0), row(1, "b", 2.0)];
    let paired = compare_runs(&x, &y, MetricColumn::RawMetric, true).unwrap();
    assert!((paired.effect - 2.0 / 3.0).abs() < 1e-15);
    let misaligned = [row(0, "a", 1.0), row(1, "z", 0.0), row(2, "c", 3.0)];
    assert!(compare_runs(&x, &misaligned, MetricColumn::RawMetric, true).is_err());
    assert!(compare_runs(&x, &y[..2], MetricColumn::RawMetric, true).is_err());
    assert_eq!(
        "diversity".parse::<MetricColumn>().unwrap(),
        MetricColumn::NearestDistance
    );
}

#[test]
fn report_formats() {
    let d = tempfile::tempdir().unwrap();
    let empty = Report::new(Vec::new());
    let csv_path = d.path().join("r.csv");
    write_report(&empty, ReportFormat::Csv, &csv_path).unwrap();
    let text = std::fs::read_to_string(&csv_path).unwrap();
    assert_eq!(text.lines().count(), 1);
    assert!(text.starts_with("variant,rep,generation,individual,slot,genome"));

    let mut rows = vec![row(1, "0.1;0.2", 0.3), row(0, "0.25;1.0", 1.0 / 3.0)];
    rows[0].feature_distance_to_nearest_in_archive = Some(0.1 + 0.2);
    let report = Report::new(rows);
    assert_eq!(report.rows[0].rep, 0);
    let json_path = d.path().join("r.json");
    write_report(&report, ReportFormat::Json, &json_path).unwrap();
    let first = std::fs::read(&json_path).unwrap();
    assert_eq!(read_report_json(&json_path).unwrap(), report);
    write_report(&report, ReportFormat::Json, &json_path).unwrap();
    assert_eq!(std::fs::read(&json_path).unwrap(), first);
    write_report(&report, ReportFormat::Csv, &csv_path).unwrap();
    assert_eq!(read_table(&csv_path).unwrap(), report.rows);
}
