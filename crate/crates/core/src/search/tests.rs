// SPDX-License-Identifier: Apache-2.0

use std::sync::atomic::{AtomicUsize, Ordering};

use super::*;
use crate::fitness::{FitnessConfig, Variant};
use crate::grid::Image;
use crate::metrics::GridStatsExtractor;
use crate::model::{ActivationVector, ModelError, Prediction, ReferenceModel, ReferenceModelConfig, SegmentationModel};
use crate::scene::SceneRenderer;

const SIDE: usize = 32;

fn model() -> ReferenceModel {
    ReferenceModel::new(ReferenceModelConfig {
        height: SIDE,
        width: SIDE,
        ..Default::default()
    })
    .unwrap()
}

fn pipeline() -> ScenePipeline {
    ScenePipeline {
        renderer: SceneRenderer {
            height: SIDE,
            width: SIDE,
        },
        ..Default::default()
    }
}

fn settings(gens: usize, seed: u64) -> SearchSettings {
    SearchSettings {
        population_size: 8,
        generations: gens,
        master_seed: seed,
        ..Default::default()
    }
}

fn flip_config() -> FitnessConfig {
    FitnessConfig::for_variant(Variant::Flip).with_threshold(0.5)
}

#[test]
fn settings_defaults_and_validation() {
    let s = SearchSettings::default();
    assert_eq!((s.population_size, s.generations), (12, 100));
    assert_eq!((s.mutation_probability, s.crossover_probability), (0.3, 0.7));
    assert_eq!((s.sbx_eta, s.mutation_eta), (15.0, 20.0));
    assert!(s.validate().is_ok());
    for bad in [
        SearchSettings {
            population_size: 7,
            ..s
        },
        SearchSettings {
            population_size: 2,
            ..s
        },
        SearchSettings {
            mutation_probability: 1.5,
            ..s
        },
        SearchSettings {
            crossover_probability: -0.1,
            ..s
        },
    ] {
        assert!(bad.validate().is_err(), "{bad:?}");
    }
}

#[test]
fn zero_generations_evaluates_only_the_initial_population() {
    let (m, x, cfg) = (model(), GridStatsExtractor::default(), flip_config());
    let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
    let out = run_search(&settings(0, 1), &e, ExecMode::Parallel).unwrap();
    assert_eq!(out.evaluations, 8);
    assert_eq!(out.log.len(), 8);
    assert!(out.log.iter().all(|r| r.generation == 0));
    assert!(out.archive.entries().iter().all(|a| a.generation == 0));
}

#[test]
fn run_is_deterministic_and_mode_independent() {
    let (m, x, cfg) = (model(), GridStatsExtractor::default(), flip_config());
    let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
    let s = settings(3, 99);
    let a = run_search(&s, &e, ExecMode::Parallel).unwrap();
    let b = run_search(&s, &e, ExecMode::Sequential).unwrap();
    assert_eq!(a.log, b.log);
    assert_eq!(a.archive, b.archive);
    assert_eq!(a.population, b.population);
    assert_eq!(a.evaluations, s.evaluation_budget());

    let mut la = Vec::new();
    let mut lb = Vec::new();
    write_run_log(&mut la, &a.log).unwrap();
    write_run_log(&mut lb, &b.log).unwrap();
    assert_eq!(la, lb);
    assert_eq!(read_run_log(&la[..]).unwrap(), a.log);

    let c = run_search(&settings(3, 100), &e, ExecMode::Parallel).unwrap();
    assert_ne!(a.log, c.log);
}

#[test]
fn runs_pass_the_replay_audit() {
    let (m, x) = (model(), GridStatsExtractor::default());
    for variant in [Variant::Flip, Variant::GroundTruth] {
        let cfg = FitnessConfig::for_variant(variant).with_threshold(0.5);
        let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
        let out = run_search(&settings(3, 5), &e, ExecMode::Parallel).unwrap();
        let report = audit_run(&out.log, &out.archive, &e, ExecMode::Parallel).unwrap();
        assert_eq!(
            report.appended + report.replaced + report.discarded + report.gated,
            out.log.len()
        );
        assert_eq!(report.appended, out.archive.len());
        check_front_zero(&out.log).unwrap();
        assert!(out
            .archive
            .entries()
            .iter()
            .all(|a| a.f_accuracy < crate::fitness::GATE_VALUE));
    }
}

#[test]
fn survivors_are_ranked_by_crowded_comparison() {
    let (m, x, cfg) = (model(), GridStatsExtractor::default(), flip_config());
    let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
    let out = run_search(&settings(2, 8), &e, ExecMode::Parallel).unwrap();
    let p = &out.population;
    assert_eq!(p.len(), 8);
    for w in p.windows(2) {
        assert!(w[0].rank <= w[1].rank);
        if w[0].rank == w[1].rank {
            assert!(w[0].crowding >= w[1].crowding);
        }
    }
}

#[test]
fn offspring_follow_the_fixed_draw_order() {
    let s = settings(1, 3);
    let parents: Vec<Individual> = ScenePipeline::random_genomes(8, 4)
        .into_iter()
        .enumerate()
        .map(|(i, genome)| Individual {
            genome,
            objectives: crate::fitness::ObjectivePair {
                f_accuracy: i as f64 / 10.0,
                f_similarity: 0.0,
                raw_metric: 0.0,
                gated: false,
                direction: crate::fitness::Direction::MinimizeRaw,
            },
            rank: i,
            crowding: 0.0,
        })
        .collect();
    let a = make_offspring(&s, &parents, 1);
    assert_eq!(a, make_offspring(&s, &parents, 1));
    assert_ne!(a, make_offspring(&s, &parents, 2));
    assert_eq!(a.len(), 8);
    let inherited = |kids: &[Genome]| {
        kids.iter()
            .filter(|c| parents.iter().any(|p| p.genome.seed == c.seed))
            .count()
    };
    let mut frozen = s;
    frozen.mutation_probability = 0.0;
    assert_eq!(inherited(&make_offspring(&frozen, &parents, 1)), 8);
    let mut reset = s;
    reset.mutation_probability = 1.0;
    assert_eq!(inherited(&make_offspring(&reset, &parents, 1)), 0);
}

/// Succeeds for the first `budget` predictions, then fails.
struct FailingModel {
    inner: ReferenceModel,
    calls: AtomicUsize,
    budget: usize,
}

impl SegmentationModel for FailingModel {
    fn num_classes(&self) -> usize {
        self.inner.num_classes()
    }
    fn input_dims(&self) -> (usize, usize) {
        self.inner.input_dims()
    }
    fn predict(&self, image: &Image) -> Result<Prediction, ModelError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) >= self.budget {
            return Err(ModelError::Remote("model crashed".into()));
        }
        self.inner.predict(image)
    }
    fn predict_with_dropout(&self, image: &Image, seed: u64) -> Result<Prediction, ModelError> {
        self.inner.predict_with_dropout(image, seed)
    }
    fn activations(&self, image: &Image) -> Result<ActivationVector, ModelError> {
        self.inner.activations(image)
    }
}

#[test]
fn failure_keeps_the_partial_archive() {
    let m = FailingModel {
        inner: model(),
        calls: AtomicUsize::new(0),
        budget: 8,
    };
    let x = GridStatsExtractor::default();
    let cfg = FitnessConfig::for_variant(Variant::GroundTruth).with_threshold(0.5);
    let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
    let err = run_search(&settings(3, 2), &e, ExecMode::Sequential).unwrap_err();
    assert!(matches!(
        err.error,
        SearchError::Evaluation {
            generation: 1,
            individual: 0,
            ..
        }
    ));
    assert_eq!(err.log.len(), 8);
    assert!(!err.archive.is_empty());
}

#[test]
fn random_runs_match_budget_and_policy() {
    let (m, x, cfg) = (model(), GridStatsExtractor::default(), flip_config());
    let e = Evaluator::new(&cfg, pipeline(), &m, &x, None).unwrap();
    let filtered = run_random(&e, 20, 8, 4, ArchivePolicy::Threshold, ExecMode::Parallel).unwrap();
    assert_eq!(filtered.evaluations, 20);
    assert_eq!(filtered.log.last().unwrap().generation, 2);
    audit_run(&filtered.log, &filtered.archive, &e, ExecMode::Parallel).unwrap();

    let all = run_random(&e, 20, 8, 4, ArchivePolicy::KeepAll, ExecMode::Parallel).unwrap();
    let relevant = all.log.iter().filter(|r| !r.gated()).count();
    assert_eq!(all.archive.len(), relevant);
    assert!(all.archive.len() >= filtered.archive.len());
    assert!(run_random(&e, 0, 8, 4, ArchivePolicy::Threshold, ExecMode::Parallel).is_err());
}
