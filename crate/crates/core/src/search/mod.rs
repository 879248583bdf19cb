// SPDX-License-Identifier: Apache-2.0

//! Archive-extended NSGA-II over scene genomes.
//!
//! Each generation is evaluated against a snapshot of the archive taken
//! before any update, so evaluations are independent and may run in
//! parallel. Archive updates then run serially in individual order.
//! Generation 0 is the random initial population; every later generation is
//! one batch of offspring, so a run performs `population × (generations + 1)`
//! evaluations.

pub mod archive;
pub mod audit;
pub mod nsga;
pub mod operators;

use std::io::{BufRead, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::exec::{self, ExecMode};
use crate::fitness::{Evaluation, Evaluator, FitnessError, ObjectivePair, ScenePipeline};
use crate::metrics::MetricsError;
use crate::scene::Genome;
use crate::seeds::{derive, derive_str, rng};

pub use archive::{Archive, ArchiveEntry, ArchiveEvent, ArchivePolicy};
pub use audit::{audit_run, check_front_zero, replay_archive, AuditError, AuditReport, ReplayStep};
pub use nsga::{
    binary_tournament, crowding_distance, dominates, fast_nondominated_sort, rank_and_crowding, select_survivors,
};
pub use operators::{polynomial_mutation, polynomial_mutation_with, sbx_crossover, sbx_crossover_with};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SearchError {
    #[error("invalid search settings: {0}")]
    Settings(String),
    #[error("evaluation failed at generation {generation}, individual {individual}: {source}")]
    Evaluation {
        generation: usize,
        individual: usize,
        #[source]
        source: FitnessError,
    },
    #[error("archive update failed: {0}")]
    Archive(#[from] MetricsError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSettings {
    pub population_size: usize,
    pub generations: usize,
    /// Per-gene mutation probability.
    pub mutation_probability: f64,
    /// Per-pair crossover probability.
    pub crossover_probability: f64,
    pub sbx_eta: f64,
    pub mutation_eta: f64,
    pub master_seed: u64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        Self {
            population_size: 12,
            generations: 100,
            mutation_probability: 0.3,
            crossover_probability: 0.7,
            sbx_eta: 15.0,
            mutation_eta: 20.0,
            master_seed: 0,
        }
    }
}

impl SearchSettings {
    pub fn validate(&self) -> Result<(), SearchError> {
        let n = self.population_size;
        if n < 4 || !n.is_multiple_of(2) {
            return Err(SearchError::Settings(format!(
                "population size must be even and at least 4, got {n}"
            )));
        }
        for (name, p) in [
            ("mutation probability", self.mutation_probability),
            ("crossover probability", self.crossover_probability),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(SearchError::Settings(format!("{name} {p} outside [0, 1]")));
            }
        }
        for (name, eta) in [("sbx eta", self.sbx_eta), ("mutation eta", self.mutation_eta)] {
            if !(eta.is_finite() && eta >= 0.0) {
                return Err(SearchError::Settings(format!(
                    "{name} must be finite and non-negative, got {eta}"
                )));
            }
        }
        Ok(())
    }

    /// Evaluations performed by a full run.
    pub fn evaluation_budget(&self) -> usize {
        self.population_size * (self.generations + 1)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Individual {
    pub genome: Genome,
    pub objectives: ObjectivePair,
    pub rank: usize,
    /// May be `+∞` for boundary solutions.
    pub crowding: f64,
}

/// One line of the run log: one evaluation and what the archive did with it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLogRecord {
    pub generation: usize,
    pub individual: usize,
    pub genome: Vec<f64>,
    pub genome_seed: u64,
    pub f_accuracy_raw: f64,
    pub f_accuracy_gated: f64,
    pub f_similarity: f64,
    pub archive_event: ArchiveEvent,
    /// Non-domination rank within this generation's evaluated batch.
    pub rank: usize,
    pub ground_truth_miou: f64,
}

impl RunLogRecord {
    pub fn genome(&self) -> Genome {
        Genome {
            genes: self.genome.clone(),
            seed: self.genome_seed,
        }
    }

    pub fn objectives(&self) -> [f64; 2] {
        [self.f_accuracy_gated, self.f_similarity]
    }

    pub fn gated(&self) -> bool {
        self.archive_event == ArchiveEvent::Gated
    }
}

pub fn write_run_log<W: Write>(mut out: W, log: &[RunLogRecord]) -> std::io::Result<()> {
    for record in log {
        serde_json::to_writer(&mut out, record)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_run_log<R: BufRead>(input: R) -> std::io::Result<Vec<RunLogRecord>> {
    let mut log = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        log.push(serde_json::from_str(&line)?);
    }
    Ok(log)
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub archive: Archive,
    pub log: Vec<RunLogRecord>,
    /// Final parent population.
    pub population: Vec<Individual>,
    pub evaluations: usize,
}

/// A failed run together with what it had produced so far.
#[derive(Clone, Debug)]
pub struct SearchFailure {
    pub error: SearchError,
    pub archive: Archive,
    pub log: Vec<RunLogRecord>,
}

impl std::fmt::Display for SearchFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (archive holds {} entries)", self.error, self.archive.len())
    }
}

impl std::error::Error for SearchFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Run state threaded through generations.
struct Recorder {
    archive: Archive,
    log: Vec<RunLogRecord>,
    evaluations: usize,
}

impl Recorder {
    fn fail(self, error: SearchError) -> Box<SearchFailure> {
        Box::new(SearchFailure {
            error,
            archive: self.archive,
            log: self.log,
        })
    }

    /// Evaluate one batch against the current archive snapshot, then apply
    /// archive updates and log records in individual order. On error nothing
    /// from the batch is kept.
    fn generation(
        &mut self,
        evaluator: &Evaluator<'_>,
        genomes: &[Genome],
        generation: usize,
        run_seed: u64,
        mode: ExecMode,
    ) -> Result<Vec<Evaluation>, SearchError> {
        let snapshot = self.archive.features();
        let results = exec::map(mode, genomes, |_, g| evaluator.evaluate(g, &snapshot, run_seed));
        let mut evals = Vec::with_capacity(results.len());
        for (individual, r) in results.into_iter().enumerate() {
            evals.push(r.map_err(|source| SearchError::Evaluation {
                generation,
                individual,
                source,
            })?);
        }
        let objectives: Vec<[f64; 2]> = evals.iter().map(|e| e.objectives.as_array()).collect();
        let ranks = nsga::ranks_from_fronts(&fast_nondominated_sort(&objectives), evals.len());
        let mut archive = self.archive.clone();
        let mut records = Vec::with_capacity(evals.len());
        for (individual, e) in evals.iter().enumerate() {
            let event = archive.update(e, generation, individual)?;
            records.push(RunLogRecord {
                generation,
                individual,
                genome: e.genome.genes.clone(),
                genome_seed: e.genome.seed,
                f_accuracy_raw: e.objectives.raw_metric,
                f_accuracy_gated: e.objectives.f_accuracy,
                f_similarity: e.objectives.f_similarity,
                archive_event: event,
                rank: ranks[individual],
                ground_truth_miou: e.ground_truth_miou,
            });
        }
        self.archive = archive;
        self.log.extend(records);
        self.evaluations += evals.len();
        Ok(evals)
    }
}

fn individuals(genomes: Vec<Genome>, objectives: Vec<ObjectivePair>) -> Vec<Individual> {
    let arrays: Vec<[f64; 2]> = objectives.iter().map(ObjectivePair::as_array).collect();
    let (rank, crowding) = rank_and_crowding(&arrays);
    genomes
        .into_iter()
        .zip(objectives)
        .enumerate()
        .map(|(i, (genome, objectives))| Individual {
            genome,
            objectives,
            rank: rank[i],
            crowding: crowding[i],
        })
        .collect()
}

/// Offspring of one generation. Random draws are consumed in a fixed order:
/// per pair, two tournaments (two index draws each), one crossover, then
/// mutation of the first and second child.
pub fn make_offspring(settings: &SearchSettings, parents: &[Individual], generation: usize) -> Vec<Genome> {
    let rank: Vec<usize> = parents.iter().map(|p| p.rank).collect();
    let crowding: Vec<f64> = parents.iter().map(|p| p.crowding).collect();
    let mut r = rng(derive(derive_str(settings.master_seed, "variation"), generation as u64));
    let mut out = Vec::with_capacity(settings.population_size);
    while out.len() < settings.population_size {
        let a = binary_tournament(&rank, &crowding, &mut r);
        let b = binary_tournament(&rank, &crowding, &mut r);
        let (c1, c2) = sbx_crossover_with(
            &parents[a].genome,
            &parents[b].genome,
            settings.sbx_eta,
            settings.crossover_probability,
            &mut r,
        );
        for child in [c1, c2] {
            let mut m = polynomial_mutation_with(&child, settings.mutation_eta, settings.mutation_probability, &mut r);
            // the scene seed is a discrete gene: random-reset mutation
            let fire: f64 = r.random();
            let fresh: u64 = r.random();
            if fire < settings.mutation_probability {
                m.seed = fresh;
            }
            out.push(m);
        }
    }
    out.truncate(settings.population_size);
    out
}

/// Seed of the evaluation stream for a run.
pub fn evaluation_seed(master_seed: u64) -> u64 {
    derive_str(master_seed, "evaluation")
}

/// The search loop. On failure the archive and log built so far are
/// returned inside the error.
pub fn run_search(
    settings: &SearchSettings,
    evaluator: &Evaluator<'_>,
    mode: ExecMode,
) -> Result<SearchOutcome, Box<SearchFailure>> {
    let mut rec = Recorder {
        archive: Archive::new(evaluator.config.similarity_threshold),
        log: Vec::new(),
        evaluations: 0,
    };
    if let Err(e) = settings.validate() {
        return Err(rec.fail(e));
    }
    let run_seed = evaluation_seed(settings.master_seed);
    let initial = ScenePipeline::random_genomes(
        settings.population_size,
        derive_str(settings.master_seed, "initial-population"),
    );
    let evals = match rec.generation(evaluator, &initial, 0, run_seed, mode) {
        Ok(e) => e,
        Err(e) => return Err(rec.fail(e)),
    };
    let mut population = individuals(initial, evals.into_iter().map(|e| e.objectives).collect());

    for generation in 1..=settings.generations {
        let offspring = make_offspring(settings, &population, generation);
        let evals = match rec.generation(evaluator, &offspring, generation, run_seed, mode) {
            Ok(e) => e,
            Err(e) => return Err(rec.fail(e)),
        };
        let mut genomes: Vec<Genome> = population.iter().map(|p| p.genome.clone()).collect();
        let mut objectives: Vec<ObjectivePair> = population.iter().map(|p| p.objectives).collect();
        genomes.extend(offspring);
        objectives.extend(evals.into_iter().map(|e| e.objectives));
        let combined = individuals(genomes, objectives);
        let arrays: Vec<[f64; 2]> = combined.iter().map(|c| c.objectives.as_array()).collect();
        population = select_survivors(&arrays, settings.population_size)
            .into_iter()
            .map(|i| combined[i].clone())
            .collect();
    }

    Ok(SearchOutcome {
        archive: rec.archive,
        log: rec.log,
        population,
        evaluations: rec.evaluations,
    })
}

/// Uniform random genomes evaluated in batches of `batch_size`, with the
/// same snapshot-then-update archive handling as the search.
pub fn run_random(
    evaluator: &Evaluator<'_>,
    n_images: usize,
    batch_size: usize,
    seed: u64,
    policy: ArchivePolicy,
    mode: ExecMode,
) -> Result<SearchOutcome, Box<SearchFailure>> {
    let mut rec = Recorder {
        archive: Archive::with_policy(evaluator.config.similarity_threshold, policy),
        log: Vec::new(),
        evaluations: 0,
    };
    if n_images == 0 || batch_size == 0 {
        return Err(rec.fail(SearchError::Settings(
            "random baseline needs at least one image and a positive batch size".into(),
        )));
    }
    let run_seed = evaluation_seed(seed);
    let genomes = ScenePipeline::random_genomes(n_images, derive_str(seed, "random-genomes"));
    for (batch, chunk) in genomes.chunks(batch_size).enumerate() {
        if let Err(e) = rec.generation(evaluator, chunk, batch, run_seed, mode) {
            return Err(rec.fail(e));
        }
    }
    Ok(SearchOutcome {
        archive: rec.archive,
        log: rec.log,
        population: Vec::new(),
        evaluations: rec.evaluations,
    })
}

#[cfg(test)]
mod tests;
