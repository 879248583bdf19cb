// SPDX-License-Identifier: Apache-2.0

//! The two search objectives, both minimized.
//!
//! `f_accuracy` is a gated oracle metric: inputs judged irrelevant (sky
//! dominated) score [`GATE_VALUE`], everything else scores the variant's
//! metric. Consistency metrics (flip, noise, ground-truth mIoU) are low for
//! failure-revealing inputs and pass through unchanged; surprise and dropout
//! variance are high for such inputs and enter negated. `f_similarity`
//! rewards distance from the closest archived image.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::exec::{self, ExecMode};
use crate::grid::{Image, LabelGrid};
use crate::metrics::{self, feature_distance, FeatureExtractor, FeatureVector, MetricsError};
use crate::model::{ActivationVector, ModelError, Prediction, SegmentationModel};
use crate::scene::{
    self, genome_to_scene, Genome, LabeledScene, RealismTransform, SceneConfig, SceneError, SceneRenderer, TerrainClass,
};
use crate::seeds::{derive, derive_str, hash_reals, rng};

/// Accuracy fitness of an irrelevant input; strictly worse than any
/// relevant input's value.
pub const GATE_VALUE: f64 = 2.0;

/// Similarity fitness of an input too close to the archive.
pub const TOO_SIMILAR: f64 = 2.0;

/// Default similarity threshold, tuned for ImageNet features. The built-in
/// extractor lives on a different scale; see [`calibrate_threshold`].
pub const DEFAULT_SIMILARITY_THRESHOLD: f64 = 12.0;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum FitnessError {
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("invalid fitness configuration: {0}")]
    Config(String),
    #[error("ground-truth relevance requested but no mask is available")]
    MissingMask,
    #[error("the surprise variant needs a training activation corpus")]
    MissingTrainingCorpus,
    #[error("threshold calibration needs at least 2 images, got {0}")]
    TooFewImages(usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Flip,
    Noise,
    Sa,
    Mcd,
    GroundTruth,
}

impl Variant {
    pub const ALL: [Variant; 5] = [
        Variant::Flip,
        Variant::Noise,
        Variant::Sa,
        Variant::Mcd,
        Variant::GroundTruth,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Variant::Flip => "flip",
            Variant::Noise => "noise",
            Variant::Sa => "sa",
            Variant::Mcd => "mcd",
            Variant::GroundTruth => "ground-truth",
        }
    }

    pub fn direction(self) -> Direction {
        match self {
            Variant::Sa | Variant::Mcd => Direction::MaximizeRaw,
            Variant::Flip | Variant::Noise | Variant::GroundTruth => Direction::MinimizeRaw,
        }
    }

    pub fn uses_ground_truth(self) -> bool {
        self == Variant::GroundTruth
    }
}

impl FromStr for Variant {
    type Err = FitnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "flip" => Ok(Variant::Flip),
            "noise" => Ok(Variant::Noise),
            "sa" => Ok(Variant::Sa),
            "mcd" => Ok(Variant::Mcd),
            "ground-truth" | "ground_truth" => Ok(Variant::GroundTruth),
            other => Err(FitnessError::Config(format!("unknown variant `{other}`"))),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

/// Whether failure-revealing inputs have low or high raw metric values.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Direction {
    MinimizeRaw,
    MaximizeRaw,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RelevanceSource {
    Prediction,
    GroundTruth,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitnessConfig {
    pub variant: Variant,
    pub sky_threshold: f64,
    pub noise_variance: f64,
    pub mcd_passes: usize,
    pub similarity_threshold: f64,
    pub relevance_source: RelevanceSource,
}

impl FitnessConfig {
    /// Defaults for `variant`; only the ground-truth baseline judges
    /// relevance from the mask.
    pub fn for_variant(variant: Variant) -> Self {
        Self {
            variant,
            sky_threshold: 0.7,
            noise_variance: 0.1,
            mcd_passes: 5,
            similarity_threshold: DEFAULT_SIMILARITY_THRESHOLD,
            relevance_source: if variant.uses_ground_truth() {
                RelevanceSource::GroundTruth
            } else {
                RelevanceSource::Prediction
            },
        }
    }

    pub fn with_threshold(mut self, t: f64) -> Self {
        self.similarity_threshold = t;
        self
    }

    pub fn validate(&self) -> Result<(), FitnessError> {
        let bad = |msg: String| Err(FitnessError::Config(msg));
        if !(self.sky_threshold > 0.0 && self.sky_threshold <= 1.0) {
            return bad(format!("sky threshold {} outside (0, 1]", self.sky_threshold));
        }
        if !(self.similarity_threshold > 0.0 && self.similarity_threshold.is_finite()) {
            return bad(format!(
                "similarity threshold {} must be positive",
                self.similarity_threshold
            ));
        }
        if !(self.noise_variance >= 0.0 && self.noise_variance.is_finite()) {
            return bad(format!("noise variance {} must be non-negative", self.noise_variance));
        }
        if self.mcd_passes < 2 {
            return bad(format!("MCD needs at least 2 passes, got {}", self.mcd_passes));
        }
        if self.relevance_source == RelevanceSource::GroundTruth && !self.variant.uses_ground_truth() {
            return bad(format!(
                "variant `{}` is ground-truth free and cannot judge relevance from masks",
                self.variant
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectivePair {
    pub f_accuracy: f64,
    pub f_similarity: f64,
    pub raw_metric: f64,
    pub gated: bool,
    pub direction: Direction,
}

impl ObjectivePair {
    pub fn as_array(&self) -> [f64; 2] {
        [self.f_accuracy, self.f_similarity]
    }
}

pub fn gate_accuracy(raw_metric: f64, relevant: bool, direction: Direction) -> f64 {
    if !relevant {
        return GATE_VALUE;
    }
    match direction {
        Direction::MinimizeRaw => raw_metric,
        Direction::MaximizeRaw => -raw_metric,
    }
}

/// False when the sky proportion from the configured source reaches the
/// threshold.
pub fn relevance(prediction: &Prediction, mask: Option<&LabelGrid>, cfg: &FitnessConfig) -> Result<bool, FitnessError> {
    let source = match cfg.relevance_source {
        RelevanceSource::Prediction => &prediction.labels,
        RelevanceSource::GroundTruth => mask.ok_or(FitnessError::MissingMask)?,
    };
    Ok(scene::sky_proportion(source)? < cfg.sky_threshold)
}

/// Distance from `candidate` to the nearest archived feature vector, and
/// that entry's index (lowest index on ties).
pub fn closest(candidate: &FeatureVector, archive: &[FeatureVector]) -> Result<Option<(usize, f64)>, MetricsError> {
    let mut best: Option<(usize, f64)> = None;
    for (i, a) in archive.iter().enumerate() {
        let d = feature_distance(candidate, a)?;
        if best.is_none_or(|(_, b)| d < b) {
            best = Some((i, d));
        }
    }
    Ok(best)
}

pub fn f_similarity(candidate: &FeatureVector, archive: &[FeatureVector], threshold: f64) -> Result<f64, MetricsError> {
    Ok(match closest(candidate, archive)? {
        None => 0.0,
        Some((_, d)) if d < threshold => TOO_SIMILAR,
        Some((_, d)) => 1.0 / (1.0 + d),
    })
}

/// Mean Euclidean distance over all unordered pairs.
pub fn mean_pairwise_distance(features: &[FeatureVector], mode: ExecMode) -> Result<f64, FitnessError> {
    let n = features.len();
    if n < 2 {
        return Err(FitnessError::TooFewImages(n));
    }
    let row_sums = exec::try_map(mode, features, |i, a| {
        features[i + 1..]
            .iter()
            .map(|b| feature_distance(a, b))
            .sum::<Result<f64, _>>()
    })?;
    let pairs = (n * (n - 1) / 2) as f64;
    Ok(row_sums.iter().sum::<f64>() / pairs)
}

/// Image pipeline shared by evaluation, calibration and the training corpus:
/// genome → scene → realism transform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenePipeline {
    pub renderer: SceneRenderer,
    pub transform: RealismTransform,
}

impl ScenePipeline {
    pub fn render(&self, genome: &Genome) -> Result<(LabeledScene, Image), FitnessError> {
        let config: SceneConfig = genome_to_scene(genome)?;
        let scene = self.renderer.render(&config, genome.seed)?;
        let image = self.transform.apply(&scene.image, derive_str(genome.seed, "realism"));
        Ok((scene, image))
    }

    /// `n` uniformly random genomes drawn from `seed`.
    pub fn random_genomes(n: usize, seed: u64) -> Vec<Genome> {
        let mut r = rng(seed);
        (0..n)
            .map(|_| Genome::random(&mut r, SceneConfig::GENE_COUNT))
            .collect()
    }
}

/// Mean pairwise feature distance over `n_images` random scenes.
pub fn calibrate_threshold(
    pipeline: &ScenePipeline,
    extractor: &dyn FeatureExtractor,
    n_images: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<f64, FitnessError> {
    if n_images < 2 {
        return Err(FitnessError::TooFewImages(n_images));
    }
    let genomes = ScenePipeline::random_genomes(n_images, derive_str(seed, "calibration"));
    let features = exec::try_map(mode, &genomes, |_, g| -> Result<_, FitnessError> {
        let (_, image) = pipeline.render(g)?;
        Ok(extractor.extract(&image)?)
    })?;
    mean_pairwise_distance(&features, mode)
}

/// Activations of `n` random scenes, standing in for the training set.
pub fn training_activations(
    pipeline: &ScenePipeline,
    model: &dyn SegmentationModel,
    n: usize,
    seed: u64,
    mode: ExecMode,
) -> Result<Vec<ActivationVector>, FitnessError> {
    let genomes = ScenePipeline::random_genomes(n, derive_str(seed, "training-corpus"));
    exec::try_map(mode, &genomes, |_, g| -> Result<_, FitnessError> {
        let (_, image) = pipeline.render(g)?;
        Ok(model.activations(&image)?)
    })
}

/// What the accuracy oracle may see. Ground-truth-free variants never get
/// the mask.
#[derive(Debug)]
pub struct OracleInput<'a> {
    pub image: &'a Image,
    pub mask: Option<&'a LabelGrid>,
}

/// Everything produced by evaluating one genome.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub genome: Genome,
    pub objectives: ObjectivePair,
    pub features: FeatureVector,
    /// Image after the realism transform; what the model saw.
    pub image: Image,
    pub mask: LabelGrid,
    /// mIoU of the prediction against the simulator mask. Recorded for
    /// evaluation only; never feeds a ground-truth-free objective.
    pub ground_truth_miou: f64,
    pub predicted_sky: f64,
}

/// Scores genomes for one fitness configuration against one model.
#[derive(Clone, Copy)]
pub struct Evaluator<'a> {
    pub config: &'a FitnessConfig,
    pub pipeline: ScenePipeline,
    pub model: &'a dyn SegmentationModel,
    pub extractor: &'a dyn FeatureExtractor,
    pub training: Option<&'a [ActivationVector]>,
}

impl<'a> Evaluator<'a> {
    pub fn new(
        config: &'a FitnessConfig,
        pipeline: ScenePipeline,
        model: &'a dyn SegmentationModel,
        extractor: &'a dyn FeatureExtractor,
        training: Option<&'a [ActivationVector]>,
    ) -> Result<Self, FitnessError> {
        config.validate()?;
        if config.variant == Variant::Sa && training.is_none_or(|t| t.is_empty()) {
            return Err(FitnessError::MissingTrainingCorpus);
        }
        Ok(Self {
            config,
            pipeline,
            model,
            extractor,
            training,
        })
    }

    /// Build the oracle's view of a scene.
    pub fn oracle_input<'s>(&self, image: &'s Image, scene: &'s LabeledScene) -> OracleInput<'s> {
        let needs_mask =
            self.config.variant.uses_ground_truth() || self.config.relevance_source == RelevanceSource::GroundTruth;
        OracleInput {
            image,
            mask: needs_mask.then_some(&scene.mask),
        }
    }

    fn raw_metric(&self, input: &OracleInput<'_>, prediction: &Prediction, stream: u64) -> Result<f64, FitnessError> {
        let cfg = self.config;
        let model = self.model;
        Ok(match cfg.variant {
            Variant::Flip => metrics::flip_consistency_with(model, input.image, prediction)?,
            Variant::Noise => metrics::noise_consistency_seg_with(
                model,
                input.image,
                prediction,
                cfg.noise_variance,
                derive_str(stream, "noise"),
            )?,
            Variant::Sa => {
                let corpus = self.training.ok_or(FitnessError::MissingTrainingCorpus)?;
                metrics::dsa(&model.activations(input.image)?, corpus)?
            }
            Variant::Mcd => metrics::mcd_uncertainty(model, input.image, cfg.mcd_passes, derive_str(stream, "mcd"))?,
            Variant::GroundTruth => {
                let mask = input.mask.ok_or(FitnessError::MissingMask)?;
                metrics::miou(&prediction.labels, mask, model.num_classes())?
            }
        })
    }

    /// Render, transform, score. Deterministic in `(genome, run_seed, archive)`.
    pub fn evaluate(
        &self,
        genome: &Genome,
        archive: &[FeatureVector],
        run_seed: u64,
    ) -> Result<Evaluation, FitnessError> {
        let (scene, image) = self.pipeline.render(genome)?;
        let stream = derive(derive(run_seed, hash_reals(&genome.genes)), genome.seed);
        let input = self.oracle_input(&image, &scene);
        let prediction = self.model.predict(&image)?;
        let relevant = relevance(&prediction, input.mask, self.config)?;
        let raw = self.raw_metric(&input, &prediction, stream)?;
        let direction = self.config.variant.direction();
        let features = self.extractor.extract(&image)?;
        let f_sim = f_similarity(&features, archive, self.config.similarity_threshold)?;
        let ground_truth_miou = metrics::miou(&prediction.labels, &scene.mask, self.model.num_classes())?;
        let predicted_sky = scene::sky_proportion(&prediction.labels)?;
        Ok(Evaluation {
            genome: genome.clone(),
            objectives: ObjectivePair {
                f_accuracy: gate_accuracy(raw, relevant, direction),
                f_similarity: f_sim,
                raw_metric: raw,
                gated: !relevant,
                direction,
            },
            features,
            image,
            mask: scene.mask,
            ground_truth_miou,
            predicted_sky,
        })
    }

    /// Feature vector of a genome's image, for replaying archive decisions.
    pub fn features_of(&self, genome: &Genome) -> Result<FeatureVector, FitnessError> {
        let (_, image) = self.pipeline.render(genome)?;
        Ok(self.extractor.extract(&image)?)
    }
}

/// Class index of sky, re-exported for callers building masks by hand.
pub const SKY: u8 = TerrainClass::Sky as u8;
