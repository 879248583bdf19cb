// SPDX-License-Identifier: Apache-2.0

//! Per-image measurements: mIoU, the flip and noise consistency oracles,
//! distance-based surprise, Monte Carlo dropout variance, and image
//! features for diversity.

mod features;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::grid::{Grid, Image, LabelGrid};
use crate::model::{ActivationVector, ModelError, Prediction, SegmentationModel};
use crate::seeds::rng;

pub use features::{feature_distance, ActivationFeatures, FeatureExtractor, FeatureVector, GridStatsExtractor};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("grids differ in shape: {0:?} vs {1:?}")]
    DimensionMismatch((usize, usize), (usize, usize)),
    #[error("label {label} is not below the class count {classes}")]
    LabelOutOfRange { label: u8, classes: usize },
    #[error("cannot score an empty mask")]
    EmptyMask,
    #[error("noise variance must be non-negative, got {0}")]
    NegativeVariance(f64),
    #[error("training activation corpus is empty")]
    EmptyCorpus,
    #[error("vector lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("Monte Carlo dropout needs at least 2 passes, got {0}")]
    TooFewPasses(usize),
    #[error("non-finite input")]
    NonFinite,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mirror a grid left-to-right. For segmentation outputs this is also the
/// transpose that maps a prediction onto the flipped input's frame.
pub fn hflip_grid<T: Clone>(grid: &Grid<T>) -> Grid<T> {
    grid.hflip()
}

/// Per-class pixel counts of a prediction against a reference.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
}

impl ConfusionCounts {
    pub fn from_masks(predicted: &LabelGrid, reference: &LabelGrid, num_classes: usize) -> Result<Self, MetricsError> {
        if predicted.dims() != reference.dims() {
            return Err(MetricsError::DimensionMismatch(predicted.dims(), reference.dims()));
        }
        let mut counts = Self {
            tp: vec![0; num_classes],
            fp: vec![0; num_classes],
            fn_: vec![0; num_classes],
        };
        for (&p, &r) in predicted.as_slice().iter().zip(reference.as_slice()) {
            for label in [p, r] {
                if label as usize >= num_classes {
                    return Err(MetricsError::LabelOutOfRange {
                        label,
                        classes: num_classes,
                    });
                }
            }
            if p == r {
                counts.tp[p as usize] += 1;
            } else {
                counts.fp[p as usize] += 1;
                counts.fn_[r as usize] += 1;
            }
        }
        Ok(counts)
    }

    /// IoU per class; `None` for classes absent from both masks.
    pub fn per_class_iou(&self) -> Vec<Option<f64>> {
        (0..self.tp.len())
            .map(|c| {
                let denom = self.tp[c] + self.fp[c] + self.fn_[c];
                (denom > 0).then(|| self.tp[c] as f64 / denom as f64)
            })
            .collect()
    }

    pub fn mean_iou(&self) -> Option<f64> {
        let present: Vec<f64> = self.per_class_iou().into_iter().flatten().collect();
        (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
    }
}

/// Mean IoU over classes present in either mask.
pub fn miou(predicted: &LabelGrid, reference: &LabelGrid, num_classes: usize) -> Result<f64, MetricsError> {
    ConfusionCounts::from_masks(predicted, reference, num_classes)?
        .mean_iou()
        .ok_or(MetricsError::EmptyMask)
}

/// The noise samples `add_gaussian_noise` adds for a given seed, before clamping.
pub fn gaussian_noise_samples(variance: f64, seed: u64, n: usize) -> Result<Vec<f64>, MetricsError> {
    if variance.is_nan() || variance < 0.0 {
        return Err(MetricsError::NegativeVariance(variance));
    }
    if variance == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let normal = Normal::new(0.0, variance.sqrt()).map_err(|_| MetricsError::NonFinite)?;
    let mut r = rng(seed);
    Ok((0..n).map(|_| normal.sample(&mut r)).collect())
}

/// `clamp(pixel + n, 0, 1)` with `n ~ N(0, variance)` drawn in row-major order.
pub fn add_gaussian_noise(image: &Image, variance: f64, seed: u64) -> Result<Image, MetricsError> {
    if variance == 0.0 {
        return Ok(image.clone());
    }
    let noise = gaussian_noise_samples(variance, seed, image.len())?;
    let mut out = image.clone();
    for (px, n) in out.as_mut_slice().iter_mut().zip(noise) {
        *px = (*px + n).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// mIoU between a prediction mirrored into the flipped frame and the
/// prediction made on the flipped input.
pub fn flip_consistency_of(original: &LabelGrid, flipped: &LabelGrid, num_classes: usize) -> Result<f64, MetricsError> {
    miou(&original.hflip(), flipped, num_classes)
}

pub fn flip_consistency(model: &dyn SegmentationModel, image: &Image) -> Result<f64, MetricsError> {
    let direct = model.predict(image)?;
    let mirrored = model.predict(&image.hflip())?;
    flip_consistency_of(&direct.labels, &mirrored.labels, model.num_classes())
}

/// Same as [`flip_consistency`] when the plain prediction is already at hand.
pub fn flip_consistency_with(
    model: &dyn SegmentationModel,
    image: &Image,
    direct: &Prediction,
) -> Result<f64, MetricsError> {
    let mirrored = model.predict(&image.hflip())?;
    flip_consistency_of(&direct.labels, &mirrored.labels, model.num_classes())
}

pub fn noise_consistency_seg(
    model: &dyn SegmentationModel,
    image: &Image,
    variance: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    let direct = model.predict(image)?;
    noise_consistency_seg_with(model, image, &direct, variance, seed)
}

pub fn noise_consistency_seg_with(
    model: &dyn SegmentationModel,
    image: &Image,
    direct: &Prediction,
    variance: f64,
    seed: u64,
) -> Result<f64, MetricsError> {
    let noisy = add_gaussian_noise(image, variance, seed)?;
    let perturbed = model.predict(&noisy)?;
    miou(&direct.labels, &perturbed.labels, model.num_classes())
}

/// Regression form: `1 / (|y - y_noise| + 1)`.
pub fn noise_consistency_reg(y: f64, y_noise: f64) -> Result<f64, MetricsError> {
    if !y.is_finite() || !y_noise.is_finite() {
        return Err(MetricsError::NonFinite);
    }
    Ok(1.0 / ((y - y_noise).abs() + 1.0))
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Distance from `act` to its nearest neighbour in the training activations.
pub fn dsa(act: &ActivationVector, train: &[ActivationVector]) -> Result<f64, MetricsError> {
    if train.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let mut best = f64::INFINITY;
    for t in train {
        if t.len() != act.len() {
            return Err(MetricsError::LengthMismatch(act.len(), t.len()));
        }
        best = best.min(euclidean(&act.values, &t.values));
    }
    Ok(best)
}

/// Mean over pixels of the population variance across passes.
///
/// `passes[t][p]` is the scalar value of pixel `p` in pass `t`. Each pixel's
/// samples are sorted before accumulation, so the result does not depend on
/// pass order.
pub fn mean_pixel_variance(passes: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let m = passes.len();
    if m < 2 {
        return Err(MetricsError::TooFewPasses(m));
    }
    let pixels = passes[0].len();
    if let Some(bad) = passes.iter().find(|p| p.len() != pixels) {
        return Err(MetricsError::LengthMismatch(pixels, bad.len()));
    }
    if pixels == 0 {
        return Err(MetricsError::EmptyMask);
    }
    let mf = m as f64;
    let mut samples = vec![0.0; m];
    let mut total = 0.0;
    for p in 0..pixels {
        for (s, pass) in samples.iter_mut().zip(passes) {
            *s = pass[p];
        }
        samples.sort_by(f64::total_cmp);
        if samples[0] == samples[m - 1] {
            continue;
        }
        let sum: f64 = samples.iter().sum();
        let sum_sq: f64 = samples.iter().map(|x| x * x).sum();
        total += ((mf * sum_sq - sum * sum) / (mf * mf)).max(0.0);
    }
    Ok(total / pixels as f64)
}

/// Scalar per-pixel value of one pass: the winning class's score, or the
/// label scaled into `[0, 1]` when the model gives no scores.
pub fn pass_values(prediction: &Prediction) -> Vec<f64> {
    let labels = prediction.labels.as_slice();
    match &prediction.scores {
        Some(_) => labels
            .iter()
            .enumerate()
            .map(|(i, &l)| prediction.pixel_scores(i).expect("scores present")[l as usize])
            .collect(),
        None => {
            let top = (prediction.num_classes.max(2) - 1) as f64;
            labels.iter().map(|&l| f64::from(l) / top).collect()
        }
    }
}

/// Uncertainty over `passes` dropout passes seeded `base_seed + t`.
pub fn mcd_uncertainty(
    model: &dyn SegmentationModel,
    image: &Image,
    passes: usize,
    base_seed: u64,
) -> Result<f64, MetricsError> {
    if passes < 2 {
        return Err(MetricsError::TooFewPasses(passes));
    }
    let values = (0..passes as u64)
        .map(|t| {
            model
                .predict_with_dropout(image, base_seed.wrapping_add(t))
                .map(|p| pass_values(&p))
        })
        .collect::<Result<Vec<_>, _>>()?;
    mean_pixel_variance(&values)
}

#[cfg(test)]
mod tests;
