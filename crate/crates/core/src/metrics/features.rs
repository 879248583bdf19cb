// SPDX-License-Identifier: Apache-2.0

use serde::{Deserialize, Serialize};

use super::MetricsError;
use crate::grid::Image;
use crate::model::SegmentationModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

pub trait FeatureExtractor: Send + Sync {
    fn dim(&self) -> usize;
    fn extract(&self, image: &Image) -> Result<FeatureVector, MetricsError>;
}

/// Euclidean distance between two feature vectors.
pub fn feature_distance(a: &FeatureVector, b: &FeatureVector) -> Result<f64, MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::LengthMismatch(a.len(), b.len()));
    }
    Ok(a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt())
}

/// Per-cell statistics over a `cells × cells` partition: mean intensity,
/// intensity standard deviation and mean gradient magnitude.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridStatsExtractor {
    pub cells: usize,
}

impl Default for GridStatsExtractor {
    fn default() -> Self {
        Self { cells: 8 }
    }
}

fn gradient_magnitude(image: &Image) -> Vec<f64> {
    let (h, w) = image.dims();
    let px = image.as_slice();
    let at = |r: usize, c: usize| px[r * w + c];
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let gx = (at(r, (c + 1).min(w - 1)) - at(r, c.saturating_sub(1))) * 0.5;
            let gy = (at((r + 1).min(h - 1), c) - at(r.saturating_sub(1), c)) * 0.5;
            out.push((gx * gx + gy * gy).sqrt());
        }
    }
    out
}

impl FeatureExtractor for GridStatsExtractor {
    fn dim(&self) -> usize {
        self.cells * self.cells * 3
    }

    fn extract(&self, image: &Image) -> Result<FeatureVector, MetricsError> {
        let (h, w) = image.dims();
        if h < self.cells || w < self.cells {
            return Err(MetricsError::DimensionMismatch((h, w), (self.cells, self.cells)));
        }
        let grad = gradient_magnitude(image);
        let px = image.as_slice();
        let mut values = Vec::with_capacity(self.dim());
        for i in 0..self.cells {
            let (r0, r1) = (i * h / self.cells, (i + 1) * h / self.cells);
            for j in 0..self.cells {
                let (c0, c1) = (j * w / self.cells, (j + 1) * w / self.cells);
                let n = ((r1 - r0) * (c1 - c0)) as f64;
                // moments about the cell's first pixel so flat cells give exact zeros
                let pivot = px[r0 * w + c0];
                let (mut s, mut s2, mut g) = (0.0, 0.0, 0.0);
                for r in r0..r1 {
                    for c in c0..c1 {
                        let d = px[r * w + c] - pivot;
                        s += d;
                        s2 += d * d;
                        g += grad[r * w + c];
                    }
                }
                let mean_d = s / n;
                values.push(pivot + mean_d);
                values.push((s2 / n - mean_d * mean_d).max(0.0).sqrt());
                values.push(g / n);
            }
        }
        Ok(FeatureVector { values })
    }
}

/// Uses a model's activation vector as the feature vector, which lets an
/// external network (through the adapter) serve as the extractor.
pub struct ActivationFeatures<'a> {
    pub model: &'a dyn SegmentationModel,
    pub dim: usize,
}

impl FeatureExtractor for ActivationFeatures<'_> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn extract(&self, image: &Image) -> Result<FeatureVector, MetricsError> {
        let a = self.model.activations(image)?;
        if a.len() != self.dim {
            return Err(MetricsError::LengthMismatch(self.dim, a.len()));
        }
        Ok(FeatureVector { values: a.values })
    }
}
