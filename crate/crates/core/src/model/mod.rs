// SPDX-License-Identifier: Apache-2.0

//! The model under test: a segmentation network seen through deterministic
//! prediction, dropout-randomized prediction and hidden-activation access.

mod adapter;
mod reference;

use serde::{Deserialize, Serialize};

use crate::grid::{Image, LabelGrid};

pub use adapter::{serve_request, AdapterModel, AdapterRequest, AdapterResponse};
pub use reference::{ReferenceModel, ReferenceModelConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("image is {got_h}x{got_w}, model expects {want_h}x{want_w}")]
    DimensionMismatch {
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("adapter transport: {0}")]
    Transport(String),
    #[error("adapter protocol violation: {0}")]
    Protocol(String),
    #[error("adapter reported: {0}")]
    Remote(String),
    #[error("invalid model configuration: {0}")]
    Config(String),
}

/// Per-pixel labels with optional per-class scores.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub labels: LabelGrid,
    pub num_classes: usize,
    /// Row-major `H × W × C`; each pixel's `C` scores sum to one.
    pub scores: Option<Vec<f64>>,
}

impl Prediction {
    pub fn from_labels(labels: LabelGrid, num_classes: usize) -> Self {
        Self {
            labels,
            num_classes,
            scores: None,
        }
    }

    /// Build labels as the per-pixel argmax of `scores`, ties to the lowest class.
    pub fn from_scores(height: usize, width: usize, num_classes: usize, scores: Vec<f64>) -> Self {
        assert_eq!(scores.len(), height * width * num_classes);
        let labels = scores.chunks_exact(num_classes).map(|px| argmax(px) as u8).collect();
        Self {
            labels: LabelGrid::from_vec(height, width, labels).expect("shape checked above"),
            num_classes,
            scores: Some(scores),
        }
    }

    pub fn pixel_scores(&self, index: usize) -> Option<&[f64]> {
        self.scores
            .as_ref()
            .map(|s| &s[index * self.num_classes..(index + 1) * self.num_classes])
    }
}

/// Index of the largest value; the first one wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Hidden-layer activations of one input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActivationVector {
    pub values: Vec<f64>,
}

impl ActivationVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Scalar output of a regression model (e.g. a steering angle).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionOutput {
    pub value: f64,
}

impl RegressionOutput {
    pub fn new(value: f64) -> Option<Self> {
        value.is_finite().then_some(Self { value })
    }
}

pub trait SegmentationModel: Send + Sync {
    fn num_classes(&self) -> usize;

    /// `(height, width)` of accepted images.
    fn input_dims(&self) -> (usize, usize);

    /// Deterministic prediction with dropout disabled.
    fn predict(&self, image: &Image) -> Result<Prediction, ModelError>;

    /// One stochastic pass; identical for identical `pass_seed`.
    fn predict_with_dropout(&self, image: &Image, pass_seed: u64) -> Result<Prediction, ModelError>;

    fn activations(&self, image: &Image) -> Result<ActivationVector, ModelError>;

    fn check_dims(&self, image: &Image) -> Result<(), ModelError> {
        let (want_h, want_w) = self.input_dims();
        let (got_h, got_w) = image.dims();
        if (want_h, want_w) != (got_h, got_w) {
            return Err(ModelError::DimensionMismatch {
                want_h,
                want_w,
                got_h,
                got_w,
            });
        }
        Ok(())
    }
}
