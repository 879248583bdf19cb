// SPDX-License-Identifier: Apache-2.0

//! Built-in reference segmenter: one 3×3 convolution into `K` hidden
//! channels, `tanh`, optional dropout, then a per-pixel linear classifier
//! with softmax.
//!
//! Weights come from a seed but are structured so the model segments the
//! rendered terrain plausibly:
//!
//! * `K - 4` *level* channels are smoothed intensity detectors with
//!   staggered thresholds; together they form a soft thermometer code of the
//!   local intensity, and the classifier picks the class whose prototype
//!   intensity is nearest on that code.
//! * 2 *texture* channels are Laplacian responses that lean towards rocks.
//! * 2 *edge* channels are a mirror pair of thresholded derivative filters.
//!   Each one, when it fires, vetoes one rock type; weak gradients leave both
//!   silent. They never favour rock over other classes, they only decide the
//!   big/small split along strong outlines. In the default mode the filters
//!   are horizontal derivatives, the pair swaps under a horizontal mirror,
//!   and rock types along outlines flip with the image: rock-dense scenes are
//!   flip-inconsistent while bare scenes are not. All other kernels are
//!   mirror-symmetric. In flip-robust mode the edge filters are vertical and
//!   symmetric too, which makes prediction commute with the flip exactly.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ActivationVector, ModelError, Prediction, SegmentationModel};
use crate::grid::Image;
use crate::scene::{TerrainClass, DEFAULT_SIZE};
use crate::seeds::{derive, rng};

type Kernel = [[f64; 3]; 3];

const NUM_CLASSES: usize = TerrainClass::COUNT;

/// Class prototype intensities, indexed by class.
const PROTOTYPES: [f64; NUM_CLASSES] = [0.50, 0.36, 0.68, 0.20, 0.27, 0.90];

const SMOOTHING: Kernel = [[0.05, 0.1, 0.05], [0.1, 0.4, 0.1], [0.05, 0.1, 0.05]];
const LAPLACIAN: Kernel = [
    [-0.125, -0.125, -0.125],
    [-0.125, 1.0, -0.125],
    [-0.125, -0.125, -0.125],
];
const HORIZONTAL_DERIVATIVE: Kernel = [[-0.25, 0.0, 0.25], [-0.5, 0.0, 0.5], [-0.25, 0.0, 0.25]];
const VERTICAL_DERIVATIVE: Kernel = [[-0.25, -0.5, -0.25], [0.0, 0.0, 0.0], [0.25, 0.5, 0.25]];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceModelConfig {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub hidden_channels: usize,
    pub dropout_rate: f64,
    /// Vertical, mirror-symmetric edge filters instead of horizontal ones.
    pub flip_robust: bool,
    /// Classifier weight of the edge channels.
    pub edge_weight: f64,
    /// Intensity step below which the edge channels stay silent.
    pub edge_threshold: f64,
}

impl Default for ReferenceModelConfig {
    fn default() -> Self {
        Self {
            seed: 0x5EED_0001,
            height: DEFAULT_SIZE,
            width: DEFAULT_SIZE,
            hidden_channels: 16,
            dropout_rate: 0.5,
            flip_robust: false,
            edge_weight: 3.0,
            edge_threshold: 0.15,
        }
    }
}

impl ReferenceModelConfig {
    /// Default model whose flip inconsistency concentrates on rock outlines.
    pub fn planted_defect() -> Self {
        Self::default()
    }

    pub fn flip_robust() -> Self {
        Self {
            flip_robust: true,
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }
}

#[derive(Clone, Debug)]
pub struct ReferenceModel {
    config: ReferenceModelConfig,
    kernels: Vec<Kernel>,
    biases: Vec<f64>,
    /// `C × K`, row-major.
    class_weights: Vec<f64>,
    class_bias: Vec<f64>,
}

fn scaled(k: &Kernel, s: f64) -> Kernel {
    k.map(|row| row.map(|v| v * s))
}

fn kernel_sum(k: &Kernel) -> f64 {
    k.iter().flatten().sum()
}

impl ReferenceModel {
    pub fn new(config: ReferenceModelConfig) -> Result<Self, ModelError> {
        if config.hidden_channels < 6 {
            return Err(ModelError::Config(format!(
                "need at least 6 hidden channels, got {}",
                config.hidden_channels
            )));
        }
        if !(0.0..1.0).contains(&config.dropout_rate) {
            return Err(ModelError::Config(format!(
                "dropout rate {} outside [0, 1)",
                config.dropout_rate
            )));
        }
        if config.height == 0 || config.width == 0 {
            return Err(ModelError::Config("empty input size".into()));
        }
        let mut r = rng(derive(config.seed, 0x004D_4F44_454C));
        let levels = config.hidden_channels - 4;
        let mut kernels = Vec::with_capacity(config.hidden_channels);
        let mut biases = Vec::with_capacity(config.hidden_channels);

        let perturb = |base: Kernel, amount: f64, symmetric: bool, r: &mut rand_chacha::ChaCha8Rng| -> Kernel {
            let mut k = base;
            for row in &mut k {
                for v in row.iter_mut() {
                    *v += r.random_range(-amount..=amount);
                }
                if symmetric {
                    row[2] = row[0];
                }
            }
            k
        };

        for i in 0..levels {
            let threshold = 0.1 + 0.88 * i as f64 / (levels - 1) as f64 + r.random_range(-0.01..=0.01);
            let gain = r.random_range(10.0..14.0);
            let k = perturb(scaled(&SMOOTHING, gain), 0.02 * gain, true, &mut r);
            // threshold applies to the kernel's response on a flat patch
            biases.push(-kernel_sum(&k) * threshold);
            kernels.push(k);
        }
        for _ in 0..2 {
            let gain = r.random_range(6.0..8.0);
            kernels.push(perturb(scaled(&LAPLACIAN, gain), 0.05, true, &mut r));
            biases.push(r.random_range(-0.05..=0.05));
        }
        let edge = if config.flip_robust {
            VERTICAL_DERIVATIVE
        } else {
            HORIZONTAL_DERIVATIVE
        };
        // a mirror pair of thresholded edge detectors: on weak gradients both
        // saturate low and cancel in the classifier
        let gain = r.random_range(28.0..32.0);
        let k = perturb(scaled(&edge, gain), 0.05, config.flip_robust, &mut r);
        let mirrored = k.map(|row| [row[2], row[1], row[0]]);
        for k in [k, mirrored] {
            kernels.push(k);
            biases.push(-config.edge_threshold * gain);
        }

        let k = config.hidden_channels;
        let sharpness = 0.3;
        let mut class_weights = vec![0.0; NUM_CLASSES * k];
        let mut class_bias = vec![0.0; NUM_CLASSES];
        for (c, &intensity) in PROTOTYPES.iter().enumerate() {
            // level code a flat patch of the prototype intensity produces
            let code: f64 = (0..levels)
                .map(|i| (kernel_sum(&kernels[i]) * intensity + biases[i]).tanh())
                .sum();
            for i in 0..levels {
                class_weights[c * k + i] = sharpness * 2.0 * code + r.random_range(-0.02..=0.02);
            }
            class_bias[c] = -sharpness * code * code;
        }
        let (big, small) = (TerrainClass::BigRock as usize, TerrainClass::SmallRock as usize);
        class_weights[small * k + levels] = 0.6;
        class_weights[big * k + levels] = 0.3;
        class_weights[small * k + levels + 1] = 0.3;
        class_weights[big * k + levels + 1] = 0.6;
        let e0 = levels + 2;
        // each edge channel vetoes one rock type; silent channels sit at -1,
        // which the bias offsets, so non-rock pixels are never pushed to rock
        class_weights[small * k + e0] = -config.edge_weight;
        class_weights[big * k + e0 + 1] = -config.edge_weight;
        class_bias[small] -= config.edge_weight;
        class_bias[big] -= config.edge_weight;

        Ok(Self {
            config,
            kernels,
            biases,
            class_weights,
            class_bias,
        })
    }

    pub fn config(&self) -> &ReferenceModelConfig {
        &self.config
    }

    pub fn hidden_channels(&self) -> usize {
        self.config.hidden_channels
    }

    /// `tanh` hidden layer, `H × W × K` row-major.
    fn hidden(&self, image: &Image) -> Vec<f64> {
        let (h, w) = image.dims();
        let k = self.kernels.len();
        let px = image.as_slice();
        let at = |r: isize, c: isize| -> f64 {
            let r = r.clamp(0, h as isize - 1) as usize;
            let c = c.clamp(0, w as isize - 1) as usize;
            px[r * w + c]
        };
        let mut out = vec![0.0; h * w * k];
        for r in 0..h as isize {
            for c in 0..w as isize {
                let mut patch = [[0.0; 3]; 3];
                for (dy, prow) in patch.iter_mut().enumerate() {
                    for (dx, v) in prow.iter_mut().enumerate() {
                        *v = at(r + dy as isize - 1, c + dx as isize - 1);
                    }
                }
                let base = (r as usize * w + c as usize) * k;
                for (ch, kernel) in self.kernels.iter().enumerate() {
                    let mut acc = 0.0;
                    for dy in 0..3 {
                        // centre term plus the left/right pair; the pair is
                        // summed symmetrically so mirrored inputs give
                        // bit-identical results for symmetric kernels
                        acc += kernel[dy][1] * patch[dy][1]
                            + (kernel[dy][0] * patch[dy][0] + kernel[dy][2] * patch[dy][2]);
                    }
                    out[base + ch] = (acc + self.biases[ch]).tanh();
                }
            }
        }
        out
    }

    fn classify(&self, image: &Image, hidden: &[f64]) -> Prediction {
        let (h, w) = image.dims();
        let k = self.kernels.len();
        let mut scores = Vec::with_capacity(h * w * NUM_CLASSES);
        let mut logits = [0.0; NUM_CLASSES];
        for feat in hidden.chunks_exact(k) {
            for (c, logit) in logits.iter_mut().enumerate() {
                let weights = &self.class_weights[c * k..(c + 1) * k];
                *logit = self.class_bias[c] + weights.iter().zip(feat).map(|(a, b)| a * b).sum::<f64>();
            }
            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exp = logits.map(|z| (z - max).exp());
            let total: f64 = exp.iter().sum();
            scores.extend(exp.iter().map(|e| e / total));
        }
        Prediction::from_scores(h, w, NUM_CLASSES, scores)
    }
}

impl SegmentationModel for ReferenceModel {
    fn num_classes(&self) -> usize {
        NUM_CLASSES
    }

    fn input_dims(&self) -> (usize, usize) {
        (self.config.height, self.config.width)
    }

    fn predict(&self, image: &Image) -> Result<Prediction, ModelError> {
        self.check_dims(image)?;
        let hidden = self.hidden(image);
        Ok(self.classify(image, &hidden))
    }

    fn predict_with_dropout(&self, image: &Image, pass_seed: u64) -> Result<Prediction, ModelError> {
        self.check_dims(image)?;
        let rate = self.config.dropout_rate;
        if rate == 0.0 {
            return self.predict(image);
        }
        let mut hidden = self.hidden(image);
        let mut r = rng(derive(pass_seed, 0xD80F));
        let keep_scale = 1.0 / (1.0 - rate);
        for v in &mut hidden {
            if r.random::<f64>() < rate {
                *v = 0.0;
            } else {
                *v *= keep_scale;
            }
        }
        Ok(self.classify(image, &hidden))
    }

    /// Global mean pool of the hidden layer.
    fn activations(&self, image: &Image) -> Result<ActivationVector, ModelError> {
        self.check_dims(image)?;
        let k = self.kernels.len();
        let hidden = self.hidden(image);
        let mut values = vec![0.0; k];
        for feat in hidden.chunks_exact(k) {
            for (acc, v) in values.iter_mut().zip(feat) {
                *acc += v;
            }
        }
        let n = (image.len()).max(1) as f64;
        values.iter_mut().for_each(|v| *v /= n);
        Ok(ActivationVector { values })
    }
}
