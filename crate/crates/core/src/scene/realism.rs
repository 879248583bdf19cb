// SPDX-License-Identifier: Apache-2.0

//! Pluggable image-to-image stage between the simulator and the model.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{SceneError, ValueNoise};
use crate::grid::Image;
use crate::seeds::{derive, rng};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RealismTransform {
    #[default]
    Identity,
    /// Seeded tone curve (gamma, contrast, brightness) plus a faint
    /// low-frequency texture overlay.
    StylePerturb,
}

impl RealismTransform {
    pub fn id(self) -> &'static str {
        match self {
            RealismTransform::Identity => "identity",
            RealismTransform::StylePerturb => "style-perturb",
        }
    }

    pub fn apply(self, image: &Image, seed: u64) -> Image {
        match self {
            RealismTransform::Identity => image.clone(),
            RealismTransform::StylePerturb => style_perturb(image, seed),
        }
    }
}

/// Apply the transform named by `transform_id`.
pub fn apply_realism_transform(image: &Image, transform_id: &str, seed: u64) -> Result<Image, SceneError> {
    Ok(transform_id.parse::<RealismTransform>()?.apply(image, seed))
}

fn style_perturb(image: &Image, seed: u64) -> Image {
    let mut r = rng(derive(seed, 0x5717));
    let gamma = r.random_range(0.9..1.1);
    let contrast = r.random_range(0.94..1.06);
    let brightness = r.random_range(-0.02..0.02);
    let overlay = ValueNoise::new(r.random());
    let (h, w) = image.dims();
    let (h, w) = (h.max(1) as f64, w.max(1) as f64);
    let mut out = image.clone();
    let width = image.width();
    for (i, px) in out.as_mut_slice().iter_mut().enumerate() {
        let row = (i / width.max(1)) as f64;
        let col = (i % width.max(1)) as f64;
        let toned = ((px.clamp(0.0, 1.0).powf(gamma) - 0.5) * contrast) + 0.5 + brightness;
        let texture = 0.02 * (2.0 * overlay.sample(col / w * 3.0, row / h * 3.0) - 1.0);
        *px = (toned + texture).clamp(0.0, 1.0);
    }
    out
}

impl FromStr for RealismTransform {
    type Err = SceneError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "identity" => Ok(RealismTransform::Identity),
            "style-perturb" => Ok(RealismTransform::StylePerturb),
            other => Err(SceneError::UnknownTransform(other.to_string())),
        }
    }
}

impl fmt::Display for RealismTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}
