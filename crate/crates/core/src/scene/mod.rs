// SPDX-License-Identifier: Apache-2.0

//! Procedural terrain scenes: genome decoding, rendering of an image and its
//! class mask, and the realism stage applied to rendered images.

mod noise;
pub mod pgm;
mod realism;
mod render;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::grid::{Image, LabelGrid};

pub use noise::ValueNoise;
pub use realism::{apply_realism_transform, RealismTransform};
pub use render::{render_scene, RockBlob, SceneRenderer, DEFAULT_SIZE};

/// Terrain classes; the discriminant is the mask value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum TerrainClass {
    Soil = 0,
    Bedrock = 1,
    Sand = 2,
    BigRock = 3,
    SmallRock = 4,
    Sky = 5,
}

impl TerrainClass {
    pub const COUNT: usize = 6;

    pub fn index(self) -> u8 {
        self as u8
    }

    pub fn is_rock(label: u8) -> bool {
        label == Self::BigRock as u8 || label == Self::SmallRock as u8
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SceneError {
    #[error("genome has {got} genes, expected {expected}")]
    GenomeLength { expected: usize, got: usize },
    #[error("gene {index} = {value} lies outside [0, 1]")]
    GeneOutOfRange { index: usize, value: f64 },
    #[error("scene field `{field}` = {value} lies outside [{lo}, {hi}]")]
    FieldOutOfRange {
        field: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("mask is empty")]
    EmptyMask,
    #[error("unknown realism transform `{0}`")]
    UnknownTransform(String),
    #[error("malformed PGM: {0}")]
    Pgm(String),
}

/// A search individual: scene parameters in `[0, 1]` plus the scene seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Genome {
    pub genes: Vec<f64>,
    pub seed: u64,
}

impl Genome {
    pub fn new(genes: Vec<f64>, seed: u64) -> Result<Self, SceneError> {
        let g = Self { genes, seed };
        g.validate(g.genes.len())?;
        Ok(g)
    }

    /// Uniform genes in `[0, 1)` and a fresh scene seed.
    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R, len: usize) -> Self {
        let genes = (0..len).map(|_| rng.random::<f64>()).collect();
        Self {
            genes,
            seed: rng.random(),
        }
    }

    pub fn len(&self) -> usize {
        self.genes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.genes.is_empty()
    }

    pub fn validate(&self, expected_len: usize) -> Result<(), SceneError> {
        if self.genes.len() != expected_len {
            return Err(SceneError::GenomeLength {
                expected: expected_len,
                got: self.genes.len(),
            });
        }
        for (index, &value) in self.genes.iter().enumerate() {
            if !(0.0..=1.0).contains(&value) {
                return Err(SceneError::GeneOutOfRange { index, value });
            }
        }
        Ok(())
    }

    /// Genes rendered as `g0;g1;...` with full round-trip precision.
    pub fn genes_key(&self) -> String {
        self.genes
            .iter()
            .map(|g| format!("{g:?}"))
            .collect::<Vec<_>>()
            .join(";")
    }
}

/// Decoded simulator parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    /// Radians; larger values tilt the camera up and raise the horizon.
    pub camera_pitch: f64,
    /// Meters of sideways camera translation.
    pub lateral_offset: f64,
    pub terrain_roughness: f64,
    /// Rocks per unit image area.
    pub rock_density: f64,
    pub rock_size_scale: f64,
    pub sand_coverage: f64,
    pub bedrock_exposure: f64,
    /// Radians; direction of the light in the image plane.
    pub illumination_angle: f64,
}

/// Declared `(name, lower, upper)` range of each field, in gene order.
pub const FIELD_RANGES: [(&str, f64, f64); 8] = [
    ("camera_pitch", 0.0, 0.5),
    ("lateral_offset", -10.0, 10.0),
    ("terrain_roughness", 0.0, 1.0),
    ("rock_density", 0.0, 40.0),
    ("rock_size_scale", 0.5, 2.0),
    ("sand_coverage", 0.0, 1.0),
    ("bedrock_exposure", 0.0, 1.0),
    ("illumination_angle", 0.2, PI - 0.2),
];

impl SceneConfig {
    pub const GENE_COUNT: usize = FIELD_RANGES.len();

    pub fn to_array(&self) -> [f64; 8] {
        [
            self.camera_pitch,
            self.lateral_offset,
            self.terrain_roughness,
            self.rock_density,
            self.rock_size_scale,
            self.sand_coverage,
            self.bedrock_exposure,
            self.illumination_angle,
        ]
    }

    pub fn from_array(v: [f64; 8]) -> Self {
        Self {
            camera_pitch: v[0],
            lateral_offset: v[1],
            terrain_roughness: v[2],
            rock_density: v[3],
            rock_size_scale: v[4],
            sand_coverage: v[5],
            bedrock_exposure: v[6],
            illumination_angle: v[7],
        }
    }

    /// Every field at its range midpoint.
    pub fn midpoint() -> Self {
        Self::from_array(FIELD_RANGES.map(|(_, lo, hi)| 0.5 * (lo + hi)))
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for ((field, lo, hi), value) in FIELD_RANGES.iter().zip(self.to_array()) {
            if !(value >= *lo && value <= *hi) {
                return Err(SceneError::FieldOutOfRange {
                    field,
                    value,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        Ok(())
    }

    /// Position of each field inside its range, in `[0, 1]`.
    pub fn normalized(&self) -> [f64; 8] {
        let v = self.to_array();
        std::array::from_fn(|i| {
            let (_, lo, hi) = FIELD_RANGES[i];
            (v[i] - lo) / (hi - lo)
        })
    }

    /// Key-value lines for run manifests.
    pub fn to_records(&self) -> Vec<(&'static str, f64)> {
        FIELD_RANGES
            .iter()
            .zip(self.to_array())
            .map(|((name, _, _), v)| (*name, v))
            .collect()
    }
}

/// Affine decode of each gene onto its field's range.
pub fn genome_to_scene(genome: &Genome) -> Result<SceneConfig, SceneError> {
    genome.validate(SceneConfig::GENE_COUNT)?;
    let mut out = [0.0; 8];
    for (i, (_, lo, hi)) in FIELD_RANGES.iter().enumerate() {
        let g = genome.genes[i];
        // endpoints are reproduced exactly
        out[i] = if g == 1.0 { *hi } else { lo + g * (hi - lo) };
    }
    Ok(SceneConfig::from_array(out))
}

/// A rendered scene with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledScene {
    pub image: Image,
    pub mask: LabelGrid,
    pub config: SceneConfig,
    pub seed: u64,
    /// Every rock ellipse painted into the scene, in paint order.
    pub rocks: Vec<RockBlob>,
}

/// Fraction of mask cells labelled sky.
pub fn sky_proportion(mask: &LabelGrid) -> Result<f64, SceneError> {
    if mask.is_empty() {
        return Err(SceneError::EmptyMask);
    }
    let sky = TerrainClass::Sky.index();
    let count = mask.as_slice().iter().filter(|&&c| c == sky).count();
    Ok(count as f64 / mask.len() as f64)
}
