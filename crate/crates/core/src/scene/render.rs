// SPDX-License-Identifier: Apache-2.0

//! Stand-in terrain renderer. A pitch-dependent horizon splits sky from
//! ground; the ground is classified from layered value noise and then
//! overpainted with elliptical rock blobs. Image and mask are produced in
//! the same pass, so the mask agrees with the geometry by construction.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{LabeledScene, SceneConfig, SceneError, TerrainClass, ValueNoise};
use crate::grid::Grid;
use crate::seeds::{derive, rng};

pub const DEFAULT_SIZE: usize = 64;

// Base intensities per class before shading.
const SOIL: f64 = 0.50;
const BEDROCK: f64 = 0.36;
const SAND: f64 = 0.68;
const BIG_ROCK: f64 = 0.20;
const SMALL_ROCK: f64 = 0.27;

/// Rocks whose ellipse area factor `rx * ry` reaches this are "big".
const BIG_ROCK_AREA: f64 = 7.0;

/// Noise units per meter of lateral camera offset.
const OFFSET_SCALE: f64 = 0.35;

/// An elliptical rock painted into a scene, in pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RockBlob {
    pub center_row: f64,
    pub center_col: f64,
    pub radius_x: f64,
    pub radius_y: f64,
    pub angle: f64,
    pub big: bool,
}

impl RockBlob {
    /// Ellipse-local coordinates scaled so the boundary is the unit circle.
    fn local(&self, row: f64, col: f64) -> (f64, f64) {
        let dx = col - self.center_col;
        let dy = row - self.center_row;
        let (s, c) = self.angle.sin_cos();
        ((dx * c + dy * s) / self.radius_x, (-dx * s + dy * c) / self.radius_y)
    }

    pub fn contains(&self, row: f64, col: f64) -> bool {
        let (u, v) = self.local(row, col);
        u * u + v * v <= 1.0
    }

    pub fn label(&self) -> u8 {
        if self.big {
            TerrainClass::BigRock.index()
        } else {
            TerrainClass::SmallRock.index()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneRenderer {
    pub height: usize,
    pub width: usize,
}

impl Default for SceneRenderer {
    fn default() -> Self {
        Self {
            height: DEFAULT_SIZE,
            width: DEFAULT_SIZE,
        }
    }
}

/// Render with the default 64×64 renderer.
pub fn render_scene(config: &SceneConfig, seed: u64) -> Result<LabeledScene, SceneError> {
    SceneRenderer::default().render(config, seed)
}

impl SceneRenderer {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    /// First ground row of every column. Depends on pitch, roughness and
    /// offset only; for fixed others it is non-decreasing in pitch.
    pub fn horizon_rows(&self, config: &SceneConfig, seed: u64) -> Vec<usize> {
        let h = self.height as f64;
        let w = self.width.max(1) as f64;
        let pitch_t = config.normalized()[0];
        let base = (0.08 + 0.72 * pitch_t) * h;
        let amplitude = (0.02 + 0.06 * config.terrain_roughness) * h;
        let ridge = ValueNoise::new(derive(seed, 1));
        let offset = config.lateral_offset * OFFSET_SCALE;
        (0..self.width)
            .map(|col| {
                let n = ridge.fbm(col as f64 / w * 3.0 + offset, 0.5, 3, 0.5);
                (base + amplitude * (2.0 * n - 1.0)).round().clamp(0.0, h) as usize
            })
            .collect()
    }

    pub fn render(&self, config: &SceneConfig, seed: u64) -> Result<LabeledScene, SceneError> {
        config.validate()?;
        let (height, width) = (self.height, self.width);
        let h = height as f64;
        let w = width.max(1) as f64;
        let horizon = self.horizon_rows(config, seed);

        let terrain = ValueNoise::new(derive(seed, 2));
        let sand_field = ValueNoise::new(derive(seed, 3));
        let bedrock_field = ValueNoise::new(derive(seed, 4));
        let grain = ValueNoise::new(derive(seed, 5));

        let offset = config.lateral_offset * OFFSET_SCALE;
        let persistence = 0.35 + 0.4 * config.terrain_roughness;
        let relief = 0.1 + 0.3 * config.terrain_roughness;
        let (light_y, light_x) = config.illumination_angle.sin_cos();
        let sand_cut = 0.25 + 0.5 * config.sand_coverage;
        let bedrock_cut = 0.25 + 0.5 * config.bedrock_exposure;

        let mut image = Grid::filled(height, width, 0.0);
        let mut mask = Grid::filled(height, width, TerrainClass::Sky.index());
        let mut ground_cells = 0usize;

        for row in 0..height {
            for (col, &horizon_row) in horizon.iter().enumerate().take(width) {
                if row < horizon_row {
                    let t = row as f64 / horizon_row.max(1) as f64;
                    image.set(row, col, 0.95 - 0.1 * t);
                    continue;
                }
                ground_cells += 1;
                let x = col as f64 / w * 4.0 + offset;
                let y = row as f64 / h.max(1.0) * 4.0;
                let e = 0.05;
                let gx = (terrain.fbm(x + e, y, 5, persistence) - terrain.fbm(x - e, y, 5, persistence)) / (2.0 * e);
                let gy = (terrain.fbm(x, y + e, 5, persistence) - terrain.fbm(x, y - e, 5, persistence)) / (2.0 * e);
                let shade = (1.0 + relief * 0.5 * (light_x * gx + light_y * gy)).clamp(0.75, 1.25);

                let (class, base) = if sand_field.fbm(x * 0.6, y * 0.9, 3, 0.5) < sand_cut {
                    (TerrainClass::Sand, SAND)
                } else if bedrock_field.fbm(x * 1.1, y * 1.1, 3, 0.5) < bedrock_cut {
                    (TerrainClass::Bedrock, BEDROCK)
                } else {
                    (TerrainClass::Soil, SOIL)
                };
                let texture = 0.06 * (grain.sample(x * 6.0, y * 6.0) - 0.5);
                image.set(row, col, (base * shade + texture).clamp(0.0, 1.0));
                mask.set(row, col, class.index());
            }
        }

        let ground_fraction = ground_cells as f64 / (h * w).max(1.0);
        let wanted = (config.rock_density * ground_fraction).round() as usize;
        let mut rocks = Vec::with_capacity(wanted);
        if ground_cells > 0 && wanted > 0 {
            let mut rock_rng = rng(derive(seed, 7));
            let top = *horizon.iter().min().unwrap_or(&0);
            for _ in 0..wanted {
                // rejection sample a ground pixel for the centre
                let mut centre = None;
                for _ in 0..16 {
                    let row = rock_rng.random_range(top as f64..h);
                    let col = rock_rng.random_range(0.0..w);
                    if (row as usize) >= horizon[col as usize] {
                        centre = Some((row, col));
                        break;
                    }
                }
                let size: f64 = rock_rng.random();
                let stretch: f64 = rock_rng.random();
                let tilt: f64 = rock_rng.random();
                let Some((row, col)) = centre else { continue };
                let horizon_row = horizon[col as usize] as f64;
                let depth = ((row - horizon_row) / (h - horizon_row).max(1.0)).clamp(0.0, 1.0);
                let radius = config.rock_size_scale * (0.8 + 2.6 * size * size) * (0.5 + depth);
                let radius_x = radius * (1.0 + 0.4 * stretch);
                let radius_y = radius * 0.75;
                rocks.push(RockBlob {
                    center_row: row,
                    center_col: col,
                    radius_x,
                    radius_y,
                    angle: (tilt - 0.5) * 0.6,
                    big: radius_x * radius_y >= BIG_ROCK_AREA,
                });
            }
        }

        for blob in &rocks {
            let reach = blob.radius_x.max(blob.radius_y).ceil() + 1.0;
            let r0 = (blob.center_row - reach).floor().max(0.0) as usize;
            let r1 = ((blob.center_row + reach).ceil() as usize).min(height.saturating_sub(1));
            let c0 = (blob.center_col - reach).floor().max(0.0) as usize;
            let c1 = ((blob.center_col + reach).ceil() as usize).min(width.saturating_sub(1));
            let base = if blob.big { BIG_ROCK } else { SMALL_ROCK };
            for row in r0..=r1 {
                for (col, &h) in horizon.iter().enumerate().take(c1 + 1).skip(c0) {
                    if row < h {
                        continue;
                    }
                    let (u, v) = blob.local(row as f64, col as f64);
                    if u * u + v * v > 1.0 {
                        continue;
                    }
                    let shade = 1.0 + 0.45 * (light_x * u - light_y * v);
                    image.set(row, col, (base * shade).clamp(0.0, 1.0));
                    mask.set(row, col, blob.label());
                }
            }
        }

        Ok(LabeledScene {
            image,
            mask,
            config: *config,
            seed,
            rocks,
        })
    }
}
