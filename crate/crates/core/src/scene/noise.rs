// SPDX-License-Identifier: Apache-2.0

//! Lattice value noise and fractal sums of it.

use crate::seeds::mix64;

#[derive(Clone, Copy, Debug)]
pub struct ValueNoise {
    seed: u64,
}

#[inline]
fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

impl ValueNoise {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    #[inline]
    fn lattice(&self, ix: i64, iy: i64) -> f64 {
        let h = mix64(self.seed ^ mix64((ix as u64).wrapping_mul(0x1656_67B1) ^ (iy as u64).rotate_left(32)));
        (h >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Smoothly interpolated noise in `[0, 1)`.
    pub fn sample(&self, x: f64, y: f64) -> f64 {
        let x0 = x.floor();
        let y0 = y.floor();
        let (ix, iy) = (x0 as i64, y0 as i64);
        let tx = smoothstep(x - x0);
        let ty = smoothstep(y - y0);
        let a = self.lattice(ix, iy);
        let b = self.lattice(ix + 1, iy);
        let c = self.lattice(ix, iy + 1);
        let d = self.lattice(ix + 1, iy + 1);
        let top = a + (b - a) * tx;
        let bottom = c + (d - c) * tx;
        top + (bottom - top) * ty
    }

    /// Fractal sum over `octaves`, normalized back into `[0, 1)`.
    pub fn fbm(&self, x: f64, y: f64, octaves: u32, persistence: f64) -> f64 {
        let mut amplitude = 1.0;
        let mut frequency = 1.0;
        let mut total = 0.0;
        let mut norm = 0.0;
        for octave in 0..octaves {
            // offset each octave so lattice points do not line up
            let shift = f64::from(octave) * 19.19;
            total += amplitude * self.sample(x * frequency + shift, y * frequency - shift);
            norm += amplitude;
            amplitude *= persistence;
            frequency *= 2.0;
        }
        total / norm
    }
}
