// SPDX-License-Identifier: Apache-2.0

//! Binary PGM (P5, maxval 255) encoding for images and masks.

use super::SceneError;
use crate::grid::{Grid, Image, LabelGrid};

/// Quantize intensities: `round(pixel × 255)`.
pub fn quantize(image: &Image) -> Grid<u8> {
    image.map(|p| (p.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn encode(grid: &Grid<u8>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", grid.width(), grid.height()).into_bytes();
    out.extend_from_slice(grid.as_slice());
    out
}

pub fn encode_image(image: &Image) -> Vec<u8> {
    encode(&quantize(image))
}

/// Masks are stored with the class index as the pixel value.
pub fn encode_mask(mask: &LabelGrid) -> Vec<u8> {
    encode(mask)
}

pub fn decode(bytes: &[u8]) -> Result<Grid<u8>, SceneError> {
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(SceneError::Pgm("truncated header".into()));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|e| SceneError::Pgm(e.to_string()))?);
    }
    if fields[0] != "P5" {
        return Err(SceneError::Pgm(format!("magic `{}`", fields[0])));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|e| SceneError::Pgm(e.to_string()));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(SceneError::Pgm(format!("maxval {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    let raster = bytes.get(pos + 1..).unwrap_or(&[]);
    Grid::from_vec(height, width, raster.to_vec()).map_err(|e| SceneError::Pgm(e.to_string()))
}
