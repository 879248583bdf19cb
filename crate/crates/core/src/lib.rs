// SPDX-License-Identifier: Apache-2.0

//! Label-free search-based test generation for image segmentation models.
//!
//! A procedural terrain simulator turns genomes into images with masks. An
//! archive-extended NSGA-II searches the genome space with two objectives:
//! an accuracy fitness computed from a ground-truth-free oracle (flip
//! consistency, noise consistency, distance-based surprise, or Monte Carlo
//! dropout variance) and a diversity fitness relative to the archive. The
//! `stats` and `harness` modules compare strategies across repeated runs.

pub mod exec;
pub mod fitness;
pub mod grid;
pub mod harness;
pub mod metrics;
pub mod model;
pub mod scene;
pub mod search;
pub mod seeds;
pub mod stats;

pub use exec::ExecMode;
pub use grid::{Grid, Image, LabelGrid};
