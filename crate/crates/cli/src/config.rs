// SPDX-License-Identifier: Apache-2.0

//! TOML run configuration. Keys mirror the `run` flags; flags win.

use std::path::{Path, PathBuf};

use serde::Deserialize;

/// One approach id or a list of them.
#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(untagged)]
pub enum OneOrMany {
    One(String),
    Many(Vec<String>),
}

impl OneOrMany {
    pub fn into_vec(self) -> Vec<String> {
        match self {
            OneOrMany::One(s) => s.split(',').map(|p| p.trim().to_string()).collect(),
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct RunFile {
    pub variant: Option<OneOrMany>,
    pub reps: Option<usize>,
    pub pop: Option<usize>,
    pub gens: Option<usize>,
    pub mut_prob: Option<f64>,
    pub cross_prob: Option<f64>,
    pub t_similarity: Option<f64>,
    pub noise_var: Option<f64>,
    pub mcd_passes: Option<usize>,
    pub sky_threshold: Option<f64>,
    pub calibration_images: Option<usize>,
    pub random_images: Option<usize>,
    pub transform: Option<String>,
    pub model: Option<String>,
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub no_archive: Option<bool>,
    pub sequential: Option<bool>,
}

impl RunFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| anyhow::anyhow!("{}: {e}", path.display()))
    }
}

/// Output root: flag, then `ORBIT_OUT`, then the config file, then the
/// working-directory default.
pub fn output_root(flag: Option<PathBuf>, env: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(env).or(file).unwrap_or_else(|| PathBuf::from("orbit-out"))
}
