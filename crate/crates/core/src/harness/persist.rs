// SPDX-License-Identifier: Apache-2.0

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::report::{archive_diversity, parse_table, table_bytes, CellSummary, ImageRecord};
use super::{Approach, HarnessError, RunArtifacts};
use crate::exec::{self, ExecMode};
use crate::fitness::{Evaluator, FitnessConfig};
use crate::metrics::feature_distance;
use crate::scene::{pgm, RealismTransform};
use crate::search::{
    read_run_log, replay_archive, write_run_log, Archive, ArchiveEvent, ArchivePolicy, ReplayStep, RunLogRecord,
    SearchOutcome, SearchSettings,
};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Relative to the cell directory, `/`-separated.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellManifest {
    pub schema_version: u32,
    pub approach: Approach,
    pub rep: usize,
    pub seed: u64,
    pub similarity_threshold: f64,
    pub archive_policy: ArchivePolicy,
    pub settings: SearchSettings,
    pub fitness: FitnessConfig,
    pub transform: RealismTransform,
    pub evaluations: usize,
    pub archive_size: usize,
    /// `complete`, or `failed: <reason>` for a partial cell.
    pub status: String,
    pub files: Vec<ManifestFile>,
}

pub(crate) struct Cell<'a> {
    pub approach: Approach,
    pub rep: usize,
    pub seed: u64,
    pub threshold: f64,
    pub policy: ArchivePolicy,
    pub settings: SearchSettings,
    pub config: &'a FitnessConfig,
    pub transform: RealismTransform,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn image_name(slot: usize) -> String {
    format!("archive/slot-{slot:03}-image.pgm")
}

fn mask_name(slot: usize) -> String {
    format!("archive/slot-{slot:03}-mask.pgm")
}

/// Per-image rows of an archive, in slot order.
pub fn image_rows(approach: &Approach, rep: usize, archive: &Archive) -> Result<Vec<ImageRecord>, HarnessError> {
    let features = archive.features();
    let nearest = if features.len() >= 2 {
        archive_diversity(&features)?.into_iter().map(Some).collect()
    } else {
        vec![None; features.len()]
    };
    Ok(archive
        .entries()
        .iter()
        .zip(nearest)
        .enumerate()
        .map(|(slot, (e, d))| ImageRecord {
            variant: approach.id(),
            rep,
            generation: e.generation,
            individual: e.individual,
            slot,
            genome: e.genome.genes_key(),
            genome_seed: e.genome.seed,
            raw_metric: e.raw_metric,
            gated_accuracy: e.f_accuracy,
            ground_truth_miou: e.ground_truth_miou,
            feature_distance_to_nearest_in_archive: d,
        })
        .collect())
}

/// Persist one cell: archive images and masks, run log, per-image table and
/// a manifest hashing every file. Replaces any previous contents of `dir`.
pub(crate) fn write_cell(
    dir: &Path,
    cell: &Cell<'_>,
    outcome: &SearchOutcome,
    failure: Option<&str>,
) -> Result<(RunArtifacts, Vec<ImageRecord>, CellSummary), HarnessError> {
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| HarnessError::io(dir, e))?;
    }
    let archive_dir = dir.join("archive");
    std::fs::create_dir_all(&archive_dir).map_err(|e| HarnessError::io(&archive_dir, e))?;

    let mut files: Vec<(String, Vec<u8>)> = Vec::new();
    for (slot, entry) in outcome.archive.entries().iter().enumerate() {
        files.push((image_name(slot), pgm::encode_image(&entry.image)));
        files.push((mask_name(slot), pgm::encode_mask(&entry.mask)));
    }
    let mut log = Vec::new();
    write_run_log(&mut log, &outcome.log).map_err(|e| HarnessError::io(&dir.join("run_log.ndjson"), e))?;
    files.push(("run_log.ndjson".into(), log));
    let rows = image_rows(&cell.approach, cell.rep, &outcome.archive)?;
    files.push(("metrics.csv".into(), table_bytes(&rows)?));
    files.sort_by(|a, b| a.0.cmp(&b.0));

    let mut listed = Vec::with_capacity(files.len());
    for (name, bytes) in &files {
        let path = dir.join(name);
        std::fs::write(&path, bytes).map_err(|e| HarnessError::io(&path, e))?;
        listed.push(ManifestFile {
            path: name.clone(),
            sha256: sha256_hex(bytes),
            bytes: bytes.len() as u64,
        });
    }
    let status = match failure {
        None => "complete".to_string(),
        Some(reason) => format!("failed: {reason}"),
    };
    let manifest = CellManifest {
        schema_version: MANIFEST_VERSION,
        approach: cell.approach,
        rep: cell.rep,
        seed: cell.seed,
        similarity_threshold: cell.threshold,
        archive_policy: cell.policy,
        settings: cell.settings,
        fitness: cell.config.clone(),
        transform: cell.transform,
        evaluations: outcome.evaluations,
        archive_size: outcome.archive.len(),
        status: status.clone(),
        files: listed,
    };
    let manifest_path = dir.join("manifest.json");
    let mut bytes = serde_json::to_vec_pretty(&manifest).map_err(|e| HarnessError::Table(e.to_string()))?;
    bytes.push(b'\n');
    std::fs::write(&manifest_path, bytes).map_err(|e| HarnessError::io(&manifest_path, e))?;

    let summary = CellSummary::from_rows(
        cell.approach.id(),
        cell.rep,
        cell.seed,
        outcome.evaluations,
        &rows,
        status,
    );
    let artifacts = RunArtifacts {
        approach: cell.approach,
        rep: cell.rep,
        seed: cell.seed,
        dir: dir.to_path_buf(),
        archive_dir,
        run_log: dir.join("run_log.ndjson"),
        metrics: dir.join("metrics.csv"),
        manifest: manifest_path,
        evaluations: outcome.evaluations,
        archive_size: outcome.archive.len(),
    };
    Ok((artifacts, rows, summary))
}

fn read(path: &Path) -> Result<Vec<u8>, HarnessError> {
    std::fs::read(path).map_err(|e| HarnessError::io(path, e))
}

fn fail(msg: String) -> HarnessError {
    HarnessError::Verify(msg)
}

/// Recompute a persisted cell from its run log alone: check file hashes,
/// re-render every logged genome, replay the archive decisions, and compare
/// the archive images and per-image table with what was written.
/// `evaluator` must match the cell's configuration.
pub fn verify_cell(dir: &Path, evaluator: &Evaluator<'_>, mode: ExecMode) -> Result<CellManifest, HarnessError> {
    let manifest: CellManifest =
        serde_json::from_slice(&read(&dir.join("manifest.json"))?).map_err(|e| fail(e.to_string()))?;
    for f in &manifest.files {
        let bytes = read(&dir.join(&f.path))?;
        if sha256_hex(&bytes) != f.sha256 {
            return Err(fail(format!("hash mismatch for {}", f.path)));
        }
    }
    let log: Vec<RunLogRecord> =
        read_run_log(&read(&dir.join("run_log.ndjson"))?[..]).map_err(|e| fail(e.to_string()))?;
    if log.len() != manifest.evaluations {
        return Err(fail(format!(
            "{} log records, {} evaluations",
            log.len(),
            manifest.evaluations
        )));
    }

    let features = exec::try_map(mode, &log, |_, r| evaluator.features_of(&r.genome()))?;
    let steps: Vec<ReplayStep> = log
        .iter()
        .zip(&features)
        .map(|(r, f)| ReplayStep {
            features: f.clone(),
            f_accuracy: r.f_accuracy_gated,
            event: r.archive_event,
        })
        .collect();
    let (slots, _) = replay_archive(manifest.similarity_threshold, manifest.archive_policy, &steps)?;
    let mut owner: Vec<usize> = Vec::new();
    for (i, r) in log.iter().enumerate() {
        match r.archive_event {
            ArchiveEvent::Appended => owner.push(i),
            ArchiveEvent::Replaced(k) => owner[k] = i,
            _ => {}
        }
    }
    if slots.len() != manifest.archive_size {
        return Err(fail(format!(
            "replay gives {} slots, manifest says {}",
            slots.len(),
            manifest.archive_size
        )));
    }

    let rows = parse_table(&read(&dir.join("metrics.csv"))?)?;
    if rows.len() != slots.len() {
        return Err(fail(format!("{} table rows for {} slots", rows.len(), slots.len())));
    }
    for (slot, row) in rows.iter().enumerate() {
        let r = &log[owner[slot]];
        let genome = r.genome();
        let same = row.slot == slot
            && row.generation == r.generation
            && row.individual == r.individual
            && row.genome == genome.genes_key()
            && row.genome_seed == r.genome_seed
            && row.raw_metric == r.f_accuracy_raw
            && row.gated_accuracy == r.f_accuracy_gated
            && row.ground_truth_miou == r.ground_truth_miou;
        if !same {
            return Err(fail(format!("table row {slot} disagrees with the run log")));
        }
        let nearest = if slots.len() >= 2 {
            let mut best = f64::INFINITY;
            for (j, (f, _)) in slots.iter().enumerate() {
                if j != slot {
                    best = best.min(feature_distance(&slots[slot].0, f)?);
                }
            }
            Some(best)
        } else {
            None
        };
        if row.feature_distance_to_nearest_in_archive != nearest {
            return Err(fail(format!("slot {slot}: nearest distance does not replay")));
        }
        let (scene, image) = evaluator.pipeline.render(&genome)?;
        if read(&dir.join(image_name(slot)))? != pgm::encode_image(&image)
            || read(&dir.join(mask_name(slot)))? != pgm::encode_mask(&scene.mask)
        {
            return Err(fail(format!("slot {slot}: archived image does not re-render")));
        }
    }
    Ok(manifest)
}
