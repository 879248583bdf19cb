// SPDX-License-Identifier: Apache-2.0

//! Replay audit of archive decisions and front-0 checks from a run log.

use serde::{Deserialize, Serialize};

use super::archive::{decide_event, ArchiveEvent, ArchivePolicy};
use super::{dominates, Archive, RunLogRecord};
use crate::exec::{self, ExecMode};
use crate::fitness::{closest, Evaluator, FitnessError, GATE_VALUE};
use crate::metrics::{FeatureVector, MetricsError};

/// One archive offer as seen by the replay.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayStep {
    pub features: FeatureVector,
    pub f_accuracy: f64,
    pub event: ArchiveEvent,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub appended: usize,
    pub replaced: usize,
    pub discarded: usize,
    pub gated: usize,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AuditError {
    #[error("step {step}: append at distance {distance} not above threshold {threshold}")]
    AppendTooClose { step: usize, distance: f64, threshold: f64 },
    #[error("step {step}: replacement of slot {slot} did not lower f_accuracy ({old} -> {new})")]
    ReplacementNotBetter {
        step: usize,
        slot: usize,
        old: f64,
        new: f64,
    },
    #[error("step {step}: replaced slot {slot} does not exist")]
    MissingSlot { step: usize, slot: usize },
    #[error("step {step}: candidate with f_accuracy {f_accuracy} was archived although gated")]
    GatedArchived { step: usize, f_accuracy: f64 },
    #[error("step {step}: recorded `{recorded}` but the archive rule gives `{expected}`")]
    EventMismatch {
        step: usize,
        recorded: ArchiveEvent,
        expected: ArchiveEvent,
    },
    #[error("replayed archive differs from the stored archive: {0}")]
    FinalStateMismatch(String),
    #[error("generation {generation}: individual {dominator} dominates front-0 member {member}")]
    FrontZero {
        generation: usize,
        dominator: usize,
        member: usize,
    },
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Fitness(#[from] FitnessError),
}

/// Replay archive events from an empty archive, checking each against the
/// archive invariants and the archive rule. Returns the final slots.
pub fn replay_archive(
    threshold: f64,
    policy: ArchivePolicy,
    steps: &[ReplayStep],
) -> Result<(Vec<(FeatureVector, f64)>, AuditReport), AuditError> {
    let mut slots: Vec<(FeatureVector, f64)> = Vec::new();
    let mut report = AuditReport::default();
    for (step, s) in steps.iter().enumerate() {
        let archived = matches!(s.event, ArchiveEvent::Appended | ArchiveEvent::Replaced(_));
        if archived && s.f_accuracy >= GATE_VALUE {
            return Err(AuditError::GatedArchived {
                step,
                f_accuracy: s.f_accuracy,
            });
        }
        match s.event {
            ArchiveEvent::Appended => {
                if policy == ArchivePolicy::Threshold {
                    let stored: Vec<FeatureVector> = slots.iter().map(|(f, _)| f.clone()).collect();
                    if let Some((_, distance)) = closest(&s.features, &stored)? {
                        if distance <= threshold {
                            return Err(AuditError::AppendTooClose {
                                step,
                                distance,
                                threshold,
                            });
                        }
                    }
                }
                report.appended += 1;
            }
            ArchiveEvent::Replaced(slot) => {
                let Some((_, old)) = slots.get(slot) else {
                    return Err(AuditError::MissingSlot { step, slot });
                };
                if s.f_accuracy >= *old {
                    return Err(AuditError::ReplacementNotBetter {
                        step,
                        slot,
                        old: *old,
                        new: s.f_accuracy,
                    });
                }
                report.replaced += 1;
            }
            ArchiveEvent::Discarded => report.discarded += 1,
            ArchiveEvent::Gated => report.gated += 1,
        }
        let gated = s.event == ArchiveEvent::Gated || s.f_accuracy >= GATE_VALUE;
        let expected = decide_event(
            policy,
            threshold,
            slots.iter().map(|(f, a)| (f, *a)),
            &s.features,
            s.f_accuracy,
            gated,
        )?;
        if expected != s.event {
            return Err(AuditError::EventMismatch {
                step,
                recorded: s.event,
                expected,
            });
        }
        match s.event {
            ArchiveEvent::Appended => slots.push((s.features.clone(), s.f_accuracy)),
            ArchiveEvent::Replaced(k) => slots[k] = (s.features.clone(), s.f_accuracy),
            _ => {}
        }
    }
    Ok((slots, report))
}

/// Recompute every logged candidate's features from its genome, replay the
/// archive from the log alone and compare with the stored archive.
pub fn audit_run(
    log: &[RunLogRecord],
    archive: &Archive,
    evaluator: &Evaluator<'_>,
    mode: ExecMode,
) -> Result<AuditReport, AuditError> {
    let features = exec::try_map(mode, log, |_, r| evaluator.features_of(&r.genome()))?;
    let steps: Vec<ReplayStep> = log
        .iter()
        .zip(features)
        .map(|(r, features)| ReplayStep {
            features,
            f_accuracy: r.f_accuracy_gated,
            event: r.archive_event,
        })
        .collect();
    let (slots, report) = replay_archive(archive.threshold, archive.policy, &steps)?;
    if slots.len() != archive.len() {
        return Err(AuditError::FinalStateMismatch(format!(
            "{} replayed slots, {} stored",
            slots.len(),
            archive.len()
        )));
    }
    for (k, ((f, acc), entry)) in slots.iter().zip(archive.entries()).enumerate() {
        if f != &entry.features || *acc != entry.f_accuracy {
            return Err(AuditError::FinalStateMismatch(format!("slot {k}")));
        }
    }
    Ok(report)
}

/// No archive-eligible evaluation of a generation dominates any rank-0
/// member of that generation.
pub fn check_front_zero(log: &[RunLogRecord]) -> Result<(), AuditError> {
    let mut start = 0;
    while start < log.len() {
        let generation = log[start].generation;
        let end = start + log[start..].iter().take_while(|r| r.generation == generation).count();
        let batch = &log[start..end];
        for member in batch.iter().filter(|r| r.rank == 0) {
            if let Some(d) = batch
                .iter()
                .filter(|r| !r.gated())
                .find(|r| dominates(&r.objectives(), &member.objectives()))
            {
                return Err(AuditError::FrontZero {
                    generation,
                    dominator: d.individual,
                    member: member.individual,
                });
            }
        }
        start = end;
    }
    Ok(())
}
