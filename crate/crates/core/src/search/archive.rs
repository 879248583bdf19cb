// SPDX-License-Identifier: Apache-2.0

//! Failure archive with a distance threshold and a replace-if-better rule.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::fitness::{closest, Evaluation, GATE_VALUE};
use crate::grid::{Image, LabelGrid};
use crate::metrics::{FeatureVector, MetricsError};
use crate::scene::Genome;

/// Outcome of offering one candidate to the archive.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum ArchiveEvent {
    Appended,
    /// Replaced the entry at this slot.
    Replaced(usize),
    Discarded,
    /// Irrelevant input; never archived.
    Gated,
}

impl fmt::Display for ArchiveEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArchiveEvent::Appended => f.write_str("appended"),
            ArchiveEvent::Replaced(k) => write!(f, "replaced:{k}"),
            ArchiveEvent::Discarded => f.write_str("discarded"),
            ArchiveEvent::Gated => f.write_str("gated"),
        }
    }
}

impl FromStr for ArchiveEvent {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "appended" => Ok(ArchiveEvent::Appended),
            "discarded" => Ok(ArchiveEvent::Discarded),
            "gated" => Ok(ArchiveEvent::Gated),
            _ => s
                .strip_prefix("replaced:")
                .and_then(|k| k.parse().ok())
                .map(ArchiveEvent::Replaced)
                .ok_or_else(|| format!("unknown archive event `{s}`")),
        }
    }
}

impl From<ArchiveEvent> for String {
    fn from(e: ArchiveEvent) -> Self {
        e.to_string()
    }
}

impl TryFrom<String> for ArchiveEvent {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

/// `Threshold` applies the distance rule; `KeepAll` archives every relevant
/// candidate (used by the unfiltered random baseline).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchivePolicy {
    #[default]
    Threshold,
    KeepAll,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveEntry {
    pub genome: Genome,
    pub features: FeatureVector,
    /// Gated accuracy fitness of the stored image.
    pub f_accuracy: f64,
    pub raw_metric: f64,
    pub ground_truth_miou: f64,
    pub image: Image,
    pub mask: LabelGrid,
    pub generation: usize,
    pub individual: usize,
    /// How this entry got into its slot.
    pub event: ArchiveEvent,
}

impl ArchiveEntry {
    pub fn from_evaluation(eval: &Evaluation, generation: usize, individual: usize, event: ArchiveEvent) -> Self {
        Self {
            genome: eval.genome.clone(),
            features: eval.features.clone(),
            f_accuracy: eval.objectives.f_accuracy,
            raw_metric: eval.objectives.raw_metric,
            ground_truth_miou: eval.ground_truth_miou,
            image: eval.image.clone(),
            mask: eval.mask.clone(),
            generation,
            individual,
            event,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub threshold: f64,
    pub policy: ArchivePolicy,
    entries: Vec<ArchiveEntry>,
}

impl Archive {
    pub fn new(threshold: f64) -> Self {
        Self::with_policy(threshold, ArchivePolicy::Threshold)
    }

    pub fn with_policy(threshold: f64, policy: ArchivePolicy) -> Self {
        Self {
            threshold,
            policy,
            entries: Vec::new(),
        }
    }

    pub fn entries(&self) -> &[ArchiveEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Feature vectors of all entries, in slot order.
    pub fn features(&self) -> Vec<FeatureVector> {
        self.entries.iter().map(|e| e.features.clone()).collect()
    }

    /// Decide what would happen to a candidate without changing the archive.
    pub fn decide(&self, features: &FeatureVector, f_accuracy: f64, gated: bool) -> Result<ArchiveEvent, MetricsError> {
        decide_event(
            self.policy,
            self.threshold,
            self.entries.iter().map(|e| (&e.features, e.f_accuracy)),
            features,
            f_accuracy,
            gated,
        )
    }

    /// Offer an evaluated candidate; exactly one event results.
    pub fn update(
        &mut self,
        eval: &Evaluation,
        generation: usize,
        individual: usize,
    ) -> Result<ArchiveEvent, MetricsError> {
        let event = self.decide(&eval.features, eval.objectives.f_accuracy, eval.objectives.gated)?;
        match event {
            ArchiveEvent::Appended => self
                .entries
                .push(ArchiveEntry::from_evaluation(eval, generation, individual, event)),
            ArchiveEvent::Replaced(k) => {
                self.entries[k] = ArchiveEntry::from_evaluation(eval, generation, individual, event)
            }
            ArchiveEvent::Discarded | ArchiveEvent::Gated => {}
        }
        Ok(event)
    }
}

/// The archive rule over `(features, f_accuracy)` slots. Shared by the live
/// archive and the replay audit.
pub(crate) fn decide_event<'a, I>(
    policy: ArchivePolicy,
    threshold: f64,
    slots: I,
    features: &FeatureVector,
    f_accuracy: f64,
    gated: bool,
) -> Result<ArchiveEvent, MetricsError>
where
    I: Iterator<Item = (&'a FeatureVector, f64)> + Clone,
{
    if gated || f_accuracy >= GATE_VALUE {
        return Ok(ArchiveEvent::Gated);
    }
    if policy == ArchivePolicy::KeepAll {
        return Ok(ArchiveEvent::Appended);
    }
    let stored: Vec<FeatureVector> = slots.clone().map(|(f, _)| f.clone()).collect();
    match closest(features, &stored)? {
        None => Ok(ArchiveEvent::Appended),
        Some((_, d)) if d > threshold => Ok(ArchiveEvent::Appended),
        Some((k, _)) => {
            let slot_accuracy = slots.clone().nth(k).map(|(_, a)| a).unwrap_or(f64::INFINITY);
            if f_accuracy < slot_accuracy {
                Ok(ArchiveEvent::Replaced(k))
            } else {
                Ok(ArchiveEvent::Discarded)
            }
        }
    }
}
