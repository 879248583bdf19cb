// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::metrics::{feature_distance, FeatureVector};
use crate::stats::{self, ComparisonResult};

pub const REPORT_VERSION: u32 = 1;

/// One archived image. `genome` holds the genes joined by `;`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub variant: String,
    pub rep: usize,
    pub generation: usize,
    pub individual: usize,
    pub slot: usize,
    pub genome: String,
    pub genome_seed: u64,
    pub raw_metric: f64,
    pub gated_accuracy: f64,
    /// Against the simulator mask; evaluation only.
    pub ground_truth_miou: f64,
    /// Empty when the archive holds a single image.
    pub feature_distance_to_nearest_in_archive: Option<f64>,
}

pub(crate) const COLUMNS: [&str; 11] = [
    "variant",
    "rep",
    "generation",
    "individual",
    "slot",
    "genome",
    "genome_seed",
    "raw_metric",
    "gated_accuracy",
    "ground_truth_miou",
    "feature_distance_to_nearest_in_archive",
];

/// Report order: variant, repetition, generation, individual.
pub(crate) fn sort_rows(rows: &mut [ImageRecord]) {
    rows.sort_by(|a, b| {
        (&a.variant, a.rep, a.generation, a.individual, a.slot).cmp(&(
            &b.variant,
            b.rep,
            b.generation,
            b.individual,
            b.slot,
        ))
    });
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub rows: Vec<ImageRecord>,
}

impl Report {
    /// Wraps `rows` in report order.
    pub fn new(mut rows: Vec<ImageRecord>) -> Self {
        sort_rows(&mut rows);
        Self {
            schema_version: REPORT_VERSION,
            rows,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
}

impl FromStr for ReportFormat {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            other => Err(HarnessError::Table(format!("unknown report format `{other}`"))),
        }
    }
}

fn csv_error(e: csv::Error) -> HarnessError {
    HarnessError::Table(e.to_string())
}

pub(crate) fn table_bytes(rows: &[ImageRecord]) -> Result<Vec<u8>, HarnessError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(COLUMNS).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.into_inner().map_err(|e| HarnessError::Table(e.to_string()))
}

pub fn report_bytes(report: &Report, format: ReportFormat) -> Result<Vec<u8>, HarnessError> {
    match format {
        ReportFormat::Csv => table_bytes(&report.rows),
        ReportFormat::Json => {
            let mut out = serde_json::to_vec_pretty(report).map_err(|e| HarnessError::Table(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
    }
}

pub fn write_report(report: &Report, format: ReportFormat, path: &Path) -> Result<(), HarnessError> {
    let bytes = report_bytes(report, format)?;
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}

pub fn parse_table(bytes: &[u8]) -> Result<Vec<ImageRecord>, HarnessError> {
    let mut r = csv::Reader::from_reader(bytes);
    let header = r.headers().map_err(csv_error)?.clone();
    if header.iter().ne(COLUMNS) {
        return Err(HarnessError::Table(format!(
            "unexpected columns {:?}",
            header.iter().collect::<Vec<_>>()
        )));
    }
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

/// Read a per-image CSV table (a cell's `metrics.csv` or a `report.csv`).
pub fn read_table(path: &Path) -> Result<Vec<ImageRecord>, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    parse_table(&bytes)
}

pub fn read_report_json(path: &Path) -> Result<Report, HarnessError> {
    let bytes = std::fs::read(path).map_err(|e| HarnessError::io(path, e))?;
    let report: Report = serde_json::from_slice(&bytes).map_err(|e| HarnessError::Table(e.to_string()))?;
    if report.schema_version != REPORT_VERSION {
        return Err(HarnessError::Table(format!(
            "report schema {} not supported (expected {REPORT_VERSION})",
            report.schema_version
        )));
    }
    Ok(report)
}

/// Distance from each archived feature vector to its nearest other entry.
pub fn archive_diversity(features: &[FeatureVector]) -> Result<Vec<f64>, HarnessError> {
    if features.len() < 2 {
        return Err(HarnessError::Table(format!(
            "diversity needs at least 2 archived images, got {}",
            features.len()
        )));
    }
    let mut out = Vec::with_capacity(features.len());
    for (i, a) in features.iter().enumerate() {
        let mut best = f64::INFINITY;
        for (j, b) in features.iter().enumerate() {
            if i != j {
                best = best.min(feature_distance(a, b)?);
            }
        }
        out.push(best);
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MetricColumn {
    RawMetric,
    GatedAccuracy,
    GroundTruthMiou,
    NearestDistance,
}

impl MetricColumn {
    pub fn name(self) -> &'static str {
        match self {
            MetricColumn::RawMetric => "raw_metric",
            MetricColumn::GatedAccuracy => "gated_accuracy",
            MetricColumn::GroundTruthMiou => "ground_truth_miou",
            MetricColumn::NearestDistance => "feature_distance_to_nearest_in_archive",
        }
    }

    pub fn value(self, row: &ImageRecord) -> Option<f64> {
        match self {
            MetricColumn::RawMetric => Some(row.raw_metric),
            MetricColumn::GatedAccuracy => Some(row.gated_accuracy),
            MetricColumn::GroundTruthMiou => Some(row.ground_truth_miou),
            MetricColumn::NearestDistance => row.feature_distance_to_nearest_in_archive,
        }
    }
}

impl fmt::Display for MetricColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricColumn {
    type Err = HarnessError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        [
            MetricColumn::RawMetric,
            MetricColumn::GatedAccuracy,
            MetricColumn::GroundTruthMiou,
            MetricColumn::NearestDistance,
        ]
        .into_iter()
        .find(|c| c.name() == s || (s == "diversity" && *c == MetricColumn::NearestDistance))
        .ok_or_else(|| HarnessError::Table(format!("unknown metric column `{s}`")))
    }
}

fn pairing_key(row: &ImageRecord) -> (usize, &str, u64) {
    (row.rep, row.genome.as_str(), row.genome_seed)
}

/// Compare one column of two tables. Unpaired: Mann-Whitney U and Â₁₂ over
/// all rows with a value. Paired: rows are matched on
/// `(rep, genome, genome_seed)`; both tables must hold the same keys.
pub fn compare_runs(
    a: &[ImageRecord],
    b: &[ImageRecord],
    column: MetricColumn,
    paired: bool,
) -> Result<ComparisonResult, HarnessError> {
    if !paired {
        let xs: Vec<f64> = a.iter().filter_map(|r| column.value(r)).collect();
        let ys: Vec<f64> = b.iter().filter_map(|r| column.value(r)).collect();
        return Ok(stats::compare_unpaired(&xs, &ys)?);
    }
    if a.len() != b.len() {
        return Err(HarnessError::Table(format!(
            "paired comparison needs equal row counts, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut sa: Vec<&ImageRecord> = a.iter().collect();
    let mut sb: Vec<&ImageRecord> = b.iter().collect();
    sa.sort_by(|x, y| pairing_key(x).cmp(&pairing_key(y)));
    sb.sort_by(|x, y| pairing_key(x).cmp(&pairing_key(y)));
    let mut xs = Vec::with_capacity(a.len());
    let mut ys = Vec::with_capacity(b.len());
    for (x, y) in sa.iter().zip(&sb) {
        if pairing_key(x) != pairing_key(y) {
            return Err(HarnessError::Table(format!(
                "rows are not aligned: rep {} genome {} has no partner",
                x.rep, x.genome
            )));
        }
        match (column.value(x), column.value(y)) {
            (Some(u), Some(v)) => {
                xs.push(u);
                ys.push(v);
            }
            _ => {
                return Err(HarnessError::Table(format!(
                    "column {column} is empty for rep {} genome {}",
                    x.rep, x.genome
                )))
            }
        }
    }
    Ok(stats::compare_paired(&xs, &ys)?)
}

/// Headline numbers of one cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub variant: String,
    pub rep: usize,
    pub seed: u64,
    pub evaluations: usize,
    pub archive_size: usize,
    pub mean_raw_metric: Option<f64>,
    pub mean_gated_accuracy: Option<f64>,
    pub mean_ground_truth_miou: Option<f64>,
    pub mean_nearest_distance: Option<f64>,
    pub status: String,
}

fn mean(values: impl Iterator<Item = f64>) -> Option<f64> {
    let (sum, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    (n > 0).then(|| sum / n as f64)
}

impl CellSummary {
    pub(crate) fn from_rows(
        variant: String,
        rep: usize,
        seed: u64,
        evaluations: usize,
        rows: &[ImageRecord],
        status: String,
    ) -> Self {
        Self {
            variant,
            rep,
            seed,
            evaluations,
            archive_size: rows.len(),
            mean_raw_metric: mean(rows.iter().map(|r| r.raw_metric)),
            mean_gated_accuracy: mean(rows.iter().map(|r| r.gated_accuracy)),
            mean_ground_truth_miou: mean(rows.iter().map(|r| r.ground_truth_miou)),
            mean_nearest_distance: mean(rows.iter().filter_map(|r| r.feature_distance_to_nearest_in_archive)),
            status,
        }
    }
}

pub fn write_summary(summaries: &[CellSummary], path: &Path) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    if summaries.is_empty() {
        w.write_record([
            "variant",
            "rep",
            "seed",
            "evaluations",
            "archive_size",
            "mean_raw_metric",
            "mean_gated_accuracy",
            "mean_ground_truth_miou",
            "mean_nearest_distance",
            "status",
        ])
        .map_err(csv_error)?;
    }
    for s in summaries {
        w.serialize(s).map_err(csv_error)?;
    }
    let bytes = w.into_inner().map_err(|e| HarnessError::Table(e.to_string()))?;
    std::fs::write(path, bytes).map_err(|e| HarnessError::io(path, e))
}
