// SPDX-License-Identifier: Apache-2.0

//! Rank-based comparison of samples: Mann-Whitney U with Vargha-Delaney
//! Â₁₂, Wilcoxon signed-rank with Ê, effect classification, and summaries.
//!
//! Exact p-values are computed on doubled midranks, which are integers, so
//! the null distributions are enumerated without rounding.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

/// Largest pooled size for which the U test enumerates exactly.
pub const MWU_EXACT_MAX: usize = 20;
/// Largest number of non-zero differences for which Wilcoxon enumerates.
pub const WILCOXON_EXACT_MAX: usize = 12;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum StatsError {
    #[error("sample is empty")]
    EmptySample,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("all paired differences are zero: no signal")]
    NoSignal,
    #[error("effect size {0} outside [0, 1]")]
    OutOfRange(f64),
    #[error("rank sums are both zero")]
    ZeroDenominator,
    #[error("paired samples differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectClass {
    Negligible,
    Small,
    Medium,
    Large,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PMethod {
    /// Exact below the size cut-off, normal approximation above.
    #[default]
    Auto,
    Exact,
    Normal,
}

fn check(sample: &[f64]) -> Result<(), StatsError> {
    if sample.is_empty() {
        return Err(StatsError::EmptySample);
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    Ok(())
}

/// 1-based ranks with ties sharing the mean of their positions.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// `Σ (t³ − t)` over tie groups.
fn tie_term(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut total = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = i + sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = (j - i) as f64;
        total += t * t * t - t;
        i = j;
    }
    total
}

fn two_sided_normal(deviation: f64, sd: f64) -> f64 {
    if sd <= 0.0 {
        return 1.0;
    }
    let z = ((deviation.abs() - 0.5) / sd).max(0.0);
    let std = Normal::standard();
    (2.0 * std.sf(z)).min(1.0)
}

/// Two-sided p under a null distribution given as counts per (doubled) sum
/// `s`. `center2x2` is twice the centre, so deviations `|2s − center2x2|`
/// stay integral.
fn two_sided_from_counts(counts: &[f64], observed2: i64, center2x2: i64) -> f64 {
    let total: f64 = counts.iter().sum();
    let obs_dev = (2 * observed2 - center2x2).abs();
    let extreme: f64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (2 * *s as i64 - center2x2).abs() >= obs_dev)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// Wins of `x` over `y`, ties counting one half.
    pub u_x: f64,
    pub u_y: f64,
    pub p_value: f64,
    pub exact: bool,
}

pub fn mann_whitney_u(x: &[f64], y: &[f64]) -> Result<MannWhitney, StatsError> {
    mann_whitney_u_with(x, y, PMethod::Auto)
}

pub fn mann_whitney_u_with(x: &[f64], y: &[f64], method: PMethod) -> Result<MannWhitney, StatsError> {
    check(x)?;
    check(y)?;
    let (nx, ny) = (x.len(), y.len());
    let pooled: Vec<f64> = x.iter().chain(y).copied().collect();
    let ranks = midranks(&pooled);
    let doubled: Vec<i64> = ranks.iter().map(|r| (2.0 * r).round() as i64).collect();
    let rank_sum2: i64 = doubled[..nx].iter().sum();
    let offset2 = (nx * (nx + 1)) as i64;
    let u_x = (rank_sum2 - offset2) as f64 / 2.0;
    let u_y = (nx * ny) as f64 - u_x;
    let exact = match method {
        PMethod::Exact => true,
        PMethod::Normal => false,
        PMethod::Auto => nx + ny <= MWU_EXACT_MAX,
    };
    let p_value = if exact {
        // counts[k][s]: subsets of size k with doubled rank sum s
        let max_sum: usize = doubled.iter().map(|&d| d as usize).sum();
        let mut counts = vec![vec![0.0f64; max_sum + 1]; nx + 1];
        counts[0][0] = 1.0;
        for &d in &doubled {
            let d = d as usize;
            for k in (1..=nx).rev() {
                for s in (d..=max_sum).rev() {
                    let add = counts[k - 1][s - d];
                    if add != 0.0 {
                        counts[k][s] += add;
                    }
                }
            }
        }
        // the doubled rank sum is symmetric about nx(N+1)
        let center2x2 = 2 * (nx * (nx + ny + 1)) as i64;
        two_sided_from_counts(&counts[nx], rank_sum2, center2x2)
    } else {
        let n = (nx + ny) as f64;
        let mean = (nx * ny) as f64 / 2.0;
        let var = (nx * ny) as f64 / 12.0 * ((n + 1.0) - tie_term(&pooled) / (n * (n - 1.0)));
        two_sided_normal(u_x - mean, var.max(0.0).sqrt())
    };
    Ok(MannWhitney {
        u_x,
        u_y,
        p_value,
        exact,
    })
}

/// Probability that a draw from `x` exceeds a draw from `y`, ties counting
/// one half.
pub fn vargha_delaney_a12(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    check(x)?;
    check(y)?;
    let mut ys = y.to_vec();
    ys.sort_by(f64::total_cmp);
    let mut wins = 0.0;
    for &v in x {
        let below = ys.partition_point(|&w| w < v);
        let not_above = ys.partition_point(|&w| w <= v);
        wins += below as f64 + 0.5 * (not_above - below) as f64;
    }
    Ok(wins / (x.len() * y.len()) as f64)
}

/// Effect bands shared by Â₁₂ and Ê.
pub fn classify_a12(a: f64) -> Result<EffectClass, StatsError> {
    if !(0.0..=1.0).contains(&a) {
        return Err(StatsError::OutOfRange(a));
    }
    Ok(if a <= 0.29 || a >= 0.71 {
        EffectClass::Large
    } else if a <= 0.36 || a >= 0.64 {
        EffectClass::Medium
    } else if a <= 0.44 || a >= 0.56 {
        EffectClass::Small
    } else {
        EffectClass::Negligible
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wilcoxon {
    pub r_plus: f64,
    pub r_minus: f64,
    /// Non-zero differences actually ranked.
    pub n: usize,
    pub p_value: f64,
    pub exact: bool,
}

pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<Wilcoxon, StatsError> {
    wilcoxon_signed_rank_with(diffs, PMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(diffs: &[f64], method: PMethod) -> Result<Wilcoxon, StatsError> {
    check(diffs)?;
    let nonzero: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    if nonzero.is_empty() {
        return Err(StatsError::NoSignal);
    }
    let n = nonzero.len();
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let doubled: Vec<i64> = midranks(&abs).iter().map(|r| (2.0 * r).round() as i64).collect();
    let plus2: i64 = nonzero
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total2: i64 = doubled.iter().sum();
    let r_plus = plus2 as f64 / 2.0;
    let r_minus = (total2 - plus2) as f64 / 2.0;
    let exact = match method {
        PMethod::Exact => true,
        PMethod::Normal => false,
        PMethod::Auto => n <= WILCOXON_EXACT_MAX,
    };
    let p_value = if exact {
        // counts[s]: sign assignments with doubled positive rank sum s
        let mut counts = vec![0.0f64; total2 as usize + 1];
        counts[0] = 1.0;
        for &d in &doubled {
            let d = d as usize;
            for s in (d..counts.len()).rev() {
                counts[s] += counts[s - d];
            }
        }
        two_sided_from_counts(&counts, plus2, total2)
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term(&abs) / 48.0;
        two_sided_normal(r_plus - mean, var.max(0.0).sqrt())
    };
    Ok(Wilcoxon {
        r_plus,
        r_minus,
        n,
        p_value,
        exact,
    })
}

/// `R⁺ / (R⁺ + R⁻)`.
pub fn e_hat(r_plus: f64, r_minus: f64) -> Result<f64, StatsError> {
    let total = r_plus + r_minus;
    if total <= 0.0 {
        return Err(StatsError::ZeroDenominator);
    }
    Ok(r_plus / total)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestKind {
    MannWhitney,
    Wilcoxon,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub test: TestKind,
    /// `U_x` for the unpaired test, `R⁺` for the paired one.
    pub statistic: f64,
    pub p_value: f64,
    /// Â₁₂ (unpaired) or Ê (paired).
    pub effect: f64,
    pub effect_class: EffectClass,
    pub n_x: usize,
    pub n_y: usize,
    pub r_plus: Option<f64>,
    pub r_minus: Option<f64>,
}

pub fn compare_unpaired(x: &[f64], y: &[f64]) -> Result<ComparisonResult, StatsError> {
    let mw = mann_whitney_u(x, y)?;
    let effect = vargha_delaney_a12(x, y)?;
    Ok(ComparisonResult {
        test: TestKind::MannWhitney,
        statistic: mw.u_x,
        p_value: mw.p_value,
        effect,
        effect_class: classify_a12(effect)?,
        n_x: x.len(),
        n_y: y.len(),
        r_plus: None,
        r_minus: None,
    })
}

/// Paired comparison on `a[i] − b[i]`. Identical samples carry no signal;
/// they are reported as Ê = 0.5 with p = 1 instead of an error.
pub fn compare_paired(a: &[f64], b: &[f64]) -> Result<ComparisonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let (statistic, p_value, effect, r_plus, r_minus) = match wilcoxon_signed_rank(&diffs) {
        Ok(w) => (w.r_plus, w.p_value, e_hat(w.r_plus, w.r_minus)?, w.r_plus, w.r_minus),
        Err(StatsError::NoSignal) => (0.0, 1.0, 0.5, 0.0, 0.0),
        Err(e) => return Err(e),
    };
    Ok(ComparisonResult {
        test: TestKind::Wilcoxon,
        statistic,
        p_value,
        effect,
        effect_class: classify_a12(effect)?,
        n_x: a.len(),
        n_y: b.len(),
        r_plus: Some(r_plus),
        r_minus: Some(r_minus),
    })
}

/// Descriptive statistics; quartiles by linear interpolation between order
/// statistics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation; 0 for a single value.
    pub std_dev: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn summarize(sample: &[f64]) -> Result<Summary, StatsError> {
    check(sample)?;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len();
    let mean = sorted.iter().sum::<f64>() / n as f64;
    let std_dev = if n > 1 {
        (sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    Ok(Summary {
        n,
        mean,
        std_dev,
        min: sorted[0],
        q1: quantile(&sorted, 0.25),
        median: quantile(&sorted, 0.5),
        q3: quantile(&sorted, 0.75),
        max: sorted[n - 1],
    })
}
