//! Head/tail breaks classification for heavy-tailed samples.
//!
//! The sample is split at its arithmetic mean; the values above the mean
//! (the head) are split again at their own mean, and so on while the head
//! stays a minority. Every split is recorded as a [`HeadTailLevel`], which
//! carries the same columns as the usual head/tail statistics table.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default maximum head share per level.
pub const DEFAULT_HEAD_LIMIT: f64 = 0.5;

#[derive(Debug, Error, PartialEq)]
pub enum HeadTailError {
    #[error("head/tail breaks needs at least one value")]
    EmptyInput,
    #[error("value {value} at index {index} is not strictly positive")]
    NonPositiveValue { index: usize, value: f64 },
    #[error("head limit {0} is outside (0, 1]")]
    InvalidHeadLimit(f64),
    #[error("threshold depth must be at least 1")]
    DepthZero,
}

/// Which side of the split receives values exactly equal to the mean.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieRule {
    #[default]
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The last level's head share exceeded the limit (the level is kept).
    LimitExceeded,
    /// The last level's head was empty.
    HeadEmpty,
    /// The last level held a single value, which cannot be split.
    HeadSingleton,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailLevel {
    pub range_lo: f64,
    pub range_hi: f64,
    pub count: usize,
    pub sum: f64,
    pub mean: f64,
    pub head_count: usize,
    pub head_fraction: f64,
    pub tail_count: usize,
    pub tail_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadTailHierarchy {
    pub levels: Vec<HeadTailLevel>,
    pub head_limit: f64,
    pub stop_reason: StopReason,
}

/// Classifies `values` by repeated splitting at the mean.
///
/// Iteration continues into the head while its share of the current level is
/// at most `head_limit`. The first level whose head share exceeds the limit is
/// still reported, with [`StopReason::LimitExceeded`]. A level holding a
/// single value is terminal and reports an empty head.
pub fn head_tail_breaks(values: &[f64], head_limit: f64, tie_rule: TieRule) -> Result<HeadTailHierarchy, HeadTailError> {
    if !(head_limit > 0.0 && head_limit <= 1.0) {
        return Err(HeadTailError::InvalidHeadLimit(head_limit));
    }
    if values.is_empty() {
        return Err(HeadTailError::EmptyInput);
    }
    if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
        return Err(HeadTailError::NonPositiveValue { index, value });
    }

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let mut levels = Vec::new();
    let mut current: &[f64] = &sorted;
    let stop_reason = loop {
        let count = current.len();
        let sum: f64 = current.iter().sum();
        let mean = sum / count as f64;
        let range_lo = current[0];
        let range_hi = current[count - 1];

        if count == 1 {
            levels.push(level(range_lo, range_hi, count, sum, mean, 0));
            break StopReason::HeadSingleton;
        }

        // `current` is sorted, so the head is a suffix.
        let split = match tie_rule {
            TieRule::Head => current.partition_point(|v| *v < mean),
            TieRule::Tail => current.partition_point(|v| *v <= mean),
        };
        let head_count = count - split;
        let lvl = level(range_lo, range_hi, count, sum, mean, head_count);
        let fraction = lvl.head_fraction;
        levels.push(lvl);

        if fraction > head_limit || head_count == count {
            // With a limit of 1 an all-equal level would never shrink; it is
            // reported the same way as an over-limit head.
            break StopReason::LimitExceeded;
        }
        if head_count == 0 {
            break StopReason::HeadEmpty;
        }
        current = &current[split..];
    };

    Ok(HeadTailHierarchy { levels, head_limit, stop_reason })
}

fn level(range_lo: f64, range_hi: f64, count: usize, sum: f64, mean: f64, head_count: usize) -> HeadTailLevel {
    let tail_count = count - head_count;
    let head_fraction = head_count as f64 / count as f64;
    HeadTailLevel { range_lo, range_hi, count, sum, mean, head_count, head_fraction, tail_count, tail_fraction: tail_count as f64 / count as f64 }
}

impl HeadTailHierarchy {
    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }

    pub fn means(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.mean).collect()
    }

    /// Number of levels whose head share respects the limit.
    pub fn valid_depth(&self) -> usize {
        self.levels.iter().filter(|l| l.head_fraction <= self.head_limit).count()
    }

    /// Writes the statistics table as CSV with the columns
    /// `Light, Count, Light*Count, Mean, In head#, In head%, In tail#, In tail%`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["Light", "Count", "Light*Count", "Mean", "In head#", "In head%", "In tail#", "In tail%"])?;
        for l in &self.levels {
            w.write_record([
                format!("{}-{}", fmt_value(l.range_lo), fmt_value(l.range_hi)),
                l.count.to_string(),
                fmt_value(l.sum),
                format!("{:.4}", l.mean),
                l.head_count.to_string(),
                format!("{:.2}%", 100.0 * l.head_fraction),
                l.tail_count.to_string(),
                format!("{:.2}%", 100.0 * l.tail_fraction),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

// Integers print without a fractional part; other values keep six decimals.
fn fmt_value(v: f64) -> String {
    if v.fract() == 0.0 && v.abs() < 1e15 {
        format!("{}", v as i64)
    } else {
        let s = format!("{v:.6}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Number of levels within the head limit, plus one.
pub fn ht_index(h: &HeadTailHierarchy) -> usize {
    h.valid_depth() + 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    Floor,
    Nearest,
}

/// Averages the level means of several yearly hierarchies into integer
/// thresholds.
///
/// For each level `k < depth` the mean is averaged over the years that have
/// a level `k`, then rounded. Duplicate thresholds collapse, so the output is
/// strictly increasing and may be shorter than `depth`.
pub fn multi_year_thresholds(hierarchies: &BTreeMap<i32, HeadTailHierarchy>, depth: usize, rounding: Rounding) -> Result<Vec<i64>, HeadTailError> {
    if depth == 0 {
        return Err(HeadTailError::DepthZero);
    }
    if hierarchies.is_empty() {
        return Err(HeadTailError::EmptyInput);
    }
    let mut out: Vec<i64> = Vec::with_capacity(depth);
    for k in 0..depth {
        let means: Vec<f64> = hierarchies.values().filter_map(|h| h.levels.get(k)).map(|l| l.mean).collect();
        if means.is_empty() {
            break;
        }
        let avg = means.iter().sum::<f64>() / means.len() as f64;
        let t = match rounding {
            Rounding::Floor => avg.floor(),
            Rounding::Nearest => avg.round(),
        } as i64;
        if out.last().is_none_or(|&prev| t > prev) {
            out.push(t);
        }
    }
    Ok(out)
}
