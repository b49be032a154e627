//! Pass@1 scoring per prompt mode, and comparisons between campaigns.
//!
//! Percentages are held as integer tenths. Each split rate and the average
//! of the two rates are computed from exact counts and rounded once, half
//! away from zero. The average uses the unrounded split rates.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use super::TaskResult;
use crate::task::TaskMode;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScoreError {
    #[error("no results to score")]
    NoResults,
    #[error("reports cover different splits: {0}")]
    SplitMismatch(String),
}

/// A percentage with one decimal, stored as tenths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Percent(pub i64);

impl Percent {
    pub fn tenths(self) -> i64 {
        self.0
    }

    /// Parses a one-decimal literal such as `"39.1"` exactly.
    pub fn parse(s: &str) -> Option<Percent> {
        let s = s.trim();
        let (neg, digits) = match s.strip_prefix('-') {
            Some(rest) => (true, rest),
            None => (false, s.strip_prefix('+').unwrap_or(s)),
        };
        let (whole, frac) = digits.split_once('.').unwrap_or((digits, "0"));
        if frac.len() != 1 || whole.is_empty() {
            return None;
        }
        let value = whole.parse::<i64>().ok()? * 10 + frac.parse::<i64>().ok()?;
        Some(Percent(if neg { -value } else { value }))
    }

    pub fn as_f64(self) -> f64 {
        self.0 as f64 / 10.0
    }

    /// Signed rendering used for deltas: `+3.6`, `-0.7`, `0.0`.
    pub fn signed(self) -> String {
        if self.0 > 0 {
            format!("+{self}")
        } else {
            self.to_string()
        }
    }
}

impl fmt::Display for Percent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.0 < 0 { "-" } else { "" };
        let abs = self.0.unsigned_abs();
        write!(f, "{sign}{}.{}", abs / 10, abs % 10)
    }
}

impl std::ops::Sub for Percent {
    type Output = Percent;
    fn sub(self, rhs: Percent) -> Percent {
        Percent(self.0 - rhs.0)
    }
}

impl Serialize for Percent {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.as_f64())
    }
}

impl<'de> Deserialize<'de> for Percent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        Ok(Percent((v * 10.0).round() as i64))
    }
}

/// `round(num / den)` for non-negative operands, ties away from zero.
fn div_round_half_away(num: u128, den: u128) -> i64 {
    ((2 * num + den) / (2 * den)) as i64
}

/// 100 × solved / attempted, in tenths.
pub fn rate(solved: u64, attempted: u64) -> Percent {
    assert!(attempted > 0 && solved <= attempted);
    Percent(div_round_half_away(1000 * solved as u128, attempted as u128))
}

/// Mean of two exact rates, in tenths.
pub fn mean_rate((s_a, n_a): (u64, u64), (s_b, n_b): (u64, u64)) -> Percent {
    assert!(n_a > 0 && n_b > 0);
    let (s_a, n_a, s_b, n_b) = (s_a as u128, n_a as u128, s_b as u128, n_b as u128);
    Percent(div_round_half_away(1000 * (s_a * n_b + s_b * n_a), 2 * n_a * n_b))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub label: String,
    pub complete_score: Option<Percent>,
    pub instruct_score: Option<Percent>,
    pub average_score: Option<Percent>,
    pub n_complete: u64,
    pub n_instruct: u64,
    pub solved_complete: u64,
    pub solved_instruct: u64,
}

impl ScoreReport {
    pub fn split(&self, mode: TaskMode) -> Option<Percent> {
        match mode {
            TaskMode::Complete => self.complete_score,
            TaskMode::Instruct => self.instruct_score,
        }
    }

    /// The stored average agrees with the stored splits up to rounding.
    pub fn is_consistent(&self) -> bool {
        match (self.complete_score, self.instruct_score, self.average_score) {
            (Some(c), Some(i), Some(a)) => (2 * a.0 - (c.0 + i.0)).abs() <= 2,
            (_, _, None) => self.complete_score.is_none() || self.instruct_score.is_none(),
            _ => false,
        }
    }

    /// Rows of (split name, score) in display order.
    pub fn rows(&self) -> Vec<(Split, Percent)> {
        [
            (Split::Complete, self.complete_score),
            (Split::Instruct, self.instruct_score),
            (Split::Average, self.average_score),
        ]
        .into_iter()
        .filter_map(|(s, p)| p.map(|p| (s, p)))
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Complete,
    Instruct,
    Average,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Complete => "Complete",
            Split::Instruct => "Instruct",
            Split::Average => "Average",
        })
    }
}

/// Scores a result set. Splits with no attempts are omitted.
pub fn score(label: &str, results: &[TaskResult]) -> Result<ScoreReport, ScoreError> {
    if results.is_empty() {
        return Err(ScoreError::NoResults);
    }
    let tally = |mode| {
        results
            .iter()
            .filter(|r| r.mode == mode)
            .fold((0u64, 0u64), |(s, n), r| (s + r.solved as u64, n + 1))
    };
    let (solved_complete, n_complete) = tally(TaskMode::Complete);
    let (solved_instruct, n_instruct) = tally(TaskMode::Instruct);
    let split = |s, n| (n > 0).then(|| rate(s, n));
    let average_score = (n_complete > 0 && n_instruct > 0)
        .then(|| mean_rate((solved_complete, n_complete), (solved_instruct, n_instruct)));
    Ok(ScoreReport {
        label: label.to_string(),
        complete_score: split(solved_complete, n_complete),
        instruct_score: split(solved_instruct, n_instruct),
        average_score,
        n_complete,
        n_instruct,
        solved_complete,
        solved_instruct,
    })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaRow {
    pub split: Split,
    pub a: Percent,
    pub b: Percent,
    pub delta: Percent,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeltaTable {
    pub label_a: String,
    pub label_b: String,
    pub rows: Vec<DeltaRow>,
}

impl DeltaTable {
    pub fn row(&self, split: Split) -> Option<&DeltaRow> {
        self.rows.iter().find(|r| r.split == split)
    }
}

/// Signed per-split differences `a − b` between two reports' printed values.
pub fn compare(a: &ScoreReport, b: &ScoreReport) -> Result<DeltaTable, ScoreError> {
    let present = |r: &ScoreReport| (r.complete_score.is_some(), r.instruct_score.is_some());
    if present(a) != present(b) {
        let describe = |r: &ScoreReport| {
            r.rows().iter().map(|(s, _)| s.to_string()).collect::<Vec<_>>().join("+")
        };
        return Err(ScoreError::SplitMismatch(format!(
            "{} has {}, {} has {}",
            a.label,
            describe(a),
            b.label,
            describe(b)
        )));
    }
    let rows = a
        .rows()
        .into_iter()
        .zip(b.rows())
        .map(|((split, pa), (_, pb))| DeltaRow { split, a: pa, b: pb, delta: pa - pb })
        .collect();
    Ok(DeltaTable { label_a: a.label.clone(), label_b: b.label.clone(), rows })
}
