//! Answer-token loss and multiple-choice accuracy.

use crate::domain::{Task, UnderstandingInstance};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

const NORMALIZATION_TOL: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum ScoringError {
    #[error("no masked positions")]
    EmptyMask,
    #[error("row {index} is not a normalized log-distribution (logsumexp = {lse})")]
    UnnormalizedRow { index: usize, lse: f64 },
    #[error("rows, targets and mask lengths differ ({rows}, {targets}, {mask})")]
    LengthMismatch { rows: usize, targets: usize, mask: usize },
    #[error("target {target} at position {index} outside vocabulary of {vocab}")]
    TargetOutOfRange { index: usize, target: usize, vocab: usize },
    #[error("prediction for unknown instance {0}")]
    UnknownInstanceId(String),
    #[error("predictions line {line}: {message}")]
    Predictions { line: usize, message: String },
}

/// Per-position log-probabilities with targets and an answer mask.
#[derive(Debug, Clone, PartialEq)]
pub struct LogProbSequence {
    pub rows: Vec<Vec<f64>>,
    pub targets: Vec<usize>,
    pub answer_mask: Vec<bool>,
}

pub fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl LogProbSequence {
    pub fn validate(&self) -> Result<(), ScoringError> {
        let (r, t, m) = (self.rows.len(), self.targets.len(), self.answer_mask.len());
        if r != t || r != m {
            return Err(ScoringError::LengthMismatch { rows: r, targets: t, mask: m });
        }
        for (index, (row, &target)) in self.rows.iter().zip(&self.targets).enumerate() {
            let lse = log_sum_exp(row);
            if !(lse.abs() <= NORMALIZATION_TOL) {
                return Err(ScoringError::UnnormalizedRow { index, lse });
            }
            if target >= row.len() {
                return Err(ScoringError::TargetOutOfRange { index, target, vocab: row.len() });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NtpLoss {
    /// Negative log-likelihood summed over answer tokens.
    pub sum: f64,
    pub mean: f64,
    pub n_masked: usize,
}

/// Cross-entropy restricted to answer positions.
pub fn masked_ntp_loss(seq: &LogProbSequence) -> Result<NtpLoss, ScoringError> {
    seq.validate()?;
    let mut sum = 0.0;
    let mut n = 0;
    for ((row, &target), &masked) in seq.rows.iter().zip(&seq.targets).zip(&seq.answer_mask) {
        if masked {
            sum -= row[target];
            n += 1;
        }
    }
    if n == 0 {
        return Err(ScoringError::EmptyMask);
    }
    // -0.0 when every target has log-probability exactly 0.
    let sum = sum.max(0.0);
    Ok(NtpLoss { sum, mean: sum / n as f64, n_masked: n })
}

/// Canonical letter for a raw model answer: surrounding whitespace dropped,
/// first alphabetic character, upper-cased.
pub fn normalize_prediction(raw: &str) -> Option<char> {
    raw.trim().chars().find(|c| c.is_alphabetic()).map(|c| c.to_ascii_uppercase())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub n: usize,
    pub correct: usize,
    pub missing: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TaskAccuracyReport {
    pub tasks: BTreeMap<Task, TaskScore>,
    /// Unweighted mean over the tasks present.
    pub average_accuracy: f64,
    pub missing: usize,
}

pub fn score_answers(
    instances: &[UnderstandingInstance],
    predictions: &BTreeMap<String, String>,
) -> Result<TaskAccuracyReport, ScoringError> {
    let mut by_id: BTreeMap<&str, &UnderstandingInstance> = BTreeMap::new();
    for inst in instances {
        by_id.insert(&inst.instance_id, inst);
    }
    if let Some(id) = predictions.keys().find(|id| !by_id.contains_key(id.as_str())) {
        return Err(ScoringError::UnknownInstanceId(id.clone()));
    }
    let mut report = TaskAccuracyReport::default();
    for inst in by_id.values() {
        let score = report.tasks.entry(inst.task).or_default();
        score.n += 1;
        match predictions.get(&inst.instance_id) {
            None => score.missing += 1,
            Some(raw) => {
                let truth = inst.answer_letter.chars().next();
                if normalize_prediction(raw).is_some() && normalize_prediction(raw) == truth {
                    score.correct += 1;
                }
            }
        }
    }
    for score in report.tasks.values_mut() {
        score.accuracy = score.correct as f64 / score.n as f64;
        report.missing += score.missing;
    }
    if !report.tasks.is_empty() {
        report.average_accuracy =
            report.tasks.values().map(|s| s.accuracy).sum::<f64>() / report.tasks.len() as f64;
    }
    Ok(report)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct PredictionLine {
    instance_id: String,
    answer: String,
}

/// Reads `{"instance_id", "answer"}` lines. Later duplicates win.
pub fn read_predictions(path: &Path) -> Result<BTreeMap<String, String>, ScoringError> {
    let io_err = |line: usize, e: &dyn std::fmt::Display| ScoringError::Predictions { line, message: e.to_string() };
    let f = std::fs::File::open(path).map_err(|e| io_err(0, &e))?;
    let mut out = BTreeMap::new();
    for (i, line) in std::io::BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| io_err(i + 1, &e))?;
        if line.trim().is_empty() {
            continue;
        }
        let p: PredictionLine = serde_json::from_str(&line).map_err(|e| io_err(i + 1, &e))?;
        out.insert(p.instance_id, p.answer);
    }
    Ok(out)
}
