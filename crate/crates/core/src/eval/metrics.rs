//! Accuracy, conflict, and response-bias metrics. All of them are plain
//! enumerate-and-count definitions over aligned prediction sets; the test
//! suite holds an independent brute-force oracle they must match exactly.

use serde::{Deserialize, Serialize};

use super::{DatasetManifest, EvalError, PredictionSet};
use crate::decider::normalize_text;

/// Correct / total. Unresolved predictions count as incorrect.
pub fn accuracy(predictions: &PredictionSet, manifest: &DatasetManifest) -> Result<f64, EvalError> {
    predictions.check_aligned(manifest)?;
    if manifest.records.is_empty() {
        return Ok(0.0);
    }
    let correct = manifest
        .records
        .iter()
        .filter(|r| predictions.get(&r.id).is_some_and(|p| p.is(&r.gold)))
        .count();
    Ok(correct as f64 / manifest.records.len() as f64)
}

/// Modality-conflict metrics over the subset C where the audio-only and
/// visual-only predictions disagree.
///
/// All align/error fields are fractions of C, which is why AlignA + AlignV
/// need not sum to one (the joint prediction can match neither side). When C
/// is empty they are undefined and reported as absent, not as zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConflictReport {
    /// |C| / N: the share of records where audio and visual disagree.
    pub neq_rate: f64,
    /// Share of C where the joint prediction matches the audio-only one.
    pub align_a: Option<f64>,
    /// Share of C where the joint prediction matches the visual-only one.
    pub align_v: Option<f64>,
    /// Share of C where the joint prediction follows the audio side even
    /// though audio is wrong and visual held the gold answer.
    pub error_a: Option<f64>,
    /// The symmetric share for the visual side.
    pub error_v: Option<f64>,
    pub conflict_count: usize,
    pub total: usize,
}

pub fn conflict_metrics(
    audio: &PredictionSet,
    visual: &PredictionSet,
    joint: &PredictionSet,
    manifest: &DatasetManifest,
) -> Result<ConflictReport, EvalError> {
    audio.check_aligned(manifest)?;
    visual.check_aligned(manifest)?;
    joint.check_aligned(manifest)?;

    let total = manifest.records.len();
    let mut conflict_count = 0usize;
    let (mut align_a, mut align_v, mut error_a, mut error_v) = (0usize, 0usize, 0usize, 0usize);

    for record in &manifest.records {
        let a = audio.get(&record.id).expect("aligned");
        let v = visual.get(&record.id).expect("aligned");
        let j = joint.get(&record.id).expect("aligned");
        if a == v {
            continue;
        }
        conflict_count += 1;
        let a_correct = a.is(&record.gold);
        let v_correct = v.is(&record.gold);
        if j == a {
            align_a += 1;
            if !a_correct && v_correct {
                error_a += 1;
            }
        }
        if j == v {
            align_v += 1;
            if !v_correct && a_correct {
                error_v += 1;
            }
        }
    }

    let frac = |n: usize| {
        if conflict_count == 0 {
            None
        } else {
            Some(n as f64 / conflict_count as f64)
        }
    };
    Ok(ConflictReport {
        neq_rate: if total == 0 { 0.0 } else { conflict_count as f64 / total as f64 },
        align_a: frac(align_a),
        align_v: frac(align_v),
        error_a: frac(error_a),
        error_v: frac(error_v),
        conflict_count,
        total,
    })
}

/// Share of resolved predictions equal to "Yes" (case-insensitive).
/// Unresolved predictions are excluded from the denominator so the rate
/// measures response bias, not parser failures. Errors if any resolved
/// label is not yes/no, or if nothing resolved at all.
pub fn yes_rate(predictions: &PredictionSet) -> Result<f64, EvalError> {
    let mut yes = 0usize;
    let mut resolved = 0usize;
    for (_, prediction) in predictions.iter() {
        let Some(label) = prediction.label() else { continue };
        let normalized = normalize_text(label);
        match normalized.as_str() {
            "yes" => {
                yes += 1;
                resolved += 1;
            }
            "no" => {
                resolved += 1;
            }
            _ => return Err(EvalError::NonBinaryTask(label.to_string())),
        }
    }
    if resolved == 0 {
        return Err(EvalError::NoResolvedPredictions);
    }
    Ok(yes as f64 / resolved as f64)
}
