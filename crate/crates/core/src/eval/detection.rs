//! Keyword detection metrics: thresholded decisions per (utterance,
//! keyword) pair scored against transcript presence, with per-keyword
//! precision/recall/F1 and macro/micro aggregates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrfCounts {
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

/// Precision/recall/F1 with explicit definedness: precision is undefined
/// when nothing was detected, recall when the keyword never occurs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PrfCell {
    #[serde(flatten)]
    pub counts: PrfCounts,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

impl PrfCell {
    pub fn from_counts(counts: PrfCounts) -> PrfCell {
        let precision = if counts.tp + counts.fp > 0 {
            Some(counts.tp as f64 / (counts.tp + counts.fp) as f64)
        } else {
            None
        };
        let recall = if counts.tp + counts.fn_ > 0 {
            Some(counts.tp as f64 / (counts.tp + counts.fn_) as f64)
        } else {
            None
        };
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        PrfCell {
            counts,
            precision,
            recall,
            f1,
        }
    }
}

/// Macro average over keywords with a defined value; undefined keywords are
/// excluded and counted.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroCell {
    pub mean: Option<f64>,
    pub defined: usize,
    pub undefined: usize,
}

pub fn macro_over<I: IntoIterator<Item = Option<f64>>>(values: I) -> MacroCell {
    let mut sum = 0.0;
    let mut defined = 0usize;
    let mut undefined = 0usize;
    for v in values {
        match v {
            Some(x) => {
                sum += x;
                defined += 1;
            }
            None => undefined += 1,
        }
    }
    MacroCell {
        mean: if defined > 0 {
            Some(sum / defined as f64)
        } else {
            None
        },
        defined,
        undefined,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionReport {
    pub per_keyword: Vec<PrfCell>,
    pub macro_precision: MacroCell,
    pub macro_recall: MacroCell,
    pub macro_f1: MacroCell,
    /// Pooled counts over all keywords.
    pub micro: PrfCell,
}

/// Score every keyword over a test collection: decide `score >= theta`,
/// compare with transcript presence.
///
/// `scores[u][w]` and `presence[u][w]` are indexed by utterance then
/// keyword.
pub fn eval_detection(
    scores: &[Vec<f64>],
    presence: &[Vec<bool>],
    theta: f64,
) -> Result<DetectionReport> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    if scores.len() != presence.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: presence.len(),
        });
    }
    let v = scores[0].len();
    for (s, p) in scores.iter().zip(presence) {
        if s.len() != v || p.len() != v {
            return Err(Error::LengthMismatch {
                left: s.len(),
                right: p.len(),
            });
        }
    }

    let mut per_keyword = Vec::with_capacity(v);
    let mut pooled = PrfCounts::default();
    for w in 0..v {
        let mut c = PrfCounts::default();
        for (s, p) in scores.iter().zip(presence) {
            let detected = s[w] >= theta;
            match (detected, p[w]) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        pooled.tp += c.tp;
        pooled.fp += c.fp;
        pooled.fn_ += c.fn_;
        pooled.tn += c.tn;
        per_keyword.push(PrfCell::from_counts(c));
    }
    Ok(DetectionReport {
        macro_precision: macro_over(per_keyword.iter().map(|c| c.precision)),
        macro_recall: macro_over(per_keyword.iter().map(|c| c.recall)),
        macro_f1: macro_over(per_keyword.iter().map(|c| c.f1)),
        micro: PrfCell::from_counts(pooled),
        per_keyword,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn worked_arithmetic_one_keyword() {
        // TP=1, FP=2, FN=1 over four utterances.
        let scores = vec![vec![0.9], vec![0.8], vec![0.7], vec![0.1]];
        let presence = vec![vec![true], vec![false], vec![false], vec![true]];
        let r = eval_detection(&scores, &presence, 0.5).unwrap();
        let cell = &r.per_keyword[0];
        assert_eq!(cell.precision, Some(1.0 / 3.0));
        assert_eq!(cell.recall, Some(0.5));
        assert_eq!(cell.f1, Some(0.4));
    }

    #[test]
    fn all_zero_scores_leave_precision_undefined() {
        let scores = vec![vec![0.0, 0.0]; 3];
        let presence = vec![vec![true, false]; 3];
        let r = eval_detection(&scores, &presence, 0.5).unwrap();
        assert_eq!(r.per_keyword[0].precision, None);
        assert_eq!(r.per_keyword[0].recall, Some(0.0));
        assert_eq!(r.macro_precision.undefined, 2);
        assert_eq!(r.macro_precision.defined, 0);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let scores = vec![vec![0.1, 0.2]];
        let presence = vec![vec![true]];
        assert!(eval_detection(&scores, &presence, 0.5).is_err());
    }
}
