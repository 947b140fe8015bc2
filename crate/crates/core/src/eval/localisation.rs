//! Localisation evaluation in the three regimes: oracle (keyword known to
//! be present), actual (detect at theta, then locate) and spotting
//! localisation (locate within the top-ranked utterances).
//!
//! A predicted point is correct when it falls inside any ground-truth
//! occurrence of the keyword, closed interval on both ends so forced
//! alignment boundary jitter does not penalise exact-boundary predictions.

use serde::{Deserialize, Serialize};

use crate::corpus::AlignmentSet;
use crate::error::{Error, Result};

use super::detection::{PrfCell, PrfCounts};
use super::spotting::rank_indices;

/// One keyword's view of the evaluation data: parallel arrays over the
/// test utterances.
pub struct KeywordLocalisation<'a> {
    pub keyword: &'a str,
    pub ids: &'a [String],
    pub detection_scores: &'a [f64],
    pub present: &'a [bool],
    /// Predicted location per utterance; `None` when the method produced no
    /// usable score track (counted as a miss).
    pub taus: &'a [Option<f64>],
    pub alignments: &'a [AlignmentSet],
}

impl<'a> KeywordLocalisation<'a> {
    fn located(&self, utt: usize) -> bool {
        match self.taus[utt] {
            Some(tau) => self.alignments[utt].contains_at(self.keyword, tau),
            None => false,
        }
    }

    /// Oracle accuracy counts: evaluated only over utterances where the
    /// keyword is present. Errors if a present pair has an empty alignment.
    pub fn oracle_counts(&self) -> Result<(usize, usize)> {
        let mut correct = 0usize;
        let mut total = 0usize;
        for utt in 0..self.present.len() {
            if !self.present[utt] {
                continue;
            }
            if self.alignments[utt].entries.is_empty() {
                return Err(Error::MissingAlignment {
                    id: self.ids[utt].clone(),
                });
            }
            total += 1;
            if self.located(utt) {
                correct += 1;
            }
        }
        Ok((correct, total))
    }

    /// Actual localisation confusion counts at threshold `theta`: detected
    /// pairs are true positives only when present *and* located; undetected
    /// present pairs are false negatives.
    pub fn actual_counts(&self, theta: f64) -> PrfCounts {
        let mut c = PrfCounts::default();
        for utt in 0..self.present.len() {
            let detected = self.detection_scores[utt] >= theta;
            if detected {
                if self.present[utt] && self.located(utt) {
                    c.tp += 1;
                } else {
                    c.fp += 1;
                }
            } else if self.present[utt] {
                c.fn_ += 1;
            } else {
                c.tn += 1;
            }
        }
        c
    }

    /// Spotting localisation: P@10 (and P@N) where a ranked utterance only
    /// counts when the keyword is present and correctly located.
    pub fn spotting_counts(&self) -> SpotLocCell {
        let order = rank_indices(self.detection_scores, self.ids);
        let n_true = self.present.iter().filter(|&&p| p).count();
        let correct_in = |k: usize| -> usize {
            order
                .iter()
                .take(k)
                .filter(|&&utt| self.present[utt] && self.located(utt))
                .count()
        };
        let p_at_10 = if order.len() >= 10 {
            Some(correct_in(10) as f64 / 10.0)
        } else {
            None
        };
        let p_at_n = if n_true >= 1 {
            Some(correct_in(n_true) as f64 / n_true as f64)
        } else {
            None
        };
        SpotLocCell {
            p_at_10,
            p_at_n,
            n_true,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpotLocCell {
    pub p_at_10: Option<f64>,
    pub p_at_n: Option<f64>,
    pub n_true: usize,
}

/// Accuracy over (utterance, keyword) pairs where the keyword is present.
pub fn oracle_accuracy(correct: usize, total: usize) -> Option<f64> {
    if total > 0 {
        Some(correct as f64 / total as f64)
    } else {
        None
    }
}

/// Convenience: full actual-localisation cell for one keyword.
pub fn actual_cell(loc: &KeywordLocalisation<'_>, theta: f64) -> PrfCell {
    PrfCell::from_counts(loc.actual_counts(theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{AlignedWord, AlignmentSet};

    /// The four-utterance fixture: the keyword occurs in (a), (c) and (d)
    /// at 0.5..0.9 s; the peak is inside the word in (a) and (d), outside
    /// in (c); detection fires on (a), (b) and (c).
    fn fixture() -> (
        Vec<String>,
        Vec<f64>,
        Vec<bool>,
        Vec<Option<f64>>,
        Vec<AlignmentSet>,
    ) {
        let ids: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let detection = vec![0.9, 0.8, 0.7, 0.2];
        let present = vec![true, false, true, true];
        let taus = vec![Some(0.7), Some(0.3), Some(0.2), Some(0.6)];
        let word = |s: f64, e: f64| {
            AlignmentSet::new(vec![AlignedWord {
                word: "man".into(),
                start_s: s,
                end_s: e,
            }])
            .unwrap()
        };
        let alignments = vec![
            word(0.5, 0.9),
            AlignmentSet::default(),
            word(0.5, 0.9),
            word(0.5, 0.9),
        ];
        (ids, detection, present, taus, alignments)
    }

    fn loc<'a>(
        ids: &'a [String],
        detection: &'a [f64],
        present: &'a [bool],
        taus: &'a [Option<f64>],
        alignments: &'a [AlignmentSet],
    ) -> KeywordLocalisation<'a> {
        KeywordLocalisation {
            keyword: "man",
            ids,
            detection_scores: detection,
            present,
            taus,
            alignments,
        }
    }

    #[test]
    fn worked_example_oracle_two_thirds() {
        let (ids, det, present, taus, aligns) = fixture();
        let l = loc(&ids, &det, &present, &taus, &aligns);
        let (correct, total) = l.oracle_counts().unwrap();
        assert_eq!((correct, total), (2, 3));
        assert_eq!(oracle_accuracy(correct, total), Some(2.0 / 3.0));
    }

    #[test]
    fn worked_example_actual_prf() {
        let (ids, det, present, taus, aligns) = fixture();
        let l = loc(&ids, &det, &present, &taus, &aligns);
        let cell = actual_cell(&l, 0.5);
        assert_eq!(cell.counts.tp, 1);
        assert_eq!(cell.counts.fp, 2);
        assert_eq!(cell.counts.fn_, 1);
        assert_eq!(cell.precision, Some(1.0 / 3.0));
        assert_eq!(cell.recall, Some(0.5));
        assert_eq!(cell.f1, Some(0.4));
    }

    #[test]
    fn boundary_tau_counts_as_correct() {
        let (ids, det, present, mut taus, aligns) = fixture();
        taus[0] = Some(0.5); // exactly at start_s
        let l = loc(&ids, &det, &present, &taus, &aligns);
        let (correct, _) = l.oracle_counts().unwrap();
        assert_eq!(correct, 2);
        taus[0] = Some(0.9); // exactly at end_s
        let l = loc(&ids, &det, &present, &taus, &aligns);
        let (correct, _) = l.oracle_counts().unwrap();
        assert_eq!(correct, 2);
    }

    #[test]
    fn missing_alignment_for_present_pair_is_an_error() {
        let (ids, det, mut present, taus, aligns) = fixture();
        present[1] = true; // (b) has an empty alignment set
        let l = loc(&ids, &det, &present, &taus, &aligns);
        assert!(matches!(
            l.oracle_counts(),
            Err(Error::MissingAlignment { .. })
        ));
    }

    #[test]
    fn theta_zero_true_positives_equal_oracle_corrects() {
        // With everything detected there are no false negatives, and the
        // actual true positives are exactly the oracle-correct pairs:
        // TP / #present = oracle accuracy.
        let (ids, det, present, taus, aligns) = fixture();
        let l = loc(&ids, &det, &present, &taus, &aligns);
        let cell = actual_cell(&l, 0.0);
        let (correct, total) = l.oracle_counts().unwrap();
        assert_eq!(cell.counts.fn_, 0);
        assert_eq!(cell.counts.tp, correct);
        assert_eq!(
            cell.counts.tp as f64 / total as f64,
            oracle_accuracy(correct, total).unwrap()
        );
    }
}
