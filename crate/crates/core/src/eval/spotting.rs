//! Keyword spotting metrics over a ranked utterance collection: P@10, P@N
//! (N = number of true occurrences) and the equal error rate.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpottingCell {
    pub p_at_10: Option<f64>,
    pub p_at_n: Option<f64>,
    pub eer: Option<f64>,
    /// Number of utterances that truly contain the keyword.
    pub n_true: usize,
}

/// Rank utterance indices by score descending, breaking ties by utterance
/// id ascending so rankings are deterministic.
pub fn rank_indices(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then_with(|| ids[a].cmp(&ids[b]))
    });
    order
}

/// Equal error rate by sweeping the decision threshold over the score set.
///
/// Decisions are `score >= theta`. Candidate thresholds are the sorted
/// unique scores plus a reject-everything sentinel; the (FAR, FRR) pairs at
/// the candidates trace a curve from (1, 0) to (0, 1) and the EER is read
/// off by linear interpolation where FAR = FRR. Returns `None` when the
/// keyword has no positives or no negatives.
pub fn equal_error_rate(scores: &[f64], present: &[bool]) -> Option<f64> {
    let n_pos = present.iter().filter(|&&p| p).count();
    let n_neg = present.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut candidates: Vec<f64> = scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();

    // Operating points in threshold order, then the reject-all sentinel.
    let mut points: Vec<(f64, f64)> = Vec::with_capacity(candidates.len() + 1);
    for &theta in &candidates {
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for (s, p) in scores.iter().zip(present) {
            let accept = *s >= theta;
            if accept && !*p {
                fp += 1;
            }
            if !accept && *p {
                fn_ += 1;
            }
        }
        points.push((fp as f64 / n_neg as f64, fn_ as f64 / n_pos as f64));
    }
    points.push((0.0, 1.0));

    interpolate_eer(&points)
}

/// Find where FAR - FRR crosses zero along a sequence of operating points
/// and interpolate linearly.
pub fn interpolate_eer(points: &[(f64, f64)]) -> Option<f64> {
    let mut prev: Option<(f64, f64)> = None;
    for &(far, frr) in points {
        let g = far - frr;
        if g <= 0.0 {
            if g == 0.0 {
                return Some(far);
            }
            let (pfar, pfrr) = prev?;
            let pg = pfar - pfrr;
            let t = pg / (pg - g);
            return Some(pfar + t * (far - pfar));
        }
        prev = Some((far, frr));
    }
    None
}

/// Spotting metrics for one keyword over a collection.
pub fn eval_spotting(scores: &[f64], present: &[bool], ids: &[String]) -> SpottingCell {
    debug_assert_eq!(scores.len(), present.len());
    debug_assert_eq!(scores.len(), ids.len());
    let order = rank_indices(scores, ids);
    let n_true = present.iter().filter(|&&p| p).count();

    let p_at_10 = if order.len() >= 10 {
        let hits = order.iter().take(10).filter(|&&i| present[i]).count();
        Some(hits as f64 / 10.0)
    } else {
        None
    };
    let p_at_n = if n_true >= 1 {
        let hits = order.iter().take(n_true).filter(|&&i| present[i]).count();
        Some(hits as f64 / n_true as f64)
    } else {
        None
    };
    SpottingCell {
        p_at_10,
        p_at_n,
        eer: equal_error_rate(scores, present),
        n_true,
    }
}
