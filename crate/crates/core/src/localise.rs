//! The four localisation methods. Each produces a per-keyword score track
//! over time; the predicted location is the time of the highest score,
//! earliest index on ties.
//!
//! * attention: the attention row for the query keyword;
//! * score aggregation: the pre-pooling encoder row (PSC only, where the
//!   encoder emits one channel per keyword);
//! * grad-cam: filter activations weighted by the mean gradient of the
//!   detection probability w.r.t. each filter, rectified;
//! * masked-in / masked-out: detection scores of zero-padded segments /
//!   complement-masked utterances.
//!
//! Saliency and masking run the model in f64 so gradient checks hold at
//! tight tolerances; none of the methods mutates model parameters.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::model::{Architecture, ForwardTrace, Model};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    GradCam,
    ScoreAgg,
    Attention,
    MaskedIn,
    MaskedOut,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::GradCam,
        Method::ScoreAgg,
        Method::Attention,
        Method::MaskedIn,
        Method::MaskedOut,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Method::GradCam => "gradcam",
            Method::ScoreAgg => "score_agg",
            Method::Attention => "attention",
            Method::MaskedIn => "masked_in",
            Method::MaskedOut => "masked_out",
        }
    }

    /// Whether the method applies to the given architecture.
    pub fn supports(&self, arch: Architecture) -> bool {
        match self {
            Method::Attention => arch.has_attention(),
            Method::ScoreAgg => arch == Architecture::Psc,
            _ => true,
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gradcam" | "grad-cam" | "grad_cam" => Ok(Method::GradCam),
            "score_agg" | "score-agg" | "scoreagg" => Ok(Method::ScoreAgg),
            "attention" => Ok(Method::Attention),
            "masked_in" | "masked-in" => Ok(Method::MaskedIn),
            "masked_out" | "masked-out" => Ok(Method::MaskedOut),
            other => Err(Error::Config(format!("unknown method {other:?}"))),
        }
    }
}

/// A per-keyword localisation score track with its time axis in seconds.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalisationScores {
    pub method: Method,
    pub keyword: usize,
    pub scores: Vec<f64>,
    /// Time of each score index; non-decreasing.
    pub times_s: Vec<f64>,
    /// Segment extents for the masked methods.
    pub spans_s: Option<Vec<(f64, f64)>>,
    /// Whole-utterance detection probability for the keyword.
    pub detection_score: f64,
}

impl LocalisationScores {
    pub fn time_of(&self, index: usize) -> f64 {
        self.times_s[index]
    }

    pub fn validate(&self) -> Result<()> {
        if self.scores.is_empty() || self.scores.len() != self.times_s.len() {
            return Err(Error::EmptyInput);
        }
        if self.scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::NonFiniteSample);
        }
        if self.times_s.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("time map is not monotone".into()));
        }
        Ok(())
    }
}

/// Index of the highest score, earliest on ties.
pub fn argmax_index(scores: &[f64]) -> Result<usize> {
    if scores.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Ok(best)
}

/// Predicted location: the time of the highest score across the track.
pub fn argmax_location(scores: &LocalisationScores) -> Result<f64> {
    Ok(scores.time_of(argmax_index(&scores.scores)?))
}

fn trace_times(trace: &ForwardTrace<f64>) -> Vec<f64> {
    (0..trace.valid_cols).map(|t| trace.time_of(t)).collect()
}

/// Attention weights of the query keyword as localisation scores.
pub fn locate_attention(trace: &ForwardTrace<f64>, keyword: usize) -> Result<LocalisationScores> {
    let Some(attn) = &trace.attention else {
        return Err(Error::UnsupportedMethod {
            arch: trace.architecture.name().into(),
            what: "attention weights".into(),
        });
    };
    let scores: Vec<f64> = (0..trace.valid_cols).map(|t| attn[[keyword, t]]).collect();
    let out = LocalisationScores {
        method: Method::Attention,
        keyword,
        scores,
        times_s: trace_times(trace),
        spans_s: None,
        detection_score: trace.y_hat[keyword],
    };
    out.validate()?;
    Ok(out)
}

/// Pre-pooling activations of the keyword's encoder channel (PSC).
pub fn locate_score_agg(trace: &ForwardTrace<f64>, keyword: usize) -> Result<LocalisationScores> {
    if trace.architecture != Architecture::Psc {
        return Err(Error::UnsupportedMethod {
            arch: trace.architecture.name().into(),
            what: "score aggregation (needs one encoder channel per keyword)".into(),
        });
    }
    let scores: Vec<f64> = (0..trace.valid_cols).map(|t| trace.h[[keyword, t]]).collect();
    let out = LocalisationScores {
        method: Method::ScoreAgg,
        keyword,
        scores,
        times_s: trace_times(trace),
        spans_s: None,
        detection_score: trace.y_hat[keyword],
    };
    out.validate()?;
    Ok(out)
}

/// Grad-CAM over the final encoder layer: per-filter importances are the
/// time-averaged gradients of the detection probability, and the score at
/// each step is the rectified importance-weighted activation.
pub fn locate_gradcam(
    model: &Model<f64>,
    features: &FeatureSequence,
    keyword: usize,
) -> Result<LocalisationScores> {
    let trace = model.forward(features)?;
    locate_gradcam_from_trace(model, &trace, keyword)
}

/// As [`locate_gradcam`] but reusing an existing forward trace.
pub fn locate_gradcam_from_trace(
    model: &Model<f64>,
    trace: &ForwardTrace<f64>,
    keyword: usize,
) -> Result<LocalisationScores> {
    let valid = trace.valid_cols;
    let grad = model.head_grad_wrt_h(&trace.h, valid, keyword);
    let e_dim = trace.h.nrows();
    let inv_t = 1.0 / valid as f64;
    let gamma: Array1<f64> = Array1::from_shape_fn(e_dim, |k| {
        (0..valid).map(|t| grad[[k, t]]).sum::<f64>() * inv_t
    });
    let scores: Vec<f64> = (0..valid)
        .map(|t| {
            let s: f64 = (0..e_dim).map(|k| gamma[k] * trace.h[[k, t]]).sum();
            s.max(0.0)
        })
        .collect();
    let out = LocalisationScores {
        method: Method::GradCam,
        keyword,
        scores,
        times_s: trace_times(trace),
        spans_s: None,
        detection_score: trace.y_hat[keyword],
    };
    out.validate()?;
    Ok(out)
}

/// Per-filter Grad-CAM importances, exposed for gradient checking.
pub fn gradcam_importances(
    model: &Model<f64>,
    h: &Array2<f64>,
    valid: usize,
    keyword: usize,
) -> Array1<f64> {
    let grad = model.head_grad_wrt_h(h, valid, keyword);
    let inv_t = 1.0 / valid as f64;
    Array1::from_shape_fn(h.nrows(), |k| {
        (0..valid).map(|t| grad[[k, t]]).sum::<f64>() * inv_t
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    In,
    Out,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskConfig {
    pub min_ms: u32,
    pub max_ms: u32,
    /// Grid step between segment widths.
    pub step_ms: u32,
    /// Consecutive same-width segments overlap by this much
    /// (stride = width - overlap).
    pub overlap_ms: u32,
}

impl Default for MaskConfig {
    fn default() -> Self {
        MaskConfig {
            min_ms: 200,
            max_ms: 600,
            step_ms: 100,
            overlap_ms: 30,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
}

/// Build the segment grid: widths from `min_ms` to `max_ms` in `step_ms`
/// increments, consecutive same-width segments overlapping by `overlap_ms`
/// (stride = width - overlap). A final partial segment is kept when it is
/// at least `min_ms` long; a shorter tail is covered by anchoring one
/// full-width segment at the end instead, so the union of segments always
/// covers the whole utterance. Segments are ordered by midpoint so the
/// time map is monotone.
pub fn mask_segments(t_frames: usize, hop_s: f64, cfg: &MaskConfig) -> Result<Vec<Segment>> {
    let frames_of = |ms: u32| ((ms as f64 / 1000.0) / hop_s).round() as usize;
    let min_frames = frames_of(cfg.min_ms).max(1);
    if t_frames < min_frames {
        return Err(Error::UtteranceTooShort { min_ms: cfg.min_ms });
    }
    let mut segments = Vec::new();
    let mut width_ms = cfg.min_ms;
    while width_ms <= cfg.max_ms {
        let width = frames_of(width_ms).max(1);
        let overlap = frames_of(cfg.overlap_ms).min(width.saturating_sub(1));
        let stride = (width - overlap).max(1);
        let mut start = 0usize;
        loop {
            let end = (start + width).min(t_frames);
            if end - start >= min_frames {
                segments.push(Segment { start, end });
            } else {
                // Tail too short: snap one full-width segment to the end.
                segments.push(Segment {
                    start: t_frames.saturating_sub(width),
                    end: t_frames,
                });
            }
            if end == t_frames {
                break;
            }
            start += stride;
        }
        width_ms += cfg.step_ms;
    }
    segments.sort_by(|a, b| {
        (a.start + a.end)
            .cmp(&(b.start + b.end))
            .then(a.end.cmp(&b.end))
    });
    segments.dedup();
    Ok(segments)
}

/// Masked localisation for every keyword at once. One model pass per
/// segment plus one whole-utterance pass (for the detection scores all
/// methods share).
pub fn locate_masked_all(
    model: &Model<f64>,
    features: &FeatureSequence,
    mode: MaskMode,
    cfg: &MaskConfig,
) -> Result<Vec<LocalisationScores>> {
    let t_frames = features.n_frames();
    let hop = features.frame_hop_s;
    let segments = mask_segments(t_frames, hop, cfg)?;
    let full = model.forward(features)?;
    let v = full.y_hat.len();

    // Segment scores: rows = segments, cols = keywords.
    let mut seg_scores = Array2::<f64>::zeros((segments.len(), v));
    for (i, seg) in segments.iter().enumerate() {
        let mut masked = features.clone();
        match mode {
            MaskMode::In => {
                // Keep only the segment, zero-padded to full length.
                masked.values.slice_mut(ndarray::s![..seg.start, ..]).fill(0.0);
                masked.values.slice_mut(ndarray::s![seg.end.., ..]).fill(0.0);
            }
            MaskMode::Out => {
                masked
                    .values
                    .slice_mut(ndarray::s![seg.start..seg.end, ..])
                    .fill(0.0);
            }
        }
        let trace = model.forward(&masked)?;
        for w in 0..v {
            seg_scores[[i, w]] = match mode {
                MaskMode::In => trace.y_hat[w],
                MaskMode::Out => 1.0 - trace.y_hat[w],
            };
        }
    }

    let times: Vec<f64> = segments
        .iter()
        .map(|s| (s.start + s.end) as f64 / 2.0 * hop)
        .collect();
    let spans: Vec<(f64, f64)> = segments
        .iter()
        .map(|s| (s.start as f64 * hop, s.end as f64 * hop))
        .collect();
    let method = match mode {
        MaskMode::In => Method::MaskedIn,
        MaskMode::Out => Method::MaskedOut,
    };
    (0..v)
        .map(|w| {
            let out = LocalisationScores {
                method,
                keyword: w,
                scores: (0..segments.len()).map(|i| seg_scores[[i, w]]).collect(),
                times_s: times.clone(),
                spans_s: Some(spans.clone()),
                detection_score: full.y_hat[w],
            };
            out.validate()?;
            Ok(out)
        })
        .collect()
}

/// Masked localisation for a single keyword.
pub fn locate_masked(
    model: &Model<f64>,
    features: &FeatureSequence,
    keyword: usize,
    mode: MaskMode,
    cfg: &MaskConfig,
) -> Result<LocalisationScores> {
    let mut all = locate_masked_all(model, features, mode, cfg)?;
    if keyword >= all.len() {
        return Err(Error::UnknownKeyword {
            word: format!("index {keyword}"),
        });
    }
    Ok(all.swap_remove(keyword))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_to_earliest() {
        assert_eq!(argmax_index(&[0.1, 0.9, 0.9]).unwrap(), 1);
        assert_eq!(argmax_index(&[2.0]).unwrap(), 0);
        assert!(argmax_index(&[]).is_err());
    }

    #[test]
    fn spike_maps_through_downsampled_time() {
        // Downsample factor 9, hop 10 ms: step t sits at (9t + 4.5) * 0.010 s.
        let scores = LocalisationScores {
            method: Method::Attention,
            keyword: 0,
            scores: vec![0.0, 0.0, 1.0, 0.0],
            times_s: (0..4)
                .map(|t| (t as f64 * 9.0 + 4.5) * 0.010)
                .collect(),
            spans_s: None,
            detection_score: 0.9,
        };
        let tau = argmax_location(&scores).unwrap();
        assert!((tau - (2.0 * 9.0 + 4.5) * 0.010).abs() < 1e-12);
    }

    #[test]
    fn segment_grid_covers_the_utterance() {
        let cfg = MaskConfig::default();
        for t in [20usize, 35, 60, 97, 140, 301] {
            let segs = mask_segments(t, 0.010, &cfg).unwrap();
            assert!(!segs.is_empty());
            let mut covered = vec![false; t];
            for s in &segs {
                assert!(s.end <= t);
                assert!(s.end - s.start >= 20);
                for c in covered.iter_mut().take(s.end).skip(s.start) {
                    *c = true;
                }
            }
            assert!(covered.iter().all(|&c| c), "gap in cover for T = {t}");
            // Monotone midpoint order.
            let mids: Vec<usize> = segs.iter().map(|s| s.start + s.end).collect();
            assert!(mids.windows(2).all(|w| w[1] >= w[0]));
        }
    }

    #[test]
    fn too_short_utterance_is_rejected() {
        assert!(matches!(
            mask_segments(10, 0.010, &MaskConfig::default()),
            Err(Error::UtteranceTooShort { .. })
        ));
    }

    #[test]
    fn widths_follow_the_grid() {
        let segs = mask_segments(200, 0.010, &MaskConfig::default()).unwrap();
        let mut widths: Vec<usize> = segs.iter().map(|s| s.end - s.start).collect();
        widths.sort_unstable();
        widths.dedup();
        // 200..600 ms at 10 ms hop: 20, 30, 40, 50, 60 frames (plus any
        // clipped finals >= 20).
        for w in [20usize, 30, 40, 50, 60] {
            assert!(widths.contains(&w), "missing width {w}");
        }
        assert!(widths.iter().all(|&w| (20..=60).contains(&w)));
    }
}
