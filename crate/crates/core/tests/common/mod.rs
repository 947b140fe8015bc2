//! Independent oracle implementations used to cross-check the library:
//! exhaustive-counting metrics, a second MFCC implementation built on a
//! naive DFT, and small fixture helpers. Nothing here calls into the
//! library's metric or DSP code paths.

#![allow(dead_code)]

use std::path::PathBuf;

use vgsloc::corpus::AlignmentSet;
use vgsloc::rng::Stream;

pub fn tempdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!(
        "vgsloc-it-{tag}-{}-{:x}",
        std::process::id(),
        std::time::SystemTime::now()
            .duration_since(std::time::UNIX_EPOCH)
            .unwrap()
            .as_nanos()
    ));
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

// ---------------------------------------------------------------------
// Exhaustive-counting metric oracles.
// ---------------------------------------------------------------------

pub struct NaivePrf {
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

fn prf_from(tp: usize, fp: usize, fn_: usize) -> NaivePrf {
    let precision = if tp + fp > 0 {
        Some(tp as f64 / (tp + fp) as f64)
    } else {
        None
    };
    let recall = if tp + fn_ > 0 {
        Some(tp as f64 / (tp + fn_) as f64)
    } else {
        None
    };
    let f1 = match (precision, recall) {
        (Some(p), Some(r)) => {
            if p + r > 0.0 {
                Some(2.0 * p * r / (p + r))
            } else {
                Some(0.0)
            }
        }
        _ => None,
    };
    NaivePrf {
        precision,
        recall,
        f1,
        tp,
        fp,
        fn_,
    }
}

/// Detection counts for one keyword by direct enumeration.
pub fn naive_detection(scores: &[f64], present: &[bool], theta: f64) -> NaivePrf {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..scores.len() {
        let hit = scores[i] >= theta;
        if hit && present[i] {
            tp += 1;
        }
        if hit && !present[i] {
            fp += 1;
        }
        if !hit && present[i] {
            fn_ += 1;
        }
    }
    prf_from(tp, fp, fn_)
}

/// Ranking by repeatedly extracting the best remaining item (score
/// descending, id ascending on ties).
pub fn naive_ranking(scores: &[f64], ids: &[String]) -> Vec<usize> {
    let mut remaining: Vec<usize> = (0..scores.len()).collect();
    let mut out = Vec::with_capacity(scores.len());
    while !remaining.is_empty() {
        let mut best = 0usize;
        for (slot, &cand) in remaining.iter().enumerate().skip(1) {
            let b = remaining[best];
            if scores[cand] > scores[b] || (scores[cand] == scores[b] && ids[cand] < ids[b]) {
                best = slot;
            }
        }
        out.push(remaining.remove(best));
    }
    out
}

pub fn naive_p_at_k(scores: &[f64], present: &[bool], ids: &[String], k: usize) -> Option<f64> {
    if scores.len() < k {
        return None;
    }
    let order = naive_ranking(scores, ids);
    let mut hits = 0usize;
    for &i in order.iter().take(k) {
        if present[i] {
            hits += 1;
        }
    }
    Some(hits as f64 / k as f64)
}

pub fn naive_p_at_n(scores: &[f64], present: &[bool], ids: &[String]) -> Option<f64> {
    let n = present.iter().filter(|&&p| p).count();
    if n == 0 {
        return None;
    }
    let order = naive_ranking(scores, ids);
    let mut hits = 0usize;
    for &i in order.iter().take(n) {
        if present[i] {
            hits += 1;
        }
    }
    Some(hits as f64 / n as f64)
}

/// EER by recounting false accepts and rejects at every candidate
/// threshold, then interpolating at the crossing.
pub fn naive_eer(scores: &[f64], present: &[bool]) -> Option<f64> {
    let n_pos = present.iter().filter(|&&p| p).count();
    let n_neg = present.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut thresholds: Vec<f64> = scores.to_vec();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();

    let rates_at = |theta: Option<f64>| -> (f64, f64) {
        // None = reject everything.
        let mut fp = 0usize;
        let mut fn_ = 0usize;
        for i in 0..scores.len() {
            let accept = match theta {
                Some(t) => scores[i] >= t,
                None => false,
            };
            if accept && !present[i] {
                fp += 1;
            }
            if !accept && present[i] {
                fn_ += 1;
            }
        }
        (fp as f64 / n_neg as f64, fn_ as f64 / n_pos as f64)
    };

    let mut prev: Option<(f64, f64)> = None;
    for point in thresholds
        .iter()
        .map(|&t| rates_at(Some(t)))
        .chain(std::iter::once(rates_at(None)))
    {
        let (far, frr) = point;
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
        prev = Some(point);
    }
    None
}

fn inside(alignment: &AlignmentSet, keyword: &str, tau: f64) -> bool {
    alignment.entries.iter().any(|e| {
        e.word.to_lowercase() == keyword.to_lowercase() && tau >= e.start_s && tau <= e.end_s
    })
}

pub fn naive_oracle_accuracy(
    keyword: &str,
    present: &[bool],
    taus: &[Option<f64>],
    alignments: &[AlignmentSet],
) -> Option<f64> {
    let mut correct = 0usize;
    let mut total = 0usize;
    for i in 0..present.len() {
        if present[i] {
            total += 1;
            if let Some(tau) = taus[i] {
                if inside(&alignments[i], keyword, tau) {
                    correct += 1;
                }
            }
        }
    }
    if total == 0 {
        None
    } else {
        Some(correct as f64 / total as f64)
    }
}

pub fn naive_actual(
    keyword: &str,
    scores: &[f64],
    present: &[bool],
    taus: &[Option<f64>],
    alignments: &[AlignmentSet],
    theta: f64,
) -> NaivePrf {
    let mut tp = 0;
    let mut fp = 0;
    let mut fn_ = 0;
    for i in 0..present.len() {
        let detected = scores[i] >= theta;
        let located = matches!(taus[i], Some(tau) if inside(&alignments[i], keyword, tau));
        if detected {
            if present[i] && located {
                tp += 1;
            } else {
                fp += 1;
            }
        } else if present[i] {
            fn_ += 1;
        }
    }
    prf_from(tp, fp, fn_)
}

pub fn naive_spotting_localisation(
    keyword: &str,
    scores: &[f64],
    present: &[bool],
    taus: &[Option<f64>],
    alignments: &[AlignmentSet],
    ids: &[String],
    k: usize,
) -> Option<f64> {
    if scores.len() < k {
        return None;
    }
    let order = naive_ranking(scores, ids);
    let mut correct = 0usize;
    for &i in order.iter().take(k) {
        if present[i] {
            if let Some(tau) = taus[i] {
                if inside(&alignments[i], keyword, tau) {
                    correct += 1;
                }
            }
        }
    }
    Some(correct as f64 / k as f64)
}

/// Textbook Cohen kappa with marginal normalisation, written over integer
/// counts.
pub struct NaiveKappa {
    pub kappa: Option<f64>,
    pub kappa_norm: Option<f64>,
}

pub fn naive_kappa(a: &[bool], b: &[bool]) -> NaiveKappa {
    let n = a.len();
    let mut n11 = 0usize;
    let mut n00 = 0usize;
    let mut na1 = 0usize;
    let mut nb1 = 0usize;
    for i in 0..n {
        if a[i] && b[i] {
            n11 += 1;
        }
        if !a[i] && !b[i] {
            n00 += 1;
        }
        if a[i] {
            na1 += 1;
        }
        if b[i] {
            nb1 += 1;
        }
    }
    let nf = n as f64;
    let p_o = (n11 + n00) as f64 / nf;
    let pa1 = na1 as f64 / nf;
    let pb1 = nb1 as f64 / nf;
    let p_e = pa1 * pb1 + (1.0 - pa1) * (1.0 - pb1);
    if p_e >= 1.0 {
        return NaiveKappa {
            kappa: None,
            kappa_norm: None,
        };
    }
    let kappa = (p_o - p_e) / (1.0 - p_e);
    let p_max = pa1.min(pb1) + (1.0 - pa1).min(1.0 - pb1);
    let kappa_max = (p_max - p_e) / (1.0 - p_e);
    let kappa_norm = if kappa_max == 0.0 {
        None
    } else {
        Some(kappa / kappa_max)
    };
    NaiveKappa {
        kappa: Some(kappa),
        kappa_norm,
    }
}

// ---------------------------------------------------------------------
// Random evaluation corpora (synthetic score tables with ground truth).
// ---------------------------------------------------------------------

pub struct RandomCorpus {
    pub ids: Vec<String>,
    pub keywords: Vec<String>,
    pub scores: Vec<Vec<f64>>,
    pub presence: Vec<Vec<bool>>,
    pub taus: Vec<Vec<Option<f64>>>,
    pub alignments: Vec<AlignmentSet>,
}

/// A random corpus of at most 50 utterances with deliberate score ties and
/// occasional missing locations, to exercise every tie and edge rule.
pub fn random_corpus(seed: u64) -> RandomCorpus {
    use vgsloc::corpus::AlignedWord;
    let mut rng = Stream::new(seed);
    let n = rng.int_in(12, 50);
    let v = rng.int_in(2, 6);
    let ids: Vec<String> = (0..n).map(|i| format!("u{i:03}")).collect();
    let keywords: Vec<String> = (0..v).map(|w| format!("kw{w}")).collect();
    let duration = 2.0;

    let mut scores = Vec::with_capacity(n);
    let mut presence = Vec::with_capacity(n);
    let mut taus = Vec::with_capacity(n);
    let mut alignments = Vec::with_capacity(n);
    for _ in 0..n {
        let mut srow = Vec::with_capacity(v);
        let mut prow = Vec::with_capacity(v);
        let mut trow = Vec::with_capacity(v);
        let mut words = Vec::new();
        for w in 0..v {
            // Ties are common on purpose.
            let s = if rng.bernoulli(0.35) {
                [0.1, 0.25, 0.5, 0.75][rng.below(4)]
            } else {
                rng.f64()
            };
            srow.push(s);
            let here = rng.bernoulli(0.35);
            prow.push(here);
            if here {
                let occurrences = 1 + rng.below(2);
                for _ in 0..occurrences {
                    let start = rng.uniform(0.0, duration - 0.3);
                    let end = start + rng.uniform(0.05, 0.3);
                    words.push(AlignedWord {
                        word: keywords[w].clone(),
                        start_s: start,
                        end_s: end.min(duration),
                    });
                }
            }
            trow.push(if rng.bernoulli(0.1) {
                None
            } else {
                Some(rng.uniform(0.0, duration))
            });
        }
        scores.push(srow);
        presence.push(prow);
        taus.push(trow);
        alignments.push(AlignmentSet::new(words).unwrap());
    }
    RandomCorpus {
        ids,
        keywords,
        scores,
        presence,
        taus,
        alignments,
    }
}

// ---------------------------------------------------------------------
// Second MFCC implementation (naive DFT path).
// ---------------------------------------------------------------------

/// Reference MFCC computed with a direct O(N^2) DFT and independently
/// coded mel bank, DCT, deltas and normalisation. Mirrors the documented
/// definitions, shares no code with the library.
pub fn reference_mfcc(samples: &[f32], rate: f64) -> Vec<Vec<f64>> {
    let n_mels = 26usize;
    let n_ceps = 13usize;
    let win = (0.025 * rate).round() as usize;
    let hop = (0.010 * rate).round() as usize;
    let pre = 0.97;

    let mut x: Vec<f64> = Vec::with_capacity(samples.len());
    for (i, &s) in samples.iter().enumerate() {
        if i == 0 {
            x.push(s as f64);
        } else {
            x.push(s as f64 - pre * samples[i - 1] as f64);
        }
    }
    let n_frames = (x.len() + hop - 1) / hop;
    x.resize((n_frames - 1) * hop + win, 0.0);
    let n_fft = win.next_power_of_two();
    let n_bins = n_fft / 2 + 1;

    // Mel filters over FFT bin indices.
    let to_mel = |hz: f64| 2595.0 * (1.0 + hz / 700.0).log10();
    let from_mel = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = to_mel(rate / 2.0);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| from_mel(top * i as f64 / (n_mels + 1) as f64) * n_fft as f64 / rate)
        .collect();

    let mut all = Vec::with_capacity(n_frames);
    for f in 0..n_frames {
        // Hamming window then direct DFT.
        let frame: Vec<f64> = (0..n_fft)
            .map(|i| {
                if i < win {
                    let w = 0.54
                        - 0.46
                            * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos();
                    x[f * hop + i] * w
                } else {
                    0.0
                }
            })
            .collect();
        let mut power = vec![0.0f64; n_bins];
        for (b, p) in power.iter_mut().enumerate() {
            let mut re = 0.0;
            let mut im = 0.0;
            for (i, &v) in frame.iter().enumerate() {
                let ang = -2.0 * std::f64::consts::PI * (b * i) as f64 / n_fft as f64;
                re += v * ang.cos();
                im += v * ang.sin();
            }
            *p = (re * re + im * im) / n_fft as f64;
        }
        let mut logmel = vec![0.0f64; n_mels];
        for (m, lm) in logmel.iter_mut().enumerate() {
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            let mut acc = 0.0;
            for (b, &p) in power.iter().enumerate() {
                let bf = b as f64;
                let weight = if bf >= lo && bf <= mid && mid > lo {
                    (bf - lo) / (mid - lo)
                } else if bf > mid && bf <= hi && hi > mid {
                    (hi - bf) / (hi - mid)
                } else {
                    0.0
                };
                acc += weight * p;
            }
            *lm = acc.max(1e-10).ln();
        }
        // Orthonormal DCT-II.
        let m = n_mels as f64;
        let ceps: Vec<f64> = (0..n_ceps)
            .map(|k| {
                let scale = if k == 0 {
                    (1.0 / m).sqrt()
                } else {
                    (2.0 / m).sqrt()
                };
                scale
                    * logmel
                        .iter()
                        .enumerate()
                        .map(|(i, &v)| {
                            v * (std::f64::consts::PI * k as f64 * (2 * i + 1) as f64
                                / (2.0 * m))
                                .cos()
                        })
                        .sum::<f64>()
            })
            .collect();
        all.push(ceps);
    }

    // Deltas (window 2, replicated edges) and delta-deltas.
    let delta = |rows: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        let denom = 2.0 * (1.0 + 4.0);
        (0..rows.len())
            .map(|t| {
                (0..n_ceps)
                    .map(|d| {
                        let mut acc = 0.0;
                        for i in 1..=2usize {
                            let fwd = rows[(t + i).min(rows.len() - 1)][d];
                            let bwd = rows[t.saturating_sub(i)][d];
                            acc += i as f64 * (fwd - bwd);
                        }
                        acc / denom
                    })
                    .collect()
            })
            .collect()
    };
    let d1 = delta(&all);
    let d2 = delta(&d1);
    let mut stacked: Vec<Vec<f64>> = (0..n_frames)
        .map(|t| {
            let mut row = all[t].clone();
            row.extend_from_slice(&d1[t]);
            row.extend_from_slice(&d2[t]);
            row
        })
        .collect();

    // Per-coefficient mean/variance normalisation.
    let dim = 3 * n_ceps;
    for c in 0..dim {
        let mean: f64 = stacked.iter().map(|r| r[c]).sum::<f64>() / n_frames as f64;
        let var: f64 =
            stacked.iter().map(|r| (r[c] - mean) * (r[c] - mean)).sum::<f64>() / n_frames as f64;
        let denom = var.sqrt() + 1e-8;
        for row in stacked.iter_mut() {
            row[c] = (row[c] - mean) / denom;
        }
    }
    stacked
}
