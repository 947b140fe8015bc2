//! MFCC extraction: 13 cepstra plus deltas and delta-deltas (F = 39),
//! 25 ms Hamming windows at a 10 ms hop (one frame per hop, zero-padded at
//! the tail), with per-utterance per-coefficient mean-variance
//! normalisation. All internal arithmetic is f64; the stored features are
//! f32.

use ndarray::Array2;

use super::FeatureSequence;
use crate::error::{Error, Result};

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    pub window_s: f64,
    pub hop_s: f64,
    pub n_mels: usize,
    pub n_ceps: usize,
    pub pre_emphasis: f64,
    pub delta_window: usize,
    pub mean_var_normalise: bool,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            sample_rate_hz: 16_000,
            window_s: 0.025,
            hop_s: 0.010,
            n_mels: 26,
            n_ceps: 13,
            pre_emphasis: 0.97,
            delta_window: 2,
            mean_var_normalise: true,
        }
    }
}

impl MfccConfig {
    /// Output feature dimension: cepstra, deltas, delta-deltas.
    pub fn dim(&self) -> usize {
        self.n_ceps * 3
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filterbank over FFT bins `0..=n_fft/2`.
fn mel_filterbank(n_mels: usize, n_fft: usize, rate: f64) -> Vec<Vec<f64>> {
    let n_bins = n_fft / 2 + 1;
    let max_mel = hz_to_mel(rate / 2.0);
    let centers: Vec<f64> = (0..n_mels + 2)
        .map(|i| {
            let hz = mel_to_hz(max_mel * i as f64 / (n_mels + 1) as f64);
            hz * n_fft as f64 / rate
        })
        .collect();
    (0..n_mels)
        .map(|m| {
            let (lo, mid, hi) = (centers[m], centers[m + 1], centers[m + 2]);
            (0..n_bins)
                .map(|b| {
                    let b = b as f64;
                    if b >= lo && b <= mid && mid > lo {
                        (b - lo) / (mid - lo)
                    } else if b > mid && b <= hi && hi > mid {
                        (hi - b) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Iterative radix-2 FFT, length must be a power of two.
fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    // Bit-reversal permutation.
    let mut j = 0usize;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut i = 0;
        while i < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for k in 0..len / 2 {
                let (ur, ui) = (re[i + k], im[i + k]);
                let (vr, vi) = (
                    re[i + k + len / 2] * cr - im[i + k + len / 2] * ci,
                    re[i + k + len / 2] * ci + im[i + k + len / 2] * cr,
                );
                re[i + k] = ur + vr;
                im[i + k] = ui + vi;
                re[i + k + len / 2] = ur - vr;
                im[i + k + len / 2] = ui - vi;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            i += len;
        }
        len <<= 1;
    }
}

/// Orthonormal DCT-II of `x`, keeping the first `n_out` coefficients.
fn dct2(x: &[f64], n_out: usize) -> Vec<f64> {
    let m = x.len() as f64;
    (0..n_out)
        .map(|k| {
            let scale = if k == 0 {
                (1.0 / m).sqrt()
            } else {
                (2.0 / m).sqrt()
            };
            let sum: f64 = x
                .iter()
                .enumerate()
                .map(|(i, &v)| {
                    v * (std::f64::consts::PI * k as f64 * (2.0 * i as f64 + 1.0)
                        / (2.0 * m))
                        .cos()
                })
                .sum();
            scale * sum
        })
        .collect()
}

/// Regression deltas with window `n`, edges replicated.
fn deltas(frames: &[Vec<f64>], n: usize) -> Vec<Vec<f64>> {
    let t_max = frames.len();
    let dim = frames[0].len();
    let denom: f64 = 2.0 * (1..=n).map(|i| (i * i) as f64).sum::<f64>();
    (0..t_max)
        .map(|t| {
            (0..dim)
                .map(|d| {
                    let mut acc = 0.0;
                    for i in 1..=n {
                        let fwd = frames[(t + i).min(t_max - 1)][d];
                        let bwd = frames[t.saturating_sub(i)][d];
                        acc += i as f64 * (fwd - bwd);
                    }
                    acc / denom
                })
                .collect()
        })
        .collect()
}

/// Compute MFCC features for a 16 kHz waveform.
pub fn compute_mfcc(samples: &[f32], rate_hz: u32, cfg: &MfccConfig) -> Result<FeatureSequence> {
    if samples.is_empty() {
        return Err(Error::EmptyWaveform);
    }
    if samples.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFiniteSample);
    }
    if rate_hz != cfg.sample_rate_hz {
        return Err(Error::UnsupportedRate {
            rate: rate_hz,
            expected: cfg.sample_rate_hz,
        });
    }
    let rate = rate_hz as f64;
    let win = (cfg.window_s * rate).round() as usize;
    let hop = (cfg.hop_s * rate).round() as usize;
    if win == 0 || hop == 0 {
        return Err(Error::Config("window/hop too small for sample rate".into()));
    }

    // Pre-emphasis.
    let mut x: Vec<f64> = Vec::with_capacity(samples.len());
    x.push(samples[0] as f64);
    for i in 1..samples.len() {
        x.push(samples[i] as f64 - cfg.pre_emphasis * samples[i - 1] as f64);
    }
    // One frame per hop covering the whole signal (T = ceil(len/hop), so
    // T * hop_s stays within one hop of the waveform duration); windows
    // read zeros past the end.
    let n_frames = x.len().div_ceil(hop);
    x.resize((n_frames - 1) * hop + win, 0.0);

    let n_fft = win.next_power_of_two().max(2);
    let bank = mel_filterbank(cfg.n_mels, n_fft, rate);
    let hamming: Vec<f64> = (0..win)
        .map(|i| 0.54 - 0.46 * (2.0 * std::f64::consts::PI * i as f64 / (win - 1) as f64).cos())
        .collect();

    let mut cepstra: Vec<Vec<f64>> = Vec::with_capacity(n_frames);
    let mut re = vec![0.0f64; n_fft];
    let mut im = vec![0.0f64; n_fft];
    for t in 0..n_frames {
        let offset = t * hop;
        for i in 0..n_fft {
            re[i] = if i < win {
                x[offset + i] * hamming[i]
            } else {
                0.0
            };
            im[i] = 0.0;
        }
        fft_in_place(&mut re, &mut im);
        let power: Vec<f64> = (0..n_fft / 2 + 1)
            .map(|b| (re[b] * re[b] + im[b] * im[b]) / n_fft as f64)
            .collect();
        let log_mels: Vec<f64> = bank
            .iter()
            .map(|filt| {
                let e: f64 = filt.iter().zip(&power).map(|(f, p)| f * p).sum();
                e.max(1e-10).ln()
            })
            .collect();
        cepstra.push(dct2(&log_mels, cfg.n_ceps));
    }

    let d1 = deltas(&cepstra, cfg.delta_window);
    let d2 = deltas(&d1, cfg.delta_window);

    let dim = cfg.dim();
    let mut values = Array2::<f64>::zeros((n_frames, dim));
    for t in 0..n_frames {
        for c in 0..cfg.n_ceps {
            values[[t, c]] = cepstra[t][c];
            values[[t, cfg.n_ceps + c]] = d1[t][c];
            values[[t, 2 * cfg.n_ceps + c]] = d2[t][c];
        }
    }

    if cfg.mean_var_normalise {
        for c in 0..dim {
            let mut col = values.column_mut(c);
            let mean = col.iter().sum::<f64>() / n_frames as f64;
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n_frames as f64;
            let denom = var.sqrt() + 1e-8;
            col.mapv_inplace(|v| (v - mean) / denom);
        }
    }

    FeatureSequence::new(values.mapv(|v| v as f32), cfg.hop_s, cfg.window_s)
}
