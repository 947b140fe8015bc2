//! Train-time feature masking: up to two frequency-channel blocks and two
//! time-step blocks are replaced with the per-coefficient mean. Time warping
//! is deliberately left out (config flag reserved) so frame timing stays
//! exact for localisation ground truth.

use super::FeatureSequence;
use crate::rng::Stream;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub n_freq_masks: usize,
    /// Maximum width of one frequency mask, in coefficients.
    pub max_freq_width: usize,
    pub n_time_masks: usize,
    /// Maximum width of one time mask as a fraction of T.
    pub max_time_frac: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            n_freq_masks: 2,
            max_freq_width: 8,
            n_time_masks: 2,
            max_time_frac: 0.1,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        AugmentConfig {
            n_freq_masks: 0,
            max_freq_width: 0,
            n_time_masks: 0,
            max_time_frac: 0.0,
        }
    }

    pub fn is_disabled(&self) -> bool {
        self.n_freq_masks == 0 && self.n_time_masks == 0
    }
}

/// Apply masking to a copy of `f`. Shape is always preserved; inputs with
/// fewer than 4 frames are returned unchanged.
///
/// Draw order per call: for each frequency mask a width then a start, then
/// the same for each time mask.
pub fn spec_augment(f: &FeatureSequence, cfg: &AugmentConfig, rng: &mut Stream) -> FeatureSequence {
    let t_max = f.n_frames();
    let dim = f.dim();
    if t_max < 4 || cfg.is_disabled() {
        return f.clone();
    }
    let mut out = f.clone();

    // Per-coefficient means of the unmasked input.
    let means: Vec<f32> = (0..dim)
        .map(|c| f.values.column(c).iter().sum::<f32>() / t_max as f32)
        .collect();

    for _ in 0..cfg.n_freq_masks {
        let width = rng.int_in(0, cfg.max_freq_width.min(dim));
        if width == 0 {
            continue;
        }
        let start = rng.int_in(0, dim - width);
        for c in start..start + width {
            for t in 0..t_max {
                out.values[[t, c]] = means[c];
            }
        }
    }

    let max_time = ((t_max as f64) * cfg.max_time_frac).floor() as usize;
    for _ in 0..cfg.n_time_masks {
        let width = rng.int_in(0, max_time);
        if width == 0 {
            continue;
        }
        let start = rng.int_in(0, t_max - width);
        for t in start..start + width {
            for c in 0..dim {
                out.values[[t, c]] = means[c];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn fixture(t: usize, f: usize, seed: u64) -> FeatureSequence {
        let mut rng = Stream::new(seed);
        let values = Array2::from_shape_fn((t, f), |_| rng.uniform(-1.0, 1.0) as f32);
        FeatureSequence::new(values, 0.010, 0.025).unwrap()
    }

    #[test]
    fn zero_masks_is_identity() {
        let f = fixture(50, 13, 3);
        let mut rng = Stream::new(0);
        let out = spec_augment(&f, &AugmentConfig::disabled(), &mut rng);
        assert_eq!(f, out);
    }

    #[test]
    fn shape_and_finiteness_preserved() {
        let f = fixture(100, 39, 4);
        let cfg = AugmentConfig::default();
        for i in 0..50 {
            let mut rng = Stream::new(i);
            let out = spec_augment(&f, &cfg, &mut rng);
            assert_eq!(out.values.dim(), f.values.dim());
            assert!(out.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_time_mask_bounded_by_tenth_of_t() {
        let f = fixture(100, 8, 5);
        let cfg = AugmentConfig {
            n_freq_masks: 0,
            max_freq_width: 0,
            n_time_masks: 1,
            max_time_frac: 0.1,
        };
        for i in 0..100 {
            let mut rng = Stream::new(i);
            let out = spec_augment(&f, &cfg, &mut rng);
            let changed_rows = (0..100)
                .filter(|&t| (0..8).any(|c| out.values[[t, c]] != f.values[[t, c]]))
                .count();
            assert!(changed_rows <= 10, "changed {changed_rows} rows");
        }
    }

    #[test]
    fn masked_fraction_matches_expectation() {
        // One mask per axis so the expected masked-cell fraction has the
        // exact closed form E[w]/F + E[u]/T - E[w]E[u]/(F*T).
        let t_max = 100usize;
        let dim = 39usize;
        let cfg = AugmentConfig {
            n_freq_masks: 1,
            max_freq_width: 8,
            n_time_masks: 1,
            max_time_frac: 0.1,
        };
        let f = fixture(t_max, dim, 6);
        let e_w = 8.0 / 2.0;
        let e_u = 10.0 / 2.0;
        let expected = e_w / dim as f64 + e_u / t_max as f64
            - (e_w * e_u) / (dim * t_max) as f64;

        let mut masked_cells = 0usize;
        let runs = 1000;
        let rng = Stream::new(99);
        for i in 0..runs {
            let mut sub = rng.derive("aug", i);
            let out = spec_augment(&f, &cfg, &mut sub);
            masked_cells += out
                .values
                .iter()
                .zip(f.values.iter())
                .filter(|(a, b)| a != b)
                .count();
        }
        let frac = masked_cells as f64 / (runs as usize * t_max * dim) as f64;
        // Cells that already equal the column mean stay identical under
        // masking, so the empirical count can only undershoot; the fixture is
        // continuous so that is measure-zero.
        assert!(
            (frac - expected).abs() < 0.02,
            "fraction {frac:.4} vs expected {expected:.4}"
        );
    }
}
