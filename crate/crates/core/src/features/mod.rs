//! Time-frequency feature sequences: MFCC extraction, SpecAugment-style
//! masking and the on-disk feature format.

mod augment;
mod mfcc;

pub use augment::{spec_augment, AugmentConfig};
pub use mfcc::{compute_mfcc, MfccConfig};

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"VGSF";
const VERSION: u32 = 1;

/// A `T x F` matrix of frame features with timing metadata.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    /// Row `t` holds the `F` coefficients of frame `t`.
    pub values: Array2<f32>,
    pub frame_hop_s: f64,
    pub frame_window_s: f64,
}

impl FeatureSequence {
    pub fn new(values: Array2<f32>, frame_hop_s: f64, frame_window_s: f64) -> Result<Self> {
        let f = FeatureSequence {
            values,
            frame_hop_s,
            frame_window_s,
        };
        f.validate()?;
        Ok(f)
    }

    pub fn n_frames(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn duration_s(&self) -> f64 {
        self.n_frames() as f64 * self.frame_hop_s
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_frames() == 0 {
            return Err(Error::EmptyInput);
        }
        if self.frame_hop_s <= 0.0 || self.frame_window_s <= 0.0 {
            return Err(Error::Config("frame timing must be positive".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample);
        }
        Ok(())
    }

    /// Write in the binary feature format: header then row-major f32 LE.
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let werr = |e: std::io::Error| Error::io(path, e);
        w.write_all(MAGIC).map_err(werr)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(werr)?;
        w.write_all(&(self.n_frames() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(&(self.dim() as u32).to_le_bytes()).map_err(werr)?;
        w.write_all(&self.frame_hop_s.to_le_bytes()).map_err(werr)?;
        w.write_all(&self.frame_window_s.to_le_bytes()).map_err(werr)?;
        for v in self.values.iter() {
            w.write_all(&v.to_le_bytes()).map_err(werr)?;
        }
        w.flush().map_err(werr)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let bad = |message: &str| Error::FeatureFile {
            path: path.to_path_buf(),
            message: message.to_string(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        let mut f64buf = [0u8; 8];
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        if u32::from_le_bytes(u32buf) != VERSION {
            return Err(bad("unsupported version"));
        }
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let t = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut u32buf).map_err(|e| Error::io(path, e))?;
        let f = u32::from_le_bytes(u32buf) as usize;
        r.read_exact(&mut f64buf).map_err(|e| Error::io(path, e))?;
        let hop = f64::from_le_bytes(f64buf);
        r.read_exact(&mut f64buf).map_err(|e| Error::io(path, e))?;
        let window = f64::from_le_bytes(f64buf);
        if t == 0 || f == 0 {
            return Err(bad("empty feature matrix"));
        }
        let mut data = vec![0f32; t * f];
        let mut f32buf = [0u8; 4];
        for slot in data.iter_mut() {
            r.read_exact(&mut f32buf).map_err(|e| Error::io(path, e))?;
            *slot = f32::from_le_bytes(f32buf);
        }
        let values = Array2::from_shape_vec((t, f), data)
            .map_err(|_| bad("shape mismatch"))?;
        FeatureSequence::new(values, hop, window)
    }
}

/// Read a WAV file into mono f32 samples. Multi-channel audio is averaged
/// down to one channel; 16 kHz is expected downstream (resample upstream).
pub fn read_wav(path: &Path) -> Result<(Vec<f32>, u32)> {
    let reader = hound::WavReader::open(path).map_err(|e| Error::FeatureFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    let to_err = |e: hound::Error| Error::FeatureFile {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .into_samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(to_err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1i64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .into_samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(to_err)?
        }
    };
    let samples = if channels <= 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    Ok((samples, spec.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn wav_round_trip_reads_mono_samples() {
        let dir = tempdir();
        let path = dir.join("t.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut writer = hound::WavWriter::create(&path, spec).unwrap();
        for i in 0..1600 {
            let v = (2.0 * std::f32::consts::PI * 440.0 * i as f32 / 16_000.0).sin();
            writer.write_sample((v * i16::MAX as f32) as i16).unwrap();
        }
        writer.finalize().unwrap();
        let (samples, rate) = read_wav(&path).unwrap();
        assert_eq!(rate, 16_000);
        assert_eq!(samples.len(), 1600);
        assert!(samples.iter().all(|s| s.abs() <= 1.0));
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn feature_file_round_trips() {
        let mut rng = Stream::new(1);
        let values =
            Array2::from_shape_fn((17, 5), |_| rng.uniform(-2.0, 2.0) as f32);
        let seq = FeatureSequence::new(values, 0.010, 0.025).unwrap();
        let dir = tempdir();
        let path = dir.join("x.vgsf");
        seq.save(&path).unwrap();
        let back = FeatureSequence::load(&path).unwrap();
        assert_eq!(seq, back);
        std::fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn rejects_non_finite() {
        let mut values = Array2::zeros((3, 2));
        values[[1, 1]] = f32::NAN;
        assert!(FeatureSequence::new(values, 0.010, 0.025).is_err());
    }

    fn tempdir() -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "vgsf-test-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        dir
    }
}
