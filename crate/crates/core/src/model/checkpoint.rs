//! Checkpoints: an opaque little-endian f32 parameter blob plus a JSON
//! sidecar carrying the model configuration, vocabulary hash, epoch and the
//! dev metric the checkpoint was selected on.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use ndarray::NdFloat;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::{Model, ModelConfig};

const MAGIC: &[u8; 4] = b"VGSC";
const VERSION: u32 = 1;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub config: ModelConfig,
    /// Hex FNV hash of the vocabulary the model was trained against.
    pub vocab_hash: String,
    pub epoch: usize,
    pub dev_metric: f64,
}

impl CheckpointMeta {
    pub fn vocab_hash_u64(&self) -> Result<u64> {
        u64::from_str_radix(&self.vocab_hash, 16)
            .map_err(|_| Error::IncompatibleCheckpoint("bad vocab hash".into()))
    }
}

#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: Vec<f32>,
}

fn blob_path(base: &Path) -> PathBuf {
    base.with_extension("bin")
}

fn sidecar_path(base: &Path) -> PathBuf {
    base.with_extension("json")
}

impl Checkpoint {
    pub fn from_model<F: NdFloat>(
        model: &Model<F>,
        vocab_hash: u64,
        epoch: usize,
        dev_metric: f64,
    ) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                config: model.cfg.clone(),
                vocab_hash: format!("{vocab_hash:016x}"),
                epoch,
                dev_metric,
            },
            params: model.params().iter().map(|p| p.to_f64().unwrap() as f32).collect(),
        }
    }

    /// Write `<base>.bin` and `<base>.json`.
    pub fn save(&self, base: &Path) -> Result<()> {
        let blob = blob_path(base);
        let file = File::create(&blob).map_err(|e| Error::io(&blob, e))?;
        let mut w = BufWriter::new(file);
        let werr = |e: std::io::Error| Error::io(&blob, e);
        w.write_all(MAGIC).map_err(werr)?;
        w.write_all(&VERSION.to_le_bytes()).map_err(werr)?;
        w.write_all(&(self.params.len() as u64).to_le_bytes())
            .map_err(werr)?;
        for p in &self.params {
            w.write_all(&p.to_le_bytes()).map_err(werr)?;
        }
        w.flush().map_err(werr)?;

        let side = sidecar_path(base);
        let json = serde_json::to_string_pretty(&self.meta).map_err(|e| Error::Json {
            path: side.clone(),
            source: e,
        })?;
        std::fs::write(&side, json).map_err(|e| Error::io(&side, e))
    }

    pub fn load(base: &Path) -> Result<Checkpoint> {
        let side = sidecar_path(base);
        let text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: side.clone(),
            source: e,
        })?;

        let blob = blob_path(base);
        let file = File::open(&blob).map_err(|e| Error::io(&blob, e))?;
        let mut r = BufReader::new(file);
        let bad = |m: &str| Error::Checkpoint {
            path: blob.clone(),
            message: m.into(),
        };
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|e| Error::io(&blob, e))?;
        if &magic != MAGIC {
            return Err(bad("bad magic"));
        }
        let mut u32buf = [0u8; 4];
        r.read_exact(&mut u32buf).map_err(|e| Error::io(&blob, e))?;
        if u32::from_le_bytes(u32buf) != VERSION {
            return Err(bad("unsupported version"));
        }
        let mut u64buf = [0u8; 8];
        r.read_exact(&mut u64buf).map_err(|e| Error::io(&blob, e))?;
        let n = u64::from_le_bytes(u64buf) as usize;
        let mut params = vec![0f32; n];
        let mut f32buf = [0u8; 4];
        for p in params.iter_mut() {
            r.read_exact(&mut f32buf).map_err(|e| Error::io(&blob, e))?;
            *p = f32::from_le_bytes(f32buf);
        }
        Ok(Checkpoint { meta, params })
    }

    /// Instantiate the stored model.
    pub fn to_model(&self) -> Result<Model<f32>> {
        Model::from_parts(self.meta.config.clone(), self.params.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Architecture, ModelConfig};

    #[test]
    fn checkpoint_round_trips_bitwise() {
        let cfg = ModelConfig {
            architecture: Architecture::Psc,
            vocab_size: 5,
            feature_dim: 8,
            pooling_temperature: 2.0,
            seed: 3,
            ..ModelConfig::default()
        };
        let model: Model<f32> = Model::new(&cfg).unwrap();
        let ckpt = Checkpoint::from_model(&model, 0xdeadbeef, 17, 0.91);
        let dir = std::env::temp_dir().join(format!(
            "vgsloc-ckpt-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&dir).unwrap();
        let base = dir.join("model");
        ckpt.save(&base).unwrap();
        let back = Checkpoint::load(&base).unwrap();
        assert_eq!(back.params, ckpt.params);
        assert_eq!(back.meta.epoch, 17);
        assert_eq!(back.meta.vocab_hash_u64().unwrap(), 0xdeadbeef);
        let restored = back.to_model().unwrap();
        assert_eq!(restored.params(), model.params());
        std::fs::remove_dir_all(dir).ok();
    }
}
