//! Training: Adam on the binary cross-entropy between detection
//! probabilities and visual or bag-of-words targets, with SpecAugment-style
//! masking at train time only, per-epoch dev-set F1 at theta = 0.5 for
//! model selection, and cross-lingual warm starting from a checkpoint.
//!
//! Batches pad every utterance to the longest in the batch; per-frame
//! validity masks keep padded frames out of every pooling and attention
//! computation. Gradients are summed in batch order regardless of worker
//! scheduling, so a seed fully determines the run.

use std::path::Path;
use std::time::Instant;

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CorpusManifest, Split, UtteranceRecord, UtteranceSource};
use crate::error::{Error, Result};
use crate::eval::eval_detection;
use crate::features::{
    compute_mfcc, read_wav, spec_augment, AugmentConfig, FeatureSequence, MfccConfig,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::{GradBuffer, Model};
use crate::nn;
use crate::rng::Stream;
use crate::supervision::{bow_targets, load_visual_targets, SupervisionTarget, TargetKind};

/// Detection threshold used for dev-set model selection.
pub const SELECTION_THETA: f64 = 0.5;

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub supervision: TargetKind,
    pub seed: u64,
    pub augment: AugmentConfig,
    pub augment_enabled: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-4,
            epochs: 100,
            batch_size: 32,
            supervision: TargetKind::Visual,
            seed: 0,
            augment: AugmentConfig::default(),
            augment_enabled: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Binary cross-entropy between probability vectors, averaged over
/// keywords, with predictions clamped to [1e-7, 1 - 1e-7].
pub fn bce_loss(y_hat: &[f64], y: &[f64]) -> Result<f64> {
    if y_hat.len() != y.len() {
        return Err(Error::LengthMismatch {
            left: y_hat.len(),
            right: y.len(),
        });
    }
    if y_hat.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut acc = 0.0;
    for (&p, &t) in y_hat.iter().zip(y) {
        let p = p.clamp(1e-7, 1.0 - 1e-7);
        acc -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
    }
    Ok(acc / y_hat.len() as f64)
}

/// BCE from pre-sigmoid logits, numerically stable; same value as
/// [`bce_loss`] away from the clamp region.
fn bce_from_logits(logits: &Array1<f32>, target: &[f32]) -> f64 {
    let mut acc = 0.0f64;
    for (&z, &t) in logits.iter().zip(target) {
        let z = z as f64;
        let softplus = z.max(0.0) + (1.0 + (-z.abs()).exp()).ln();
        acc += softplus - t as f64 * z;
    }
    acc / logits.len() as f64
}

pub struct TrainItem {
    pub id: String,
    pub features: FeatureSequence,
    pub target: SupervisionTarget,
}

pub struct DevItem {
    pub id: String,
    pub features: FeatureSequence,
    pub presence: Vec<bool>,
}

pub struct TrainData {
    pub train: Vec<TrainItem>,
    pub dev: Vec<DevItem>,
}

/// Load features for a record: stored feature files directly, audio via
/// MFCC with the default configuration.
pub fn load_features(manifest: &CorpusManifest, record: &UtteranceRecord) -> Result<FeatureSequence> {
    match &record.source {
        UtteranceSource::Features(p) => FeatureSequence::load(&manifest.resolve(p)),
        UtteranceSource::Audio(p) => {
            let path = manifest.resolve(p);
            let (samples, rate) = read_wav(&path)?;
            compute_mfcc(&samples, rate, &MfccConfig::default())
        }
    }
}

fn target_for(
    manifest: &CorpusManifest,
    record: &UtteranceRecord,
    kind: TargetKind,
) -> Result<SupervisionTarget> {
    match kind {
        TargetKind::Bow => {
            let transcript = record.transcript.as_ref().ok_or_else(|| Error::MissingTarget {
                id: record.id.clone(),
                what: "transcript (bow)".into(),
            })?;
            Ok(bow_targets(transcript, &manifest.vocabulary))
        }
        TargetKind::Visual => {
            let path = record.visual_tags.as_ref().ok_or_else(|| Error::MissingTarget {
                id: record.id.clone(),
                what: "visual tags".into(),
            })?;
            load_visual_targets(&manifest.resolve(path), &manifest.vocabulary)
        }
    }
}

/// Materialise train and dev items; visual targets are whatever the tagger
/// wrote to disk before training (its weights are never touched here).
pub fn load_train_data(manifest: &CorpusManifest, kind: TargetKind) -> Result<TrainData> {
    let mut train = Vec::new();
    for r in manifest.records_in(Split::Train) {
        train.push(TrainItem {
            id: r.id.clone(),
            features: load_features(manifest, r)?,
            target: target_for(manifest, r, kind)?,
        });
    }
    if train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    let mut dev = Vec::new();
    for r in manifest.records_in(Split::Dev) {
        let transcript = r.transcript.as_ref().ok_or_else(|| Error::MissingTarget {
            id: r.id.clone(),
            what: "transcript (dev reference)".into(),
        })?;
        let presence = manifest
            .vocabulary
            .keywords()
            .iter()
            .map(|kw| {
                let kw = kw.to_lowercase();
                transcript.iter().any(|t| t.to_lowercase() == kw)
            })
            .collect();
        dev.push(DevItem {
            id: r.id.clone(),
            features: load_features(manifest, r)?,
            presence,
        });
    }
    Ok(TrainData { train, dev })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_f1: f64,
    pub wall_s: f64,
}

pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_dev_f1: f64,
}

/// Serialise the per-epoch log as JSON Lines.
pub fn write_log(log: &[EpochLog], path: &Path) -> Result<()> {
    let mut out = String::new();
    for entry in log {
        out.push_str(&serde_json::to_string(entry).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
    t: u64,
    lr: f32,
    beta1: f32,
    beta2: f32,
    eps: f32,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Adam {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            lr: lr as f32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step(&mut self, params: &mut [f32], grads: &[f32]) {
        self.t += 1;
        let b1t = 1.0 - self.beta1.powi(self.t as i32);
        let b2t = 1.0 - self.beta2.powi(self.t as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / b1t;
            let v_hat = self.v[i] / b2t;
            params[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}

/// Pad a `T x F` feature matrix with zero frames up to `t_max` rows.
fn pad_to(values: &Array2<f32>, t_max: usize) -> Array2<f32> {
    if values.nrows() == t_max {
        return values.clone();
    }
    let mut out = Array2::zeros((t_max, values.ncols()));
    out.slice_mut(ndarray::s![..values.nrows(), ..])
        .assign(values);
    out
}

/// Forward and backward over one batch. Returns the mean loss and the mean
/// gradient; items are `(features, valid_len, target, augment stream)`.
/// Probe wrappers over training internals, for benches and pilots.
pub fn adam_probe(n: usize, lr: f64) -> Adam {
    Adam::new(n, lr)
}

pub fn adam_step_probe(adam: &mut Adam, params: &mut [f32], grads: &[f32]) {
    adam.step(params, grads)
}

/// Public probe wrapper around the batch step, for benches and tests.
pub fn batch_probe(
    model: &Model<f32>,
    items: &[(&TrainItem, Stream)],
    cfg: &TrainConfig,
) -> Result<(f64, GradBuffer<f32>)> {
    batch_step(model, items, cfg)
}

pub(crate) fn batch_step(
    model: &Model<f32>,
    items: &[(&TrainItem, Stream)],
    cfg: &TrainConfig,
) -> Result<(f64, GradBuffer<f32>)> {
    let t_max = items
        .iter()
        .map(|(it, _)| it.features.n_frames())
        .max()
        .unwrap_or(0);
    // Parallel within the batch; collected in batch order so reduction is
    // deterministic no matter the scheduling.
    let results: Vec<Result<(f64, GradBuffer<f32>)>> = items
        .par_iter()
        .map(|(item, aug_rng)| {
            let features = if cfg.augment_enabled && !cfg.augment.is_disabled() {
                let mut rng = aug_rng.clone();
                spec_augment(&item.features, &cfg.augment, &mut rng)
            } else {
                item.features.clone()
            };
            let valid = features.n_frames();
            let padded = pad_to(&features.values, t_max);
            let (trace, cache) =
                model.forward_cached(&padded.view(), valid, features.frame_hop_s)?;
            let v = trace.logits.len();
            if item.target.probs.len() != v {
                return Err(Error::LengthMismatch {
                    left: item.target.probs.len(),
                    right: v,
                });
            }
            let loss = bce_from_logits(&trace.logits, &item.target.probs);
            let scale = 1.0 / v as f32;
            let dlogits = Array1::from_shape_fn(v, |w| {
                (nn::sigmoid(trace.logits[w]) - item.target.probs[w]) * scale
            });
            let mut grads = model.grad_buffer();
            model.backward(&cache, &dlogits.view(), &mut grads);
            Ok((loss, grads))
        })
        .collect();

    let mut total = model.grad_buffer();
    let mut loss_sum = 0.0;
    for r in results {
        let (loss, grads) = r?;
        loss_sum += loss;
        total.add_assign(&grads);
    }
    let inv = 1.0 / items.len() as f32;
    total.scale(inv);
    Ok((loss_sum / items.len() as f64, total))
}

/// Detection F1 on the dev split at [`SELECTION_THETA`].
pub fn dev_detection_f1(model: &Model<f32>, dev: &[DevItem]) -> Result<f64> {
    if dev.is_empty() {
        return Ok(0.0);
    }
    let mut scores = Vec::with_capacity(dev.len());
    let mut presence = Vec::with_capacity(dev.len());
    for item in dev {
        let trace = model.forward(&item.features)?;
        scores.push(trace.y_hat.iter().map(|&p| p as f64).collect::<Vec<_>>());
        presence.push(item.presence.clone());
    }
    let report = eval_detection(&scores, &presence, SELECTION_THETA)?;
    Ok(report.macro_f1.mean.unwrap_or(0.0))
}

/// Optimise the model on the train split, selecting the best epoch by dev
/// detection F1. The model is left at the best-epoch parameters, which are
/// also returned as a checkpoint.
pub fn train(
    model: &mut Model<f32>,
    manifest: &CorpusManifest,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let data = load_train_data(manifest, cfg.supervision)?;
    train_on(model, manifest, &data, cfg)
}

/// As [`train`] but with preloaded data, so callers can reuse corpora.
pub fn train_on(
    model: &mut Model<f32>,
    manifest: &CorpusManifest,
    data: &TrainData,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if data.train.is_empty() {
        return Err(Error::EmptyTrainSplit);
    }
    for item in &data.train {
        if item.target.kind != cfg.supervision {
            return Err(Error::MissingTarget {
                id: item.id.clone(),
                what: cfg.supervision.name().into(),
            });
        }
    }
    let root = Stream::new(cfg.seed);
    let mut adam = Adam::new(model.params().len(), cfg.learning_rate);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    let mut best_dev = f64::NEG_INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Vec<f32> = model.params().to_vec();

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        let mut shuffle_rng = root.derive("shuffle", epoch as u64);
        shuffle_rng.shuffle(&mut order);
        let aug_root = root.derive("augment", epoch as u64);

        let mut loss_sum = 0.0;
        let mut n_batches = 0usize;
        for batch_ids in order.chunks(cfg.batch_size) {
            let items: Vec<(&TrainItem, Stream)> = batch_ids
                .iter()
                .map(|&i| {
                    let item = &data.train[i];
                    (item, aug_root.derive(&item.id, 0))
                })
                .collect();
            let (loss, grads) = batch_step(model, &items, cfg)?;
            adam.step(model.params_mut(), &grads.data);
            loss_sum += loss;
            n_batches += 1;
        }

        let dev_f1 = dev_detection_f1(model, &data.dev)?;
        if dev_f1 > best_dev {
            best_dev = dev_f1;
            best_epoch = epoch;
            best_params = model.params().to_vec();
        }
        log.push(EpochLog {
            epoch,
            train_loss: loss_sum / n_batches.max(1) as f64,
            dev_f1,
            wall_s: started.elapsed().as_secs_f64(),
        });
    }

    model.params_mut().copy_from_slice(&best_params);
    let checkpoint = Checkpoint::from_model(
        model,
        manifest.vocabulary.hash64(),
        best_epoch,
        best_dev.max(0.0),
    );
    Ok(TrainOutcome {
        checkpoint,
        log,
        best_epoch,
        best_dev_f1: best_dev.max(0.0),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStartMode {
    All,
    EncoderOnly,
}

impl std::str::FromStr for WarmStartMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "all" => Ok(WarmStartMode::All),
            "encoder_only" | "encoder-only" => Ok(WarmStartMode::EncoderOnly),
            other => Err(Error::Config(format!("unknown warm-start mode {other:?}"))),
        }
    }
}

/// Initialise a model from a checkpoint before fine-tuning
/// (cross-lingual transfer or continued training).
///
/// `All` requires an identical layout and a matching vocabulary hash;
/// `EncoderOnly` copies only `enc.*` tensors and tolerates a different
/// vocabulary.
pub fn warm_start(
    model: &mut Model<f32>,
    ckpt: &Checkpoint,
    mode: WarmStartMode,
    corpus_vocab_hash: u64,
) -> Result<()> {
    let source = ckpt.to_model()?;
    match mode {
        WarmStartMode::All => {
            if source.layout() != model.layout() {
                return Err(Error::IncompatibleCheckpoint(format!(
                    "layout mismatch: checkpoint {} vs model {}",
                    ckpt.meta.config.architecture.name(),
                    model.cfg.architecture.name()
                )));
            }
            if ckpt.meta.vocab_hash_u64()? != corpus_vocab_hash {
                return Err(Error::VocabularyHashMismatch);
            }
            model.params_mut().copy_from_slice(source.params());
            Ok(())
        }
        WarmStartMode::EncoderOnly => {
            let src_layout = source.layout().clone();
            let dst_layout = model.layout().clone();
            for (i, spec) in src_layout.tensors.iter().enumerate() {
                if !spec.name.starts_with("enc.") {
                    continue;
                }
                let Some(j) = dst_layout.index_of(&spec.name) else {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {} missing from target model",
                        spec.name
                    )));
                };
                let dst_spec = &dst_layout.tensors[j];
                if (dst_spec.rows, dst_spec.cols) != (spec.rows, spec.cols) {
                    return Err(Error::IncompatibleCheckpoint(format!(
                        "tensor {} shape {}x{} vs {}x{}",
                        spec.name, spec.rows, spec.cols, dst_spec.rows, dst_spec.cols
                    )));
                }
                let src_range = src_layout.range(i);
                let dst_range = dst_layout.range(j);
                model.params_mut()[dst_range].copy_from_slice(&source.params()[src_range]);
            }
            Ok(())
        }
    }
}
