//! The four audio architectures, each an encoder, a temporal pooling layer
//! and a classifier:
//!
//! | architecture    | encoder  | pooling      | classifier        |
//! |-----------------|----------|--------------|-------------------|
//! | PSC             | CNN      | log-mean-exp | none              |
//! | CNN-Pool        | CNN-Pool | max          | MLP(1024, V)      |
//! | CNN-Attend      | CNN      | attention    | MLP(1000, 1)      |
//! | CNN-PoolAttend  | CNN-Pool | attention    | MLP(1024, 1)      |
//!
//! The CNN encoder is six 1-D conv layers (96 filters of width 9, then four
//! of 96 x 11, then a 1000-filter width-11 layer), stride 1, padding 4/5 so
//! the frame count is preserved. The CNN-Pool encoder is 64x9, 256x11 and
//! 1024x11 with max-pooling over 3 after the first two layers (downsample
//! factor 9). For PSC the final encoder layer has exactly V filters and no
//! ReLU, so frame scores can go negative and the pooled, sigmoided
//! detection score can fall below 0.5.
//!
//! Parameters live in one flat buffer described by a [`Layout`]; forward
//! and backward are explicit. Everything is generic over f32/f64: training
//! uses f32, gradient-sensitive paths (saliency, finite differences) f64.

pub mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis, NdFloat};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::nn;
use crate::rng::Stream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Architecture {
    #[serde(rename = "psc")]
    Psc,
    #[serde(rename = "cnn-pool")]
    CnnPool,
    #[serde(rename = "cnn-attend")]
    CnnAttend,
    #[serde(rename = "cnn-pool-attend")]
    CnnPoolAttend,
}

impl Architecture {
    pub fn name(&self) -> &'static str {
        match self {
            Architecture::Psc => "psc",
            Architecture::CnnPool => "cnn-pool",
            Architecture::CnnAttend => "cnn-attend",
            Architecture::CnnPoolAttend => "cnn-pool-attend",
        }
    }

    pub fn has_attention(&self) -> bool {
        matches!(self, Architecture::CnnAttend | Architecture::CnnPoolAttend)
    }

    pub fn uses_pool_encoder(&self) -> bool {
        matches!(self, Architecture::CnnPool | Architecture::CnnPoolAttend)
    }
}

impl std::str::FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "psc" => Ok(Architecture::Psc),
            "cnn-pool" => Ok(Architecture::CnnPool),
            "cnn-attend" => Ok(Architecture::CnnAttend),
            "cnn-pool-attend" => Ok(Architecture::CnnPoolAttend),
            other => Err(Error::Config(format!("unknown architecture {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub architecture: Architecture,
    pub vocab_size: usize,
    pub feature_dim: usize,
    /// log-mean-exp temperature r; only the PSC pooling layer reads it.
    pub pooling_temperature: f64,
    /// Classifier hidden width; 4096 in the base setup, 8192 in the larger.
    pub clf_hidden: usize,
    /// Query embedding dimension E for attention variants. Defaults to the
    /// encoder output channels and must equal them when set.
    pub query_dim: Option<usize>,
    /// Optional final encoder channel override; must match the derived
    /// value (e.g. V for PSC), it exists so misconfiguration is detectable.
    pub encoder_out_channels: Option<usize>,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: Architecture::CnnAttend,
            vocab_size: 1,
            feature_dim: 39,
            pooling_temperature: 1.0,
            clf_hidden: 4096,
            query_dim: None,
            encoder_out_channels: None,
            seed: 0,
        }
    }
}

impl ModelConfig {
    /// Encoder output channels E.
    pub fn encoder_channels(&self) -> usize {
        match self.architecture {
            Architecture::Psc => self.vocab_size,
            Architecture::CnnAttend => 1000,
            Architecture::CnnPool | Architecture::CnnPoolAttend => 1024,
        }
    }

    pub fn downsample_factor(&self) -> usize {
        if self.architecture.uses_pool_encoder() {
            9
        } else {
            1
        }
    }

    /// Encoder output length for an input of `t` frames, from the layer
    /// arithmetic: stride-1 same-length convolutions plus two ceil-mode
    /// max-pools of 3 for the CNN-Pool encoder.
    pub fn output_len(&self, t: usize) -> usize {
        if self.architecture.uses_pool_encoder() {
            t.div_ceil(3).div_ceil(3)
        } else {
            t
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 {
            return Err(Error::Config("vocab_size must be >= 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be >= 1".into()));
        }
        if self.architecture == Architecture::Psc && self.pooling_temperature <= 0.0 {
            return Err(Error::Config(
                "pooling_temperature must be > 0 for PSC".into(),
            ));
        }
        if self.clf_hidden != 4096 && self.clf_hidden != 8192 {
            return Err(Error::Config(format!(
                "clf_hidden must be 4096 or 8192, got {}",
                self.clf_hidden
            )));
        }
        if let Some(e) = self.query_dim {
            if !self.architecture.has_attention() {
                return Err(Error::Config(
                    "query_dim only applies to attention architectures".into(),
                ));
            }
            if e != self.encoder_channels() {
                return Err(Error::Config(format!(
                    "query_dim {} must equal encoder output channels {}",
                    e,
                    self.encoder_channels()
                )));
            }
        }
        if let Some(c) = self.encoder_out_channels {
            if c != self.encoder_channels() {
                return Err(Error::Config(format!(
                    "encoder_out_channels {} inconsistent with architecture {} (expected {})",
                    c,
                    self.architecture.name(),
                    self.encoder_channels()
                )));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvSpec {
    c_in: usize,
    c_out: usize,
    kernel: usize,
    pad: usize,
    relu: bool,
    pool_after: bool,
}

fn encoder_spec(cfg: &ModelConfig) -> Vec<ConvSpec> {
    if cfg.architecture.uses_pool_encoder() {
        vec![
            ConvSpec { c_in: cfg.feature_dim, c_out: 64, kernel: 9, pad: 4, relu: true, pool_after: true },
            ConvSpec { c_in: 64, c_out: 256, kernel: 11, pad: 5, relu: true, pool_after: true },
            ConvSpec { c_in: 256, c_out: 1024, kernel: 11, pad: 5, relu: true, pool_after: false },
        ]
    } else {
        let out = cfg.encoder_channels();
        let last_relu = cfg.architecture != Architecture::Psc;
        let mut layers = vec![ConvSpec {
            c_in: cfg.feature_dim,
            c_out: 96,
            kernel: 9,
            pad: 4,
            relu: true,
            pool_after: false,
        }];
        for _ in 0..4 {
            layers.push(ConvSpec { c_in: 96, c_out: 96, kernel: 11, pad: 5, relu: true, pool_after: false });
        }
        layers.push(ConvSpec {
            c_in: 96,
            c_out: out,
            kernel: 11,
            pad: 5,
            relu: last_relu,
            pool_after: false,
        });
        layers
    }
}

/// One named tensor in the flat parameter buffer. Vectors have `cols == 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    /// Fan-in used for uniform initialisation bounds.
    pub fan_in: usize,
    /// Init gain: 2.0 ahead of a ReLU, 1.0 otherwise. The uniform bound is
    /// sqrt(3 * gain / fan_in), which keeps activation magnitudes stable
    /// through the deep encoder.
    pub gain: f64,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    offsets: Vec<usize>,
    total: usize,
}

impl Layout {
    fn build(tensors: Vec<TensorSpec>) -> Layout {
        let mut offsets = Vec::with_capacity(tensors.len());
        let mut total = 0;
        for t in &tensors {
            offsets.push(total);
            total += t.len();
        }
        Layout {
            tensors,
            offsets,
            total,
        }
    }

    pub fn total_len(&self) -> usize {
        self.total
    }

    pub fn range(&self, idx: usize) -> std::ops::Range<usize> {
        self.offsets[idx]..self.offsets[idx] + self.tensors[idx].len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.tensors.iter().position(|t| t.name == name)
    }
}

fn layout_for(cfg: &ModelConfig) -> Layout {
    let mut tensors = Vec::new();
    let t = |name: String, rows: usize, cols: usize, fan_in: usize, gain: f64| TensorSpec {
        name,
        rows,
        cols,
        fan_in,
        gain,
    };
    for (i, spec) in encoder_spec(cfg).iter().enumerate() {
        let fan = spec.c_in * spec.kernel;
        let gain = if spec.relu { 2.0 } else { 1.0 };
        tensors.push(t(format!("enc.{i}.weight"), spec.c_out, fan, fan, gain));
        tensors.push(t(format!("enc.{i}.bias"), spec.c_out, 1, fan, 0.0));
    }
    let e = cfg.encoder_channels();
    let hidden = cfg.clf_hidden;
    match cfg.architecture {
        Architecture::Psc => {}
        Architecture::CnnPool => {
            tensors.push(t("clf.l1.weight".into(), hidden, e, e, 2.0));
            tensors.push(t("clf.l1.bias".into(), hidden, 1, e, 0.0));
            tensors.push(t("clf.l2.weight".into(), cfg.vocab_size, hidden, hidden, 1.0));
            tensors.push(t("clf.l2.bias".into(), cfg.vocab_size, 1, hidden, 0.0));
        }
        Architecture::CnnAttend | Architecture::CnnPoolAttend => {
            tensors.push(t("attn.queries".into(), cfg.vocab_size, e, e, 1.0));
            tensors.push(t("clf.l1.weight".into(), hidden, e, e, 2.0));
            tensors.push(t("clf.l1.bias".into(), hidden, 1, e, 0.0));
            tensors.push(t("clf.l2.weight".into(), 1, hidden, hidden, 1.0));
            tensors.push(t("clf.l2.bias".into(), 1, 1, hidden, 0.0));
        }
    }
    Layout::build(tensors)
}

/// Gradient buffer aligned with a model's parameter layout.
pub struct GradBuffer<F> {
    pub data: Vec<F>,
}

impl<F: NdFloat> GradBuffer<F> {
    fn zeros(len: usize) -> Self {
        GradBuffer {
            data: vec![F::zero(); len],
        }
    }

    pub fn add_assign(&mut self, other: &GradBuffer<F>) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + *b;
        }
    }

    pub fn scale(&mut self, k: F) {
        for a in self.data.iter_mut() {
            *a = *a * k;
        }
    }
}

/// Outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardTrace<F> {
    /// Detection probabilities, length V, each in [0, 1].
    pub y_hat: Array1<F>,
    /// Encoder output H, `E x T'`; columns at and beyond `valid_cols` are
    /// padding and identically zero.
    pub h: Array2<F>,
    /// Attention weights `V x T'` for attention architectures; each row
    /// sums to 1 over the valid prefix.
    pub attention: Option<Array2<F>>,
    /// Pre-sigmoid detection logits, length V.
    pub logits: Array1<F>,
    pub architecture: Architecture,
    pub downsample_factor: usize,
    pub frame_hop_s: f64,
    pub valid_cols: usize,
}

impl<F: NdFloat> ForwardTrace<F> {
    /// Centre time (seconds) of encoder step `t`.
    pub fn time_of(&self, t: usize) -> f64 {
        (t as f64 * self.downsample_factor as f64 + self.downsample_factor as f64 / 2.0)
            * self.frame_hop_s
    }
}

pub(crate) struct EncoderCache<F> {
    cols: Vec<Array2<F>>,
    /// Per layer: the conv output after ReLU and masking, before pooling.
    outputs: Vec<Array2<F>>,
    pool_argmax: Vec<Option<Vec<usize>>>,
}

pub(crate) enum HeadCache<F> {
    Psc {
        weights: Array2<F>,
    },
    MaxPool {
        argmax: Vec<usize>,
        z: Array1<F>,
        a1: Array1<F>,
    },
    Attention {
        attn: Array2<F>,
        context: Array2<F>,
        a1: Array2<F>,
    },
}

pub(crate) struct ForwardCache<F> {
    pub enc: EncoderCache<F>,
    pub head: HeadCache<F>,
    pub h: Array2<F>,
    pub valid_h: usize,
}

pub struct Model<F: NdFloat> {
    pub cfg: ModelConfig,
    layout: Layout,
    enc_spec: Vec<ConvSpec>,
    params: Vec<F>,
}

impl<F: NdFloat> Model<F> {
    /// Build a model with seeded, deterministic uniform fan-in init.
    pub fn new(cfg: &ModelConfig) -> Result<Model<F>> {
        cfg.validate()?;
        let layout = layout_for(cfg);
        let mut params = vec![F::zero(); layout.total_len()];
        let root = Stream::new(cfg.seed);
        for (i, spec) in layout.tensors.iter().enumerate() {
            let mut rng = root.derive(&spec.name, 0);
            // Biases (gain 0) use the plain 1/sqrt(fan) bound.
            let bound = if spec.gain > 0.0 {
                (3.0 * spec.gain / spec.fan_in as f64).sqrt()
            } else {
                1.0 / (spec.fan_in as f64).sqrt()
            };
            let range = layout.range(i);
            for p in &mut params[range] {
                *p = nn::cast(rng.uniform(-bound, bound));
            }
        }
        Ok(Model {
            cfg: cfg.clone(),
            enc_spec: encoder_spec(cfg),
            layout,
            params,
        })
    }

    pub(crate) fn from_parts(cfg: ModelConfig, params: Vec<F>) -> Result<Model<F>> {
        cfg.validate()?;
        let layout = layout_for(&cfg);
        if params.len() != layout.total_len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "parameter count {} does not match layout ({})",
                params.len(),
                layout.total_len()
            )));
        }
        Ok(Model {
            enc_spec: encoder_spec(&cfg),
            layout,
            cfg,
            params,
        })
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn params(&self) -> &[F] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [F] {
        &mut self.params
    }

    pub fn grad_buffer(&self) -> GradBuffer<F> {
        GradBuffer::zeros(self.layout.total_len())
    }

    /// FNV hash over the parameter bytes; used to assert that read-only
    /// operations leave the model untouched.
    pub fn params_hash(&self) -> u64 {
        let mut bytes = Vec::with_capacity(self.params.len() * 8);
        for p in &self.params {
            bytes.extend_from_slice(&p.to_f64().unwrap().to_le_bytes());
        }
        crate::rng::fnv1a(&bytes)
    }

    /// Convert parameters to another float width.
    pub fn cast<G: NdFloat>(&self) -> Model<G> {
        let params = self
            .params
            .iter()
            .map(|&p| G::from(p).expect("finite parameter"))
            .collect();
        Model {
            cfg: self.cfg.clone(),
            layout: self.layout.clone(),
            enc_spec: self.enc_spec.clone(),
            params,
        }
    }

    fn mat(&self, idx: usize) -> ArrayView2<'_, F> {
        let spec = &self.layout.tensors[idx];
        ArrayView2::from_shape((spec.rows, spec.cols), &self.params[self.layout.range(idx)])
            .expect("layout shape")
    }

    fn vecv(&self, idx: usize) -> ArrayView1<'_, F> {
        let spec = &self.layout.tensors[idx];
        debug_assert_eq!(spec.cols, 1);
        ArrayView1::from_shape(spec.rows, &self.params[self.layout.range(idx)])
            .expect("layout shape")
    }

    fn head_tensor(&self, name: &str) -> usize {
        self.layout
            .index_of(name)
            .unwrap_or_else(|| panic!("tensor {name} missing from layout"))
    }

    /// Transpose `T x F` features into the channel-major working matrix.
    fn input_matrix(&self, values: &ArrayView2<'_, f32>) -> Array2<F> {
        Array2::from_shape_fn((values.ncols(), values.nrows()), |(c, t)| {
            nn::cast::<F>(values[[t, c]] as f64)
        })
    }

    pub(crate) fn encode_cached(
        &self,
        x: Array2<F>,
        valid: usize,
    ) -> (Array2<F>, usize, EncoderCache<F>) {
        let mut cache = EncoderCache {
            cols: Vec::with_capacity(self.enc_spec.len()),
            outputs: Vec::with_capacity(self.enc_spec.len()),
            pool_argmax: Vec::with_capacity(self.enc_spec.len()),
        };
        let mut cur = x;
        let mut cur_valid = valid;
        for (i, spec) in self.enc_spec.iter().enumerate() {
            let w = self.mat(2 * i);
            let b = self.vecv(2 * i + 1);
            let (mut out, col) = nn::conv1d_forward(&cur.view(), &w, &b, spec.kernel, spec.pad);
            if spec.relu {
                nn::relu_inplace(&mut out);
            }
            nn::zero_invalid_cols(&mut out, cur_valid);
            cache.cols.push(col);
            if spec.pool_after {
                let (pooled, argmax, new_valid) = nn::maxpool3(&out.view(), cur_valid);
                cache.outputs.push(out);
                cache.pool_argmax.push(Some(argmax));
                cur = pooled;
                cur_valid = new_valid;
            } else {
                cache.outputs.push(out.clone());
                cache.pool_argmax.push(None);
                cur = out;
            }
        }
        (cur, cur_valid, cache)
    }

    /// Encoder output `H` for a feature matrix (`T x F`, f32) with the given
    /// valid length.
    pub fn encode(&self, values: &ArrayView2<'_, f32>, valid: usize) -> Result<(Array2<F>, usize)> {
        self.check_input(values, valid)?;
        let x = self.input_matrix(values);
        let (h, v, _) = self.encode_cached(x, valid);
        Ok((h, v))
    }

    fn check_input(&self, values: &ArrayView2<'_, f32>, valid: usize) -> Result<()> {
        if values.nrows() == 0 || valid == 0 {
            return Err(Error::EmptyInput);
        }
        if valid > values.nrows() {
            return Err(Error::Config(format!(
                "valid length {} exceeds physical length {}",
                valid,
                values.nrows()
            )));
        }
        if values.ncols() != self.cfg.feature_dim {
            return Err(Error::FeatureDimMismatch {
                expected: self.cfg.feature_dim,
                got: values.ncols(),
            });
        }
        Ok(())
    }

    /// Head outputs from an encoder output `h`: pre-sigmoid logits and the
    /// attention matrix where applicable.
    pub(crate) fn head_forward(
        &self,
        h: &Array2<F>,
        valid: usize,
    ) -> (Array1<F>, Option<Array2<F>>, HeadCache<F>) {
        let r = nn::cast::<F>(self.cfg.pooling_temperature);
        match self.cfg.architecture {
            Architecture::Psc => {
                let logits = nn::log_mean_exp(&h.view(), r, valid);
                let weights = nn::log_mean_exp_weights(&h.view(), r, valid);
                (logits, None, HeadCache::Psc { weights })
            }
            Architecture::CnnPool => {
                let (z, argmax) = nn::maxpool_over_time(&h.view(), valid);
                let w1 = self.mat(self.head_tensor("clf.l1.weight"));
                let b1 = self.vecv(self.head_tensor("clf.l1.bias"));
                let w2 = self.mat(self.head_tensor("clf.l2.weight"));
                let b2 = self.vecv(self.head_tensor("clf.l2.bias"));
                let mut a1 = w1.dot(&z) + b1;
                a1.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
                let logits = w2.dot(&a1) + b2;
                (logits, None, HeadCache::MaxPool { argmax, z, a1 })
            }
            Architecture::CnnAttend | Architecture::CnnPoolAttend => {
                let q = self.mat(self.head_tensor("attn.queries"));
                let scores = q.dot(h); // V x T'
                let attn = nn::softmax_rows(&scores.view(), valid);
                let context = attn.dot(&h.t()); // V x E
                let w1 = self.mat(self.head_tensor("clf.l1.weight"));
                let b1 = self.vecv(self.head_tensor("clf.l1.bias"));
                let w2 = self.mat(self.head_tensor("clf.l2.weight"));
                let b2 = self.vecv(self.head_tensor("clf.l2.bias"));
                let mut a1 = context.dot(&w1.t()); // V x hidden
                a1 += &b1.view().insert_axis(Axis(0));
                a1.mapv_inplace(|v| if v > F::zero() { v } else { F::zero() });
                let logits_col = a1.dot(&w2.row(0)); // V
                let logits = logits_col + b2[0];
                (
                    logits,
                    Some(attn.clone()),
                    HeadCache::Attention { attn, context, a1 },
                )
            }
        }
    }

    /// Recompute detection outputs from a (possibly perturbed) encoder
    /// output. Used by saliency methods and gradient checks.
    pub fn head_outputs(&self, h: &Array2<F>, valid: usize) -> (Array1<F>, Option<Array2<F>>) {
        let (logits, attn, _) = self.head_forward(h, valid);
        (logits.mapv(nn::sigmoid), attn)
    }

    /// Gradient of the post-sigmoid detection probability `y_hat[w]` with
    /// respect to every entry of the encoder output `h`.
    pub fn head_grad_wrt_h(&self, h: &Array2<F>, valid: usize, w: usize) -> Array2<F> {
        let (logits, _, cache) = self.head_forward(h, valid);
        let y = nn::sigmoid(logits[w]);
        let mut dlogits = Array1::zeros(logits.len());
        dlogits[w] = y * (F::one() - y);
        self.head_backward(h, valid, &cache, &dlogits.view(), None)
    }

    /// Backward through the head. Returns dL/dH and, when `grads` is given,
    /// accumulates parameter gradients.
    pub(crate) fn head_backward(
        &self,
        h: &Array2<F>,
        valid: usize,
        cache: &HeadCache<F>,
        dlogits: &ArrayView1<'_, F>,
        mut grads: Option<&mut GradBuffer<F>>,
    ) -> Array2<F> {
        let (e_dim, t_len) = h.dim();
        match cache {
            HeadCache::Psc { weights } => {
                let mut dh = Array2::zeros((e_dim, t_len));
                for v in 0..e_dim {
                    let g = dlogits[v];
                    for t in 0..valid {
                        dh[[v, t]] = g * weights[[v, t]];
                    }
                }
                dh
            }
            HeadCache::MaxPool { argmax, z, a1 } => {
                let w1_idx = self.head_tensor("clf.l1.weight");
                let w2_idx = self.head_tensor("clf.l2.weight");
                let w1 = self.mat(w1_idx);
                let w2 = self.mat(w2_idx);
                let mut da1 = w2.t().dot(dlogits);
                for (i, g) in da1.iter_mut().enumerate() {
                    if a1[i] <= F::zero() {
                        *g = F::zero();
                    }
                }
                if let Some(gb) = grads.as_deref_mut() {
                    let b1_idx = self.head_tensor("clf.l1.bias");
                    let b2_idx = self.head_tensor("clf.l2.bias");
                    accumulate_outer(gb, &self.layout, w2_idx, dlogits, &a1.view());
                    accumulate_vec(gb, &self.layout, b2_idx, dlogits);
                    accumulate_outer(gb, &self.layout, w1_idx, &da1.view(), &z.view());
                    accumulate_vec(gb, &self.layout, b1_idx, &da1.view());
                }
                let dz = w1.t().dot(&da1);
                let mut dh = Array2::zeros((e_dim, t_len));
                for c in 0..e_dim {
                    let t = argmax[c];
                    if t != usize::MAX {
                        dh[[c, t]] = dz[c];
                    }
                }
                dh
            }
            HeadCache::Attention { attn, context, a1 } => {
                let q_idx = self.head_tensor("attn.queries");
                let w1_idx = self.head_tensor("clf.l1.weight");
                let w2_idx = self.head_tensor("clf.l2.weight");
                let q = self.mat(q_idx);
                let w1 = self.mat(w1_idx);
                let w2 = self.mat(w2_idx);

                // Classifier backward (rows = keywords).
                let mut da1: Array2<F> =
                    dlogits.view().insert_axis(Axis(1)).dot(&w2.row(0).insert_axis(Axis(0)));
                for ((v, j), g) in da1.indexed_iter_mut() {
                    if a1[[v, j]] <= F::zero() {
                        *g = F::zero();
                    }
                }
                if let Some(gb) = grads.as_deref_mut() {
                    let b1_idx = self.head_tensor("clf.l1.bias");
                    let b2_idx = self.head_tensor("clf.l2.bias");
                    // g_w2 += dlogits^T . a1 (1 x hidden)
                    let gw2 = dlogits.view().insert_axis(Axis(0)).dot(a1);
                    accumulate_mat(gb, &self.layout, w2_idx, &gw2.view());
                    accumulate_scalar(gb, &self.layout, b2_idx, dlogits.sum());
                    let gw1 = da1.t().dot(context);
                    accumulate_mat(gb, &self.layout, w1_idx, &gw1.view());
                    let gb1 = da1.sum_axis(Axis(0));
                    accumulate_vec(gb, &self.layout, b1_idx, &gb1.view());
                }
                let dcontext = da1.dot(&w1); // V x E

                // Attention backward over the valid prefix.
                let h_valid = h.slice(s![.., ..valid]);
                let attn_valid = attn.slice(s![.., ..valid]);
                let da_raw = dcontext.dot(&h_valid); // V x valid
                // dE = A (x) (dA - rowsum(A (x) dA))
                let mut de = Array2::zeros(da_raw.dim());
                for v in 0..de.nrows() {
                    let mut dot = F::zero();
                    for t in 0..valid {
                        dot = dot + attn_valid[[v, t]] * da_raw[[v, t]];
                    }
                    for t in 0..valid {
                        de[[v, t]] = attn_valid[[v, t]] * (da_raw[[v, t]] - dot);
                    }
                }
                if let Some(gb) = grads.as_deref_mut() {
                    let gq = de.dot(&h_valid.t()); // V x E
                    accumulate_mat(gb, &self.layout, q_idx, &gq.view());
                }
                // dH = Q^T dE + dC^T A over valid columns.
                let mut dh = Array2::zeros((e_dim, t_len));
                let dh_part = q.t().dot(&de) + dcontext.t().dot(&attn_valid);
                dh.slice_mut(s![.., ..valid]).assign(&dh_part);
                dh
            }
        }
    }

    /// Full forward pass over a possibly padded feature matrix.
    pub fn forward_masked(
        &self,
        values: &ArrayView2<'_, f32>,
        valid: usize,
        frame_hop_s: f64,
    ) -> Result<ForwardTrace<F>> {
        let (trace, _) = self.forward_cached(values, valid, frame_hop_s)?;
        Ok(trace)
    }

    pub fn forward(&self, features: &FeatureSequence) -> Result<ForwardTrace<F>> {
        self.forward_masked(
            &features.values.view(),
            features.n_frames(),
            features.frame_hop_s,
        )
    }

    pub(crate) fn forward_cached(
        &self,
        values: &ArrayView2<'_, f32>,
        valid: usize,
        frame_hop_s: f64,
    ) -> Result<(ForwardTrace<F>, ForwardCache<F>)> {
        self.check_input(values, valid)?;
        let x = self.input_matrix(values);
        let (h, valid_h, enc) = self.encode_cached(x, valid);
        let (logits, attention, head) = self.head_forward(&h, valid_h);
        let y_hat = logits.mapv(nn::sigmoid);
        let trace = ForwardTrace {
            y_hat,
            h: h.clone(),
            attention,
            logits,
            architecture: self.cfg.architecture,
            downsample_factor: self.cfg.downsample_factor(),
            frame_hop_s,
            valid_cols: valid_h,
        };
        let cache = ForwardCache {
            enc,
            head,
            h,
            valid_h,
        };
        Ok((trace, cache))
    }

    /// Backward from detection-logit gradients, accumulating into `grads`.
    pub(crate) fn backward(
        &self,
        cache: &ForwardCache<F>,
        dlogits: &ArrayView1<'_, F>,
        grads: &mut GradBuffer<F>,
    ) {
        let mut dh = self.head_backward(
            &cache.h,
            cache.valid_h,
            &cache.head,
            dlogits,
            Some(grads),
        );
        // Encoder backward, last layer first. Gradients at padded columns
        // stay zero throughout: the head only writes valid columns, and the
        // ReLU mask over the (zeroed) cached outputs kills anything that
        // convolution taps smear across the boundary.
        for i in (0..self.enc_spec.len()).rev() {
            let spec = &self.enc_spec[i];
            let out = &cache.enc.outputs[i];
            if let Some(argmax) = &cache.enc.pool_argmax[i] {
                dh = nn::maxpool3_backward(&dh.view(), argmax, out.ncols());
            }
            // ReLU mask (identity for linear layers).
            if spec.relu {
                for ((c, t), g) in dh.indexed_iter_mut() {
                    if out[[c, t]] <= F::zero() {
                        *g = F::zero();
                    }
                }
            }
            let w_idx = 2 * i;
            let b_idx = 2 * i + 1;
            let w = self.mat(w_idx);
            let col = &cache.enc.cols[i];
            let (grad_w_range, grad_b_range) =
                (self.layout.range(w_idx), self.layout.range(b_idx));
            let spec_w = &self.layout.tensors[w_idx];
            // Split-borrow the grad buffer for the two parameter slices.
            let dx = {
                let (gw_slice, gb_slice) = split_two(&mut grads.data, grad_w_range, grad_b_range);
                let mut gw = ArrayViewMut2::from_shape((spec_w.rows, spec_w.cols), gw_slice)
                    .expect("grad shape");
                nn::conv1d_backward(
                    &col.view(),
                    &w,
                    &dh.view(),
                    spec.kernel,
                    spec.pad,
                    &mut gw,
                    gb_slice,
                )
            };
            dh = dx;
            if i == 0 {
                break;
            }
        }
    }
}

/// Borrow two disjoint ranges of a slice mutably.
fn split_two<T>(
    data: &mut [T],
    a: std::ops::Range<usize>,
    b: std::ops::Range<usize>,
) -> (&mut [T], &mut [T]) {
    assert!(a.end <= b.start);
    let (left, right) = data.split_at_mut(b.start);
    (&mut left[a], &mut right[..b.end - b.start])
}

fn accumulate_mat<F: NdFloat>(
    grads: &mut GradBuffer<F>,
    layout: &Layout,
    idx: usize,
    add: &ArrayView2<'_, F>,
) {
    let range = layout.range(idx);
    let slice = &mut grads.data[range];
    for (dst, src) in slice.iter_mut().zip(add.iter()) {
        *dst = *dst + *src;
    }
}

fn accumulate_outer<F: NdFloat>(
    grads: &mut GradBuffer<F>,
    layout: &Layout,
    idx: usize,
    rows: &ArrayView1<'_, F>,
    cols: &ArrayView1<'_, F>,
) {
    let range = layout.range(idx);
    let n_cols = cols.len();
    let slice = &mut grads.data[range];
    for (r, &rv) in rows.iter().enumerate() {
        if rv == F::zero() {
            continue;
        }
        for (c, &cv) in cols.iter().enumerate() {
            slice[r * n_cols + c] = slice[r * n_cols + c] + rv * cv;
        }
    }
}

fn accumulate_vec<F: NdFloat>(
    grads: &mut GradBuffer<F>,
    layout: &Layout,
    idx: usize,
    add: &ArrayView1<'_, F>,
) {
    let range = layout.range(idx);
    let slice = &mut grads.data[range];
    for (dst, src) in slice.iter_mut().zip(add.iter()) {
        *dst = *dst + *src;
    }
}

fn accumulate_scalar<F: NdFloat>(grads: &mut GradBuffer<F>, layout: &Layout, idx: usize, add: F) {
    let range = layout.range(idx);
    grads.data[range.start] = grads.data[range.start] + add;
}

/// Log-mean-exp pooling over time with max-subtraction for overflow
/// safety. The caller applies the sigmoid.
pub fn pool_log_mean_exp<F: NdFloat>(h: &ArrayView2<'_, F>, r: F) -> Array1<F> {
    assert!(r > F::zero(), "temperature r must be positive");
    assert!(h.ncols() >= 1, "T' must be >= 1");
    nn::log_mean_exp(h, r, h.ncols())
}

/// Softmaxed dot-product attention weights for one query over the frames
/// of `h` (`E x T'`): non-negative, summing to one.
pub fn attention_weights<F: NdFloat>(h: &ArrayView2<'_, F>, q: &ArrayView1<'_, F>) -> Array1<F> {
    assert_eq!(h.nrows(), q.len(), "query/embedding dimension mismatch");
    let scores = q.dot(h);
    let scores2 = scores.insert_axis(Axis(0));
    let sm = nn::softmax_rows(&scores2.view(), scores2.ncols());
    sm.row(0).to_owned()
}
