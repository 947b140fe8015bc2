//! Deterministic synthetic corpus generator.
//!
//! Each keyword gets a fixed spectral template (a distinct set of active
//! feature bins); an utterance is a concatenation of word blocks perturbed
//! by i.i.d. noise, with optional short silence gaps. Exact word boundaries
//! are recorded as alignments and a simulated tagger emits soft visual
//! labels, so every downstream stage has a ground-truth oracle at desk
//! scale.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_manifest, AlignedWord, AlignmentSet, AlignmentSource, CorpusManifest, Split,
    UtteranceRecord, UtteranceSource, Vocabulary,
};
use crate::error::{Error, Result};
use crate::features::FeatureSequence;
use crate::rng::Stream;
use crate::supervision::{SupervisionTarget, TargetKind};

pub const TOY_HOP_S: f64 = 0.010;
pub const TOY_WINDOW_S: f64 = 0.025;

/// Simulated visual tagger parameters: present keywords score near
/// `hit_mean`, absent ones stay near zero except for spurious tags emitted
/// at `false_alarm_rate`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct TaggerNoise {
    pub hit_mean: f64,
    pub false_alarm_rate: f64,
}

impl TaggerNoise {
    /// A degenerate (perfect) tagger reproduces bag-of-words targets.
    pub fn none() -> Self {
        TaggerNoise {
            hit_mean: 1.0,
            false_alarm_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub vocab_size: usize,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    /// Inclusive range of distinct words per utterance.
    pub words_per_utt: (usize, usize),
    /// Inclusive range of word durations, in frames.
    pub word_dur_frames: (usize, usize),
    pub feature_dim: usize,
    /// Probability of a silence gap before the first and after each word.
    pub silence_prob: f64,
    /// Inclusive silence gap length range, in frames.
    pub silence_frames: (usize, usize),
    pub tagger_noise: TaggerNoise,
    pub seed: u64,
    pub language_tag: String,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            vocab_size: 12,
            n_train: 400,
            n_dev: 100,
            n_test: 100,
            words_per_utt: (3, 6),
            word_dur_frames: (10, 20),
            feature_dim: 20,
            silence_prob: 0.3,
            silence_frames: (1, 6),
            tagger_noise: TaggerNoise {
                hit_mean: 0.9,
                false_alarm_rate: 0.05,
            },
            seed: 7,
            language_tag: "toy".into(),
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.vocab_size == 0 {
            return bad("vocab_size must be >= 1");
        }
        if self.words_per_utt.0 > self.words_per_utt.1 || self.words_per_utt.0 == 0 {
            return bad("words_per_utt range is empty");
        }
        if self.words_per_utt.1 > self.vocab_size {
            return bad("words_per_utt.max exceeds vocab_size (words are sampled without replacement)");
        }
        if self.word_dur_frames.0 > self.word_dur_frames.1 || self.word_dur_frames.0 == 0 {
            return bad("word_dur_frames range is empty");
        }
        if self.feature_dim < 4 {
            return bad("feature_dim must be >= 4");
        }
        if self.silence_frames.0 > self.silence_frames.1 || self.silence_frames.0 == 0 {
            return bad("silence_frames range is empty");
        }
        if !(0.0..=1.0).contains(&self.silence_prob) {
            return bad("silence_prob must be in [0, 1]");
        }
        if !(0.0 < self.tagger_noise.hit_mean && self.tagger_noise.hit_mean <= 1.0) {
            return bad("hit_mean must be in (0, 1]");
        }
        if !(0.0..1.0).contains(&self.tagger_noise.false_alarm_rate) {
            return bad("false_alarm_rate must be in [0, 1)");
        }
        Ok(())
    }

    pub fn vocabulary(&self) -> Vocabulary {
        let words = (0..self.vocab_size).map(|i| format!("kw{i:02}")).collect();
        Vocabulary::new(words, self.language_tag.clone()).expect("generated keywords are unique")
    }
}

/// Fixed per-keyword spectral templates. A template is a background pattern
/// with a few strongly active bins; active-bin sets are distinct across
/// keywords so clean word blocks are linearly separable.
#[derive(Clone, Debug)]
pub struct TemplateBank {
    templates: Vec<Vec<f32>>,
    active: Vec<Vec<usize>>,
}

impl TemplateBank {
    pub fn generate(cfg: &ToyConfig, rng: &Stream) -> Self {
        let mut rng = rng.derive("templates", 0);
        let n_active = 3.min(cfg.feature_dim);
        // Disjoint active bins whenever the feature dimension allows it;
        // otherwise fall back to distinct (possibly overlapping) sets.
        let disjoint = cfg.feature_dim >= n_active * cfg.vocab_size;
        let mut pool: Vec<usize> = (0..cfg.feature_dim).collect();
        rng.shuffle(&mut pool);
        let mut active_sets: Vec<Vec<usize>> = Vec::new();
        let mut templates = Vec::new();
        for w in 0..cfg.vocab_size {
            let bins = if disjoint {
                let mut bins = pool[w * n_active..(w + 1) * n_active].to_vec();
                bins.sort_unstable();
                bins
            } else {
                loop {
                    let mut bins = rng.sample_distinct(cfg.feature_dim, n_active);
                    bins.sort_unstable();
                    if !active_sets.contains(&bins) {
                        break bins;
                    }
                }
            };
            let mut tpl: Vec<f32> = (0..cfg.feature_dim)
                .map(|_| (0.25 * rng.normal()) as f32)
                .collect();
            for &b in &bins {
                tpl[b] += rng.uniform(2.5, 3.5) as f32;
            }
            active_sets.push(bins);
            templates.push(tpl);
        }
        TemplateBank {
            templates,
            active: active_sets,
        }
    }

    /// Derive a bank for a related corpus: each keyword keeps its template
    /// with probability `keep_fraction` and gets a fresh one otherwise.
    /// Used for transfer experiments between toy "languages".
    pub fn related(&self, cfg: &ToyConfig, keep_fraction: f64, rng: &Stream) -> Self {
        let fresh = TemplateBank::generate(cfg, &rng.derive("related-bank", 1));
        let mut pick = rng.derive("related-keep", 0);
        let mut templates = Vec::with_capacity(self.templates.len());
        let mut active = Vec::with_capacity(self.templates.len());
        for w in 0..self.templates.len() {
            if pick.bernoulli(keep_fraction) {
                templates.push(self.templates[w].clone());
                active.push(self.active[w].clone());
            } else {
                templates.push(fresh.templates[w].clone());
                active.push(fresh.active[w].clone());
            }
        }
        TemplateBank { templates, active }
    }

    pub fn template(&self, word: usize) -> &[f32] {
        &self.templates[word]
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

/// Simulate the visual tagger for one utterance.
///
/// Present keywords draw near `hit_mean` (exactly `hit_mean` when it is 1);
/// absent keywords emit a spurious high tag with probability
/// `false_alarm_rate` and a near-zero value otherwise. With
/// `TaggerNoise::none()` the output equals the bag-of-words target.
pub fn synth_visual_tags(
    present: &[String],
    vocab: &Vocabulary,
    noise: &TaggerNoise,
    rng: &mut Stream,
) -> Result<SupervisionTarget> {
    let mut is_present = vec![false; vocab.len()];
    for word in present {
        let idx = vocab
            .index_of(word)
            .ok_or_else(|| Error::UnknownKeyword { word: word.clone() })?;
        is_present[idx] = true;
    }
    let spread = 0.5 * (1.0 - noise.hit_mean);
    let floor_scale = 0.25 * (1.0 - noise.hit_mean);
    let mut probs = Vec::with_capacity(vocab.len());
    for present in is_present {
        let p = if present || rng.bernoulli(noise.false_alarm_rate) {
            (noise.hit_mean + spread * rng.normal()).clamp(0.0, 1.0)
        } else {
            (floor_scale * rng.normal().abs()).clamp(0.0, 1.0)
        };
        probs.push(p as f32);
    }
    Ok(SupervisionTarget {
        probs,
        kind: TargetKind::Visual,
    })
}

struct GeneratedUtterance {
    features: FeatureSequence,
    words: Vec<String>,
    alignment: AlignmentSet,
}

fn generate_utterance(
    cfg: &ToyConfig,
    bank: &TemplateBank,
    vocab: &Vocabulary,
    rng: &mut Stream,
) -> GeneratedUtterance {
    let n_words = rng.int_in(cfg.words_per_utt.0, cfg.words_per_utt.1);
    let word_ids = rng.sample_distinct(cfg.vocab_size, n_words);

    let mut rows: Vec<Vec<f32>> = Vec::new();
    let mut words = Vec::new();
    let mut entries = Vec::new();

    let push_silence = |rows: &mut Vec<Vec<f32>>, rng: &mut Stream| {
        if rng.bernoulli(cfg.silence_prob) {
            let len = rng.int_in(cfg.silence_frames.0, cfg.silence_frames.1);
            for _ in 0..len {
                rows.push(
                    (0..cfg.feature_dim)
                        .map(|_| (0.05 * rng.normal()) as f32)
                        .collect(),
                );
            }
        }
    };

    push_silence(&mut rows, rng);
    for &w in &word_ids {
        let dur = rng.int_in(cfg.word_dur_frames.0, cfg.word_dur_frames.1);
        let start = rows.len();
        let tpl = bank.template(w);
        for _ in 0..dur {
            rows.push(
                tpl.iter()
                    .map(|&v| v + (0.1 * rng.normal()) as f32)
                    .collect(),
            );
        }
        let end = rows.len();
        let word = vocab.keyword(w).to_string();
        entries.push(AlignedWord {
            word: word.clone(),
            start_s: start as f64 * TOY_HOP_S,
            end_s: end as f64 * TOY_HOP_S,
        });
        words.push(word);
        push_silence(&mut rows, rng);
    }

    let t = rows.len();
    let flat: Vec<f32> = rows.into_iter().flatten().collect();
    let values = Array2::from_shape_vec((t, cfg.feature_dim), flat).expect("row shape");
    GeneratedUtterance {
        features: FeatureSequence::new(values, TOY_HOP_S, TOY_WINDOW_S)
            .expect("generated features are valid"),
        words,
        alignment: AlignmentSet::new(entries).expect("generated alignment is ordered"),
    }
}

/// Generate a toy corpus under `out_dir` using a freshly generated template
/// bank. Writes feature files, visual-tag files, `vocab.txt` and
/// `manifest.jsonl`, then reloads the manifest through the standard loader.
pub fn generate_toy_corpus(cfg: &ToyConfig, out_dir: &Path) -> Result<CorpusManifest> {
    cfg.validate()?;
    let rng = Stream::new(cfg.seed);
    let bank = TemplateBank::generate(cfg, &rng);
    generate_toy_corpus_with_bank(cfg, &bank, out_dir)
}

/// As [`generate_toy_corpus`] but with an explicit template bank, so a pair
/// of corpora can share (or partially share) word acoustics.
pub fn generate_toy_corpus_with_bank(
    cfg: &ToyConfig,
    bank: &TemplateBank,
    out_dir: &Path,
) -> Result<CorpusManifest> {
    cfg.validate()?;
    if bank.len() != cfg.vocab_size {
        return Err(Error::Config(format!(
            "template bank has {} entries for vocab_size {}",
            bank.len(),
            cfg.vocab_size
        )));
    }
    let vocab = cfg.vocabulary();
    let rng = Stream::new(cfg.seed);

    let feat_dir = out_dir.join("features");
    let tag_dir = out_dir.join("tags");
    fs::create_dir_all(&feat_dir).map_err(|e| Error::io(&feat_dir, e))?;
    fs::create_dir_all(&tag_dir).map_err(|e| Error::io(&tag_dir, e))?;

    let splits = [
        (Split::Train, cfg.n_train),
        (Split::Dev, cfg.n_dev),
        (Split::Test, cfg.n_test),
    ];
    let mut records = Vec::new();
    for (split, count) in splits {
        for i in 0..count {
            let id = format!("{}_{i:05}", split.name());
            let mut utt_rng = rng.derive(&id, 0);
            let utt = generate_utterance(cfg, bank, &vocab, &mut utt_rng);

            let feat_rel = PathBuf::from("features").join(format!("{id}.vgsf"));
            utt.features.save(&out_dir.join(&feat_rel))?;

            let mut tag_rng = rng.derive(&id, 1);
            let tags = synth_visual_tags(&utt.words, &vocab, &cfg.tagger_noise, &mut tag_rng)?;
            let tag_rel = PathBuf::from("tags").join(format!("{id}.json"));
            write_tag_file(&out_dir.join(&tag_rel), &vocab, &tags)?;

            records.push(UtteranceRecord {
                id,
                source: UtteranceSource::Features(feat_rel),
                transcript: Some(utt.words),
                language_tag: cfg.language_tag.clone(),
                split,
                alignment: Some(AlignmentSource::Inline(utt.alignment)),
                visual_tags: Some(tag_rel),
            });
        }
    }

    let vocab_path = out_dir.join("vocab.txt");
    vocab.to_file(&vocab_path)?;
    let manifest_path = out_dir.join("manifest.jsonl");
    let manifest =
        CorpusManifest::from_parts(records, vocab.clone(), cfg.language_tag.clone(), out_dir);
    manifest.save(&manifest_path)?;
    // Reload through the standard path so invariants are revalidated.
    load_manifest(&manifest_path, vocab)
}

/// Tag files are JSON objects in vocabulary order with only nonzero entries
/// kept compact; zero entries are written too so the file round-trips to the
/// exact target vector.
fn write_tag_file(path: &Path, vocab: &Vocabulary, tags: &SupervisionTarget) -> Result<()> {
    let mut map = serde_json::Map::new();
    for (i, kw) in vocab.keywords().iter().enumerate() {
        map.insert(
            kw.clone(),
            serde_json::Value::from(tags.probs[i] as f64),
        );
    }
    let text = serde_json::to_string(&serde_json::Value::Object(map)).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Expected fraction of an utterance covered by each present keyword,
/// counted exhaustively frame by frame from the generated alignments. This
/// is the random-localisation baseline: the chance a uniformly drawn time
/// point lands inside the keyword.
pub fn alignment_coverage_baseline(manifest: &CorpusManifest, split: Split) -> Result<f64> {
    let mut total = 0.0f64;
    let mut pairs = 0usize;
    for record in manifest.records_in(split) {
        let Some(alignment) = manifest.alignment_of(record, "words")? else {
            continue;
        };
        let Some(transcript) = &record.transcript else {
            continue;
        };
        let duration = alignment
            .entries
            .iter()
            .map(|e| e.end_s)
            .fold(0.0f64, f64::max)
            .max(feature_duration(manifest, record).unwrap_or(0.0));
        if duration <= 0.0 {
            continue;
        }
        let mut seen: Vec<&String> = Vec::new();
        for word in transcript {
            if seen.contains(&word) {
                continue;
            }
            seen.push(word);
            if manifest.vocabulary.index_of(word).is_none() {
                continue;
            }
            let covered: f64 = alignment
                .occurrences_of(word)
                .iter()
                .map(|&(s, e)| e - s)
                .sum();
            total += covered / duration;
            pairs += 1;
        }
    }
    if pairs == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(total / pairs as f64)
}

fn feature_duration(manifest: &CorpusManifest, record: &UtteranceRecord) -> Option<f64> {
    match &record.source {
        UtteranceSource::Features(p) => FeatureSequence::load(&manifest.resolve(p))
            .ok()
            .map(|f| f.duration_s()),
        UtteranceSource::Audio(_) => None,
    }
}
