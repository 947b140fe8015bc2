//! Config-driven experiment runner: corpus in, trained checkpoint, score
//! dumps, evaluation report and plots out. Each stage failure is tagged
//! with the stage name (and record id where one applies), and a finished
//! output directory is self-describing: re-running evaluation from the
//! stored score dump reproduces the stored report byte for byte.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{
    load_manifest_with, CorpusManifest, LoadOptions, Split, Vocabulary,
};
use crate::error::{Error, Result, StageExt};
use crate::eval::{build_report, EvalConfig, EvalInputs, EvalReport, ScoreDumpLine};
use crate::localise::{
    locate_attention, locate_gradcam_from_trace, locate_masked_all, locate_score_agg,
    LocalisationScores, MaskConfig, MaskMode, Method,
};
use crate::model::checkpoint::Checkpoint;
use crate::model::{Model, ModelConfig};
use crate::report::{f1_chart, score_track_plot};
use crate::rng::fnv1a;
use crate::supervision::TargetKind;
use crate::toygen::{generate_toy_corpus, ToyConfig};
use crate::train::{load_features, train, warm_start, write_log, TrainConfig, WarmStartMode};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusSource {
    /// Generate a synthetic corpus under `<out_dir>/corpus`.
    Toy(ToyConfig),
    /// Load an existing manifest and vocabulary.
    Files {
        manifest: PathBuf,
        vocab: PathBuf,
        #[serde(default = "default_query_language")]
        query_language: String,
        #[serde(default = "default_tier")]
        textgrid_tier: String,
    },
}

fn default_query_language() -> String {
    "und".into()
}

fn default_tier() -> String {
    "words".into()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WarmStartSpec {
    /// Checkpoint base path (without the .bin/.json extension).
    pub checkpoint: PathBuf,
    pub mode: WarmStartMode,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub corpus: CorpusSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Localisation methods to run on the test split.
    pub methods: Vec<Method>,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub mask: MaskConfig,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub warm_start: Option<WarmStartSpec>,
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        let mut seen = BTreeSet::new();
        for m in &self.methods {
            if !m.supports(self.model.architecture) {
                return Err(Error::UnsupportedMethod {
                    arch: self.model.architecture.name().into(),
                    what: m.name().into(),
                });
            }
            seen.insert(*m);
        }
        if seen.len() != self.methods.len() {
            return Err(Error::Config("duplicate localisation methods".into()));
        }
        Ok(())
    }
}

pub struct RunArtifacts {
    pub out_dir: PathBuf,
    pub manifest: CorpusManifest,
    pub report: EvalReport,
    pub checkpoint_base: PathBuf,
    pub score_dump: PathBuf,
    pub report_json: PathBuf,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Load or generate the corpus named by the config.
pub fn prepare_corpus(cfg: &ExperimentConfig) -> Result<(CorpusManifest, String)> {
    match &cfg.corpus {
        CorpusSource::Toy(toy) => {
            let dir = cfg.out_dir.join("corpus");
            let manifest = generate_toy_corpus(toy, &dir)?;
            Ok((manifest, default_tier()))
        }
        CorpusSource::Files {
            manifest,
            vocab,
            query_language,
            textgrid_tier,
        } => {
            let vocabulary = Vocabulary::from_file(vocab, query_language.clone())?;
            let opts = LoadOptions {
                textgrid_tier: textgrid_tier.clone(),
                require_test_alignments: !cfg.methods.is_empty(),
            };
            let m = load_manifest_with(manifest, vocabulary, &opts)?;
            Ok((m, textgrid_tier.clone()))
        }
    }
}

/// Localisation score dump for one split of a corpus: every record x
/// keyword x method, ordered by record id, then keyword index, then method
/// name, so the dump is byte-deterministic.
pub fn dump_scores(
    model64: &Model<f64>,
    manifest: &CorpusManifest,
    split: Split,
    methods: &[Method],
    mask: &MaskConfig,
) -> Result<Vec<ScoreDumpLine>> {
    let mut records: Vec<_> = manifest.records_in(split).collect();
    records.sort_by(|a, b| a.id.cmp(&b.id));
    let vocab = &manifest.vocabulary;
    let mut methods: Vec<Method> = methods.to_vec();
    methods.sort();

    let mut lines = Vec::new();
    for record in records {
        let features = load_features(manifest, record)
            .map_err(|e| record_err(&record.id, e))?;
        let trace = model64
            .forward(&features)
            .map_err(|e| record_err(&record.id, e))?;
        for &method in &methods {
            let per_keyword: Vec<LocalisationScores> = match method {
                Method::Attention => (0..vocab.len())
                    .map(|w| locate_attention(&trace, w))
                    .collect::<Result<_>>(),
                Method::ScoreAgg => (0..vocab.len())
                    .map(|w| locate_score_agg(&trace, w))
                    .collect::<Result<_>>(),
                Method::GradCam => (0..vocab.len())
                    .map(|w| locate_gradcam_from_trace(model64, &trace, w))
                    .collect::<Result<_>>(),
                Method::MaskedIn => locate_masked_all(model64, &features, MaskMode::In, mask),
                Method::MaskedOut => locate_masked_all(model64, &features, MaskMode::Out, mask),
            }
            .map_err(|e| record_err(&record.id, e))?;
            for (w, loc) in per_keyword.into_iter().enumerate() {
                lines.push(ScoreDumpLine {
                    utt_id: record.id.clone(),
                    keyword: vocab.keyword(w).to_string(),
                    method: method.name().to_string(),
                    detection_score: loc.detection_score,
                    scores: loc.scores,
                    times_s: loc.times_s,
                });
            }
        }
    }
    Ok(lines)
}

fn record_err(id: &str, e: Error) -> Error {
    Error::BadRecord {
        id: id.to_string(),
        message: e.to_string(),
    }
}

pub fn write_score_dump(lines: &[ScoreDumpLine], path: &Path) -> Result<()> {
    let mut out = String::new();
    for line in lines {
        out.push_str(&serde_json::to_string(line).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?);
        out.push('\n');
    }
    write_text(path, &out)
}

pub fn read_score_dump(path: &Path) -> Result<Vec<ScoreDumpLine>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        if raw.trim().is_empty() {
            continue;
        }
        lines.push(serde_json::from_str(raw).map_err(|e| Error::ManifestParse {
            path: path.to_path_buf(),
            line: lineno + 1,
            message: e.to_string(),
        })?);
    }
    Ok(lines)
}

/// Serialise a report with a stable layout (used for the byte-identity
/// determinism contract).
pub fn report_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serialises") + "\n"
}

/// Emit the plot set: the per-keyword F1 chart plus one score-track plot
/// per method for the first test utterance that contains each of the first
/// two keywords with any occurrences.
fn emit_plots(
    dir: &Path,
    report: &EvalReport,
    manifest: &CorpusManifest,
    lines: &[ScoreDumpLine],
    tier: &str,
) -> Result<()> {
    write_text(&dir.join("f1_per_keyword.svg"), &f1_chart(report))?;

    let mut picked = 0usize;
    let mut seen_kw: BTreeSet<String> = BTreeSet::new();
    for line in lines {
        if picked >= 4 {
            break;
        }
        if seen_kw.contains(&line.keyword) {
            continue;
        }
        let Some(record) = manifest.by_id(&line.utt_id) else {
            continue;
        };
        if !record.transcript_contains(&line.keyword) {
            continue;
        }
        let Some(alignment) = manifest.alignment_of(record, tier)? else {
            continue;
        };
        let duration = line
            .times_s
            .last()
            .copied()
            .unwrap_or(0.0)
            .max(alignment.entries.iter().map(|e| e.end_s).fold(0.0, f64::max));
        let method: Method = line.method.parse()?;
        let scores = LocalisationScores {
            method,
            keyword: manifest.vocabulary.index_of(&line.keyword).unwrap_or(0),
            scores: line.scores.clone(),
            times_s: line.times_s.clone(),
            spans_s: None,
            detection_score: line.detection_score,
        };
        let title = format!(
            "{} scores for \"{}\" in {}",
            line.method, line.keyword, line.utt_id
        );
        let svg = score_track_plot(&title, &scores, &line.keyword, &alignment, duration);
        let name = format!("track_{}_{}_{}.svg", line.method, line.utt_id, line.keyword);
        write_text(&dir.join(name), &svg)?;
        seen_kw.insert(line.keyword.clone());
        picked += 1;
    }
    Ok(())
}

#[derive(Serialize)]
struct RunMeta<'a> {
    manifest_hash: String,
    vocab_hash: String,
    audio_language: &'a str,
    query_language: &'a str,
    n_records: usize,
}

/// Run the full pipeline described by a config.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunArtifacts> {
    cfg.validate().stage("config")?;
    fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(&cfg.out_dir, e))
        .stage("config")?;
    let snapshot = serde_json::to_string_pretty(cfg).expect("config serialises");
    write_text(&cfg.out_dir.join("config.json"), &(snapshot + "\n")).stage("config")?;

    let (manifest, tier) = prepare_corpus(cfg).stage("corpus")?;
    if !cfg.methods.is_empty() {
        manifest.ensure_test_alignments().stage("corpus")?;
    }
    if cfg.model.vocab_size != manifest.vocabulary.len() {
        return Err(Error::Config(format!(
            "model vocab_size {} != corpus vocabulary size {}",
            cfg.model.vocab_size,
            manifest.vocabulary.len()
        ))
        .stage("model"));
    }
    let meta = RunMeta {
        manifest_hash: format!("{:016x}", manifest.content_hash()),
        vocab_hash: format!("{:016x}", manifest.vocabulary.hash64()),
        audio_language: &manifest.audio_language,
        query_language: &manifest.query_language,
        n_records: manifest.records.len(),
    };
    write_text(
        &cfg.out_dir.join("run_meta.json"),
        &(serde_json::to_string_pretty(&meta).expect("meta serialises") + "\n"),
    )
    .stage("corpus")?;

    let mut model: Model<f32> = Model::new(&cfg.model).stage("model")?;
    if let Some(ws) = &cfg.warm_start {
        let ckpt = Checkpoint::load(&ws.checkpoint).stage("warm_start")?;
        warm_start(&mut model, &ckpt, ws.mode, manifest.vocabulary.hash64())
            .stage("warm_start")?;
    }

    let outcome = train(&mut model, &manifest, &cfg.train).stage("train")?;
    write_log(&outcome.log, &cfg.out_dir.join("train_log.jsonl")).stage("train")?;
    let checkpoint_base = cfg.out_dir.join("checkpoint");
    outcome.checkpoint.save(&checkpoint_base).stage("train")?;

    let model64: Model<f64> = model.cast();
    let lines = dump_scores(&model64, &manifest, Split::Test, &cfg.methods, &cfg.mask)
        .stage("localise")?;
    let score_dump = cfg.out_dir.join("scores.jsonl");
    write_score_dump(&lines, &score_dump).stage("localise")?;

    // Evaluate strictly from the dump file so stored artifacts and report
    // can never drift apart.
    let reread = read_score_dump(&score_dump).stage("evaluate")?;
    let inputs = EvalInputs::from_dumps(&manifest, Split::Test, &reread, &tier)
        .stage("evaluate")?;
    let report = build_report(&inputs, cfg.eval.theta).stage("evaluate")?;
    let report_path = cfg.out_dir.join("report.json");
    write_text(&report_path, &report_json(&report)).stage("evaluate")?;
    write_text(
        &cfg.out_dir.join("report.csv"),
        &crate::eval::report_to_csv(&report),
    )
    .stage("evaluate")?;

    emit_plots(&cfg.out_dir.join("plots"), &report, &manifest, &reread, &tier)
        .stage("report")?;

    Ok(RunArtifacts {
        out_dir: cfg.out_dir.clone(),
        manifest,
        report,
        checkpoint_base,
        score_dump,
        report_json: report_path,
    })
}

/// Convenience used by tests and the CLI: a toy config with everything
/// wired for the given supervision kind.
pub fn toy_experiment(
    toy: ToyConfig,
    model: ModelConfig,
    train: TrainConfig,
    methods: Vec<Method>,
    out_dir: PathBuf,
) -> ExperimentConfig {
    ExperimentConfig {
        corpus: CorpusSource::Toy(toy),
        model,
        train,
        methods,
        eval: EvalConfig::default(),
        mask: MaskConfig::default(),
        out_dir,
        warm_start: None,
    }
}

/// Hash of a file's bytes, hex-encoded; handy for determinism checks.
pub fn file_hash(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:016x}", fnv1a(&bytes)))
}

/// The supervision kind actually used, surfaced for reporting.
pub fn supervision_of(cfg: &ExperimentConfig) -> TargetKind {
    cfg.train.supervision
}
