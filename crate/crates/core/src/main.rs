//! Experiment runner CLI: generate corpora, featurize audio, train,
//! localise, evaluate, and report, each stage also runnable standalone on
//! dumped intermediates.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use vgsloc::corpus::{load_manifest_with, CorpusManifest, LoadOptions, Split, UtteranceSource, Vocabulary};
use vgsloc::error::{Error, Result, StageExt};
use vgsloc::eval::{build_report, cooccurrence_matrix, report_to_csv, EvalInputs};
use vgsloc::exp::{
    dump_scores, read_score_dump, report_json, run_experiment, write_score_dump,
    ExperimentConfig, WarmStartSpec,
};
use vgsloc::features::{compute_mfcc, read_wav, MfccConfig};
use vgsloc::localise::{MaskConfig, Method};
use vgsloc::model::checkpoint::Checkpoint;
use vgsloc::model::Model;
use vgsloc::report::f1_chart;
use vgsloc::toygen::{generate_toy_corpus, ToyConfig};
use vgsloc::train::{train, warm_start, write_log, WarmStartMode};

#[derive(Parser)]
#[command(
    name = "vgsloc",
    version,
    about = "Visually grounded speech models for keyword detection, spotting and localisation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a deterministic synthetic corpus from a toy config.
    Toygen {
        /// JSON file holding the toy corpus configuration.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Convert a waveform manifest into a feature-file manifest.
    Featurize {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "und")]
        query_language: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model from an experiment config (no localisation or
    /// evaluation stages).
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Checkpoint base path, optionally suffixed ":all" or
        /// ":encoder_only" (default all).
        #[arg(long)]
        warm_start: Option<String>,
    },
    /// Produce localisation score dumps from a trained checkpoint.
    Localise {
        /// Checkpoint base path (without .bin/.json).
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "und")]
        query_language: String,
        /// Comma-separated methods: gradcam, score_agg, attention,
        /// masked_in, masked_out.
        #[arg(long, value_delimiter = ',')]
        methods: Vec<String>,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "words")]
        tier: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a score dump against corpus ground truth.
    Evaluate {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        #[arg(long, default_value = "und")]
        query_language: String,
        #[arg(long, default_value_t = 0.5)]
        theta: f64,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long, default_value = "words")]
        tier: String,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Keyword co-occurrence between two languages as normalised Cohen
    /// kappa over shared sample ids.
    Kappa {
        #[arg(long)]
        manifest_a: PathBuf,
        #[arg(long)]
        vocab_a: PathBuf,
        #[arg(long, default_value = "a")]
        language_a: String,
        #[arg(long)]
        manifest_b: PathBuf,
        #[arg(long)]
        vocab_b: PathBuf,
        #[arg(long, default_value = "b")]
        language_b: String,
        #[arg(long, default_value = "test")]
        split: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Regenerate the CSV and the F1 chart from a stored report.
    Report {
        #[arg(long)]
        report: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run the full pipeline from an experiment config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Override toy-corpus, model and training seeds at once.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        theta: Option<f64>,
        #[arg(long, value_delimiter = ',')]
        methods: Option<Vec<String>>,
        #[arg(long)]
        warm_start: Option<String>,
    },
}

fn parse_split(s: &str) -> Result<Split> {
    match s {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "test" => Ok(Split::Test),
        other => Err(Error::Config(format!("unknown split {other:?}"))),
    }
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>> {
    names.iter().map(|n| n.parse()).collect()
}

fn parse_warm_start(spec: &str) -> Result<WarmStartSpec> {
    let (path, mode) = match spec.rsplit_once(':') {
        Some((p, m)) if !p.is_empty() && (m == "all" || m == "encoder_only" || m == "encoder-only") => {
            (p, m.parse::<WarmStartMode>()?)
        }
        _ => (spec, WarmStartMode::All),
    };
    Ok(WarmStartSpec {
        checkpoint: PathBuf::from(path),
        mode,
    })
}

fn apply_overrides(
    cfg: &mut ExperimentConfig,
    seed: Option<u64>,
    out: Option<PathBuf>,
    theta: Option<f64>,
    methods: Option<Vec<String>>,
    warm: Option<String>,
) -> Result<()> {
    if let Some(seed) = seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
        if let vgsloc::exp::CorpusSource::Toy(toy) = &mut cfg.corpus {
            toy.seed = seed;
        }
    }
    if let Some(out) = out {
        cfg.out_dir = out;
    }
    if let Some(theta) = theta {
        cfg.eval.theta = theta;
    }
    if let Some(methods) = methods {
        cfg.methods = parse_methods(&methods)?;
    }
    if let Some(warm) = warm {
        cfg.warm_start = Some(parse_warm_start(&warm)?);
    }
    Ok(())
}

fn load_corpus(
    manifest: &Path,
    vocab: &Path,
    query_language: &str,
    tier: &str,
    require_alignments: bool,
) -> Result<CorpusManifest> {
    let vocabulary = Vocabulary::from_file(vocab, query_language)?;
    let opts = LoadOptions {
        textgrid_tier: tier.into(),
        require_test_alignments: require_alignments,
    };
    load_manifest_with(manifest, vocabulary, &opts)
}

fn cmd_toygen(config: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let text = std::fs::read_to_string(config).map_err(|e| Error::io(config, e))?;
    let mut toy: ToyConfig = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: config.to_path_buf(),
        source: e,
    })?;
    if let Some(seed) = seed {
        toy.seed = seed;
    }
    let manifest = generate_toy_corpus(&toy, out).stage("toygen")?;
    println!(
        "wrote {} records ({} keywords) under {}",
        manifest.records.len(),
        manifest.vocabulary.len(),
        out.display()
    );
    Ok(())
}

fn cmd_featurize(manifest: &Path, vocab: &Path, query_language: &str, out: &Path) -> Result<()> {
    let corpus = load_corpus(manifest, vocab, query_language, "words", false).stage("corpus")?;
    std::fs::create_dir_all(out.join("features"))
        .map_err(|e| Error::io(out, e))
        .stage("featurize")?;
    let mfcc_cfg = MfccConfig::default();
    let mut records = corpus.records.clone();
    let mut n_converted = 0usize;
    for record in records.iter_mut() {
        if let UtteranceSource::Audio(p) = &record.source {
            let wav_path = corpus.resolve(p);
            let per_record = |e: Error| Error::BadRecord {
                id: record.id.clone(),
                message: e.to_string(),
            };
            let (samples, rate) = read_wav(&wav_path).map_err(per_record).stage("featurize")?;
            let features = compute_mfcc(&samples, rate, &mfcc_cfg)
                .map_err(|e| Error::BadRecord {
                    id: record.id.clone(),
                    message: e.to_string(),
                })
                .stage("featurize")?;
            let rel = PathBuf::from("features").join(format!("{}.vgsf", record.id));
            features.save(&out.join(&rel)).stage("featurize")?;
            record.source = UtteranceSource::Features(rel);
            n_converted += 1;
        }
    }
    let out_manifest = CorpusManifest::from_parts(
        records,
        corpus.vocabulary.clone(),
        corpus.audio_language.clone(),
        out,
    );
    out_manifest
        .save(&out.join("manifest.jsonl"))
        .stage("featurize")?;
    corpus
        .vocabulary
        .to_file(&out.join("vocab.txt"))
        .stage("featurize")?;
    println!("featurized {n_converted} audio records into {}", out.display());
    Ok(())
}

fn cmd_train(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    warm: Option<String>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    apply_overrides(&mut cfg, seed, out, None, None, warm)?;
    cfg.validate().stage("config")?;
    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let (manifest, _) = vgsloc::exp::prepare_corpus(&cfg).stage("corpus")?;
    let mut model: Model<f32> = Model::new(&cfg.model).stage("model")?;
    if let Some(ws) = &cfg.warm_start {
        let ckpt = Checkpoint::load(&ws.checkpoint).stage("warm_start")?;
        warm_start(&mut model, &ckpt, ws.mode, manifest.vocabulary.hash64())
            .stage("warm_start")?;
    }
    let outcome = train(&mut model, &manifest, &cfg.train).stage("train")?;
    write_log(&outcome.log, &cfg.out_dir.join("train_log.jsonl")).stage("train")?;
    outcome
        .checkpoint
        .save(&cfg.out_dir.join("checkpoint"))
        .stage("train")?;
    println!(
        "best epoch {} (dev F1 {:.4}); checkpoint under {}",
        outcome.best_epoch,
        outcome.best_dev_f1,
        cfg.out_dir.display()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_localise(
    checkpoint: &Path,
    manifest: &Path,
    vocab: &Path,
    query_language: &str,
    methods: &[String],
    split: &str,
    tier: &str,
    out: &Path,
) -> Result<()> {
    let corpus =
        load_corpus(manifest, vocab, query_language, tier, split == "test").stage("corpus")?;
    let ckpt = Checkpoint::load(checkpoint).stage("localise")?;
    let model = ckpt.to_model().stage("localise")?;
    if model.cfg.vocab_size != corpus.vocabulary.len() {
        return Err(Error::Config(format!(
            "checkpoint vocab_size {} != corpus vocabulary size {}",
            model.cfg.vocab_size,
            corpus.vocabulary.len()
        ))
        .stage("localise"));
    }
    let methods = parse_methods(methods)?;
    let model64: Model<f64> = model.cast();
    let lines = dump_scores(
        &model64,
        &corpus,
        parse_split(split)?,
        &methods,
        &MaskConfig::default(),
    )
    .stage("localise")?;
    write_score_dump(&lines, out).stage("localise")?;
    println!("wrote {} score lines to {}", lines.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_evaluate(
    scores: &Path,
    manifest: &Path,
    vocab: &Path,
    query_language: &str,
    theta: f64,
    split: &str,
    tier: &str,
    out_dir: &Path,
) -> Result<()> {
    let corpus = load_corpus(manifest, vocab, query_language, tier, false).stage("corpus")?;
    let lines = read_score_dump(scores).stage("evaluate")?;
    let inputs =
        EvalInputs::from_dumps(&corpus, parse_split(split)?, &lines, tier).stage("evaluate")?;
    let report = build_report(&inputs, theta).stage("evaluate")?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("report.json"), report_json(&report))
        .map_err(|e| Error::io(out_dir, e))
        .stage("evaluate")?;
    std::fs::write(out_dir.join("report.csv"), report_to_csv(&report))
        .map_err(|e| Error::io(out_dir, e))
        .stage("evaluate")?;
    let f1 = report
        .detection
        .macro_f1
        .mean
        .map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "undefined".into());
    println!(
        "evaluated {} utterances; detection macro F1 {f1}",
        report.n_utterances
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_kappa(
    manifest_a: &Path,
    vocab_a: &Path,
    language_a: &str,
    manifest_b: &Path,
    vocab_b: &Path,
    language_b: &str,
    split: &str,
    out: &Path,
) -> Result<()> {
    let a = load_corpus(manifest_a, vocab_a, language_a, "words", false).stage("kappa")?;
    let b = load_corpus(manifest_b, vocab_b, language_b, "words", false).stage("kappa")?;
    let split = parse_split(split)?;
    let (ids_a, table_a) = a.presence_table(split);
    let (ids_b, table_b) = b.presence_table(split);
    let matrix = cooccurrence_matrix(
        &ids_a,
        &table_a,
        a.vocabulary.keywords(),
        &ids_b,
        &table_b,
        b.vocabulary.keywords(),
    )
    .stage("kappa")?;
    if let Some(parent) = out.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let json = serde_json::to_string_pretty(&matrix).expect("matrix serialises") + "\n";
    std::fs::write(out, json)
        .map_err(|e| Error::io(out, e))
        .stage("kappa")?;
    let mut csv = String::from("row_keyword,col_keyword,kappa_norm\n");
    for (i, row) in matrix.values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let cell = v.map(|x| x.to_string()).unwrap_or_default();
            csv.push_str(&format!(
                "{},{},{cell}\n",
                matrix.row_keywords[i], matrix.col_keywords[j]
            ));
        }
    }
    std::fs::write(out.with_extension("csv"), csv)
        .map_err(|e| Error::io(out, e))
        .stage("kappa")?;
    if let Some((diag, off)) = matrix.diagonal_statistic() {
        println!("kappa_norm diagonal mean {diag:.4}, off-diagonal mean {off:.4}");
    } else {
        println!(
            "kappa matrix written ({} x {})",
            matrix.row_keywords.len(),
            matrix.col_keywords.len()
        );
    }
    Ok(())
}

fn cmd_report(report: &Path, out_dir: &Path) -> Result<()> {
    let text = std::fs::read_to_string(report).map_err(|e| Error::io(report, e))?;
    let parsed: vgsloc::eval::EvalReport =
        serde_json::from_str(&text).map_err(|e| Error::Json {
            path: report.to_path_buf(),
            source: e,
        })?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    std::fs::write(out_dir.join("report.csv"), report_to_csv(&parsed))
        .map_err(|e| Error::io(out_dir, e))
        .stage("report")?;
    std::fs::write(out_dir.join("f1_per_keyword.svg"), f1_chart(&parsed))
        .map_err(|e| Error::io(out_dir, e))
        .stage("report")?;
    println!(
        "wrote report.csv and f1_per_keyword.svg to {}",
        out_dir.display()
    );
    Ok(())
}

fn cmd_run(
    config: &Path,
    seed: Option<u64>,
    out: Option<PathBuf>,
    theta: Option<f64>,
    methods: Option<Vec<String>>,
    warm: Option<String>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    apply_overrides(&mut cfg, seed, out, theta, methods, warm)?;
    let artifacts = run_experiment(&cfg)?;
    let f1 = artifacts
        .report
        .detection
        .macro_f1
        .mean
        .map(|v| format!("{v:.4}"))
        .unwrap_or_else(|| "undefined".into());
    println!(
        "run complete: detection macro F1 {f1}; outputs under {}",
        artifacts.out_dir.display()
    );
    for (method, loc) in &artifacts.report.localisation {
        let acc = loc
            .oracle_pooled
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "undefined".into());
        println!("  {method}: oracle localisation accuracy {acc}");
    }
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Toygen { config, out, seed } => cmd_toygen(&config, &out, seed),
        Command::Featurize {
            manifest,
            vocab,
            query_language,
            out,
        } => cmd_featurize(&manifest, &vocab, &query_language, &out),
        Command::Train {
            config,
            seed,
            out,
            warm_start,
        } => cmd_train(&config, seed, out, warm_start),
        Command::Localise {
            checkpoint,
            manifest,
            vocab,
            query_language,
            methods,
            split,
            tier,
            out,
        } => cmd_localise(
            &checkpoint,
            &manifest,
            &vocab,
            &query_language,
            &methods,
            &split,
            &tier,
            &out,
        ),
        Command::Evaluate {
            scores,
            manifest,
            vocab,
            query_language,
            theta,
            split,
            tier,
            out_dir,
        } => cmd_evaluate(
            &scores,
            &manifest,
            &vocab,
            &query_language,
            theta,
            &split,
            &tier,
            &out_dir,
        ),
        Command::Kappa {
            manifest_a,
            vocab_a,
            language_a,
            manifest_b,
            vocab_b,
            language_b,
            split,
            out,
        } => cmd_kappa(
            &manifest_a,
            &vocab_a,
            &language_a,
            &manifest_b,
            &vocab_b,
            &language_b,
            &split,
            &out,
        ),
        Command::Report { report, out_dir } => cmd_report(&report, &out_dir),
        Command::Run {
            config,
            seed,
            out,
            theta,
            methods,
            warm_start,
        } => cmd_run(&config, seed, out, theta, methods, warm_start),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
