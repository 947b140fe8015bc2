//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    ManifestParse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("duplicate utterance id {id:?}")]
    DuplicateId { id: String },

    #[error("utterance {id:?}: {message}")]
    BadRecord { id: String, message: String },

    #[error("test record {id:?} has no alignment, required for localisation evaluation")]
    MissingAlignment { id: String },

    #[error("duplicate keyword {word:?} (keywords are compared case-folded)")]
    DuplicateKeyword { word: String },

    #[error("vocabulary must contain at least one keyword")]
    EmptyVocabulary,

    #[error("keyword {word:?} is not in the vocabulary")]
    UnknownKeyword { word: String },

    #[error("{path}: {message}")]
    TextGrid { path: PathBuf, message: String },

    #[error("{path}: tier {name:?} not found")]
    MissingTier { path: PathBuf, name: String },

    #[error("{path}: tier {name:?} is not an IntervalTier")]
    NotIntervalTier { path: PathBuf, name: String },

    #[error("{path}: interval {index} has xmin {xmin} >= xmax {xmax}")]
    BadInterval {
        path: PathBuf,
        index: usize,
        xmin: f64,
        xmax: f64,
    },

    #[error("waveform is empty")]
    EmptyWaveform,

    #[error("waveform contains non-finite samples")]
    NonFiniteSample,

    #[error("sample rate {rate} Hz unsupported, expected {expected} Hz (resample upstream)")]
    UnsupportedRate { rate: u32, expected: u32 },

    #[error("feature file {path}: {message}")]
    FeatureFile { path: PathBuf, message: String },

    #[error("probability {value} for keyword {word:?} outside [0, 1]")]
    ProbabilityRange { word: String, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("feature dimension mismatch: model expects {expected}, input has {got}")]
    FeatureDimMismatch { expected: usize, got: usize },

    #[error("empty input sequence")]
    EmptyInput,

    #[error("architecture {arch} does not provide {what}")]
    UnsupportedMethod { arch: String, what: String },

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("incompatible checkpoint: {0}")]
    IncompatibleCheckpoint(String),

    #[error("vocabulary hash mismatch between checkpoint and corpus")]
    VocabularyHashMismatch,

    #[error("train split is empty")]
    EmptyTrainSplit,

    #[error("utterance {id:?} has no {what} supervision")]
    MissingTarget { id: String, what: String },

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("utterance shorter than the minimum mask width ({min_ms} ms)")]
    UtteranceTooShort { min_ms: u32 },

    #[error("missing detection score for utterance {utt:?}, keyword {keyword:?}")]
    MissingScore { utt: String, keyword: String },

    #[error("sample id sets differ between the two presence tables")]
    IdMismatch,

    #[error("{path}: invalid JSON: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("[{stage}] {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Tag an error with the pipeline stage it came from.
    pub fn stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}

/// Extension to tag stage names onto results, used by the experiment runner.
pub trait StageExt<T> {
    fn stage(self, stage: &'static str) -> Result<T>;
}

impl<T> StageExt<T> for Result<T> {
    fn stage(self, stage: &'static str) -> Result<T> {
        self.map_err(|e| e.stage(stage))
    }
}
