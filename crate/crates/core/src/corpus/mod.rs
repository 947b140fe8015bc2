//! Corpus manifests: utterance records, vocabularies, word alignments and
//! train/dev/test splits.
//!
//! The manifest is UTF-8 JSON Lines with one object per utterance:
//!
//! ```json
//! {"id": "s01", "features": "feats/s01.vgsf", "transcript": ["a", "dog"],
//!  "language": "en", "split": "train",
//!  "alignment": [{"word": "dog", "start_s": 0.4, "end_s": 0.9}],
//!  "visual_tags": "tags/s01.json"}
//! ```
//!
//! `audio` may be given instead of `features` (exactly one of the two);
//! `alignment` is a path (TextGrid or JSON), an inline array, or null.
//! The vocabulary lives in its own UTF-8 file, one keyword per line.

mod textgrid;

pub use textgrid::parse_textgrid;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::fnv1a;

/// Ordered keyword list for one query language. Keyword indices are stable
/// for the lifetime of an experiment and are serialised with checkpoints as
/// a content hash.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Vocabulary {
    keywords: Vec<String>,
    language_tag: String,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Build a vocabulary in the given order. Duplicates (after
    /// case-folding) and empty lists are rejected; diacritics are preserved
    /// and significant.
    pub fn new(words: Vec<String>, language_tag: impl Into<String>) -> Result<Self> {
        if words.is_empty() {
            return Err(Error::EmptyVocabulary);
        }
        let mut index = HashMap::with_capacity(words.len());
        for (i, w) in words.iter().enumerate() {
            if index.insert(w.to_lowercase(), i).is_some() {
                return Err(Error::DuplicateKeyword { word: w.clone() });
            }
        }
        Ok(Vocabulary {
            keywords: words,
            language_tag: language_tag.into(),
            index,
        })
    }

    pub fn from_file(path: &Path, language_tag: impl Into<String>) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let words: Vec<String> = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Vocabulary::new(words, language_tag)
    }

    pub fn to_file(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        for w in &self.keywords {
            out.push_str(w);
            out.push('\n');
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn keywords(&self) -> &[String] {
        &self.keywords
    }

    pub fn keyword(&self, index: usize) -> &str {
        &self.keywords[index]
    }

    pub fn language_tag(&self) -> &str {
        &self.language_tag
    }

    /// Case-folded lookup; diacritics must match exactly.
    pub fn index_of(&self, word: &str) -> Option<usize> {
        self.index.get(&word.to_lowercase()).copied()
    }

    /// Stable content hash over keyword order and language tag.
    pub fn hash64(&self) -> u64 {
        let mut bytes = Vec::new();
        for w in &self.keywords {
            bytes.extend_from_slice(w.as_bytes());
            bytes.push(0);
        }
        bytes.extend_from_slice(self.language_tag.as_bytes());
        fnv1a(&bytes)
    }
}

impl<'de> Deserialize<'de> for Vocabulary {
    fn deserialize<D>(deserializer: D) -> std::result::Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        struct Raw {
            keywords: Vec<String>,
            language_tag: String,
        }
        let raw = Raw::deserialize(deserializer)?;
        Vocabulary::new(raw.keywords, raw.language_tag).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn name(&self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

/// One aligned word occurrence, in seconds from utterance start.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlignedWord {
    pub word: String,
    pub start_s: f64,
    pub end_s: f64,
}

/// Word-level forced alignment for one utterance, ordered by start time.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlignmentSet {
    pub entries: Vec<AlignedWord>,
}

impl AlignmentSet {
    pub fn new(mut entries: Vec<AlignedWord>) -> Result<Self> {
        for e in &entries {
            if !(e.start_s >= 0.0 && e.start_s < e.end_s) {
                return Err(Error::BadRecord {
                    id: e.word.clone(),
                    message: format!(
                        "alignment interval [{}, {}) is not ordered",
                        e.start_s, e.end_s
                    ),
                });
            }
        }
        entries.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
        Ok(AlignmentSet { entries })
    }

    /// All intervals whose word matches `word` after case-folding.
    pub fn occurrences_of(&self, word: &str) -> Vec<(f64, f64)> {
        let folded = word.to_lowercase();
        self.entries
            .iter()
            .filter(|e| e.word.to_lowercase() == folded)
            .map(|e| (e.start_s, e.end_s))
            .collect()
    }

    /// Whether `t` falls inside any occurrence of `word` (closed interval).
    pub fn contains_at(&self, word: &str, t: f64) -> bool {
        self.occurrences_of(word)
            .iter()
            .any(|&(s, e)| t >= s && t <= e)
    }
}

/// Where the alignment of a record comes from. Path-based alignments are
/// resolved lazily so that a manifest round-trips byte-for-byte.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AlignmentSource {
    Path(PathBuf),
    Inline(AlignmentSet),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum UtteranceSource {
    #[serde(rename = "audio")]
    Audio(PathBuf),
    #[serde(rename = "features")]
    Features(PathBuf),
}

#[derive(Clone, Debug, PartialEq)]
pub struct UtteranceRecord {
    pub id: String,
    pub source: UtteranceSource,
    pub transcript: Option<Vec<String>>,
    pub language_tag: String,
    pub split: Split,
    pub alignment: Option<AlignmentSource>,
    pub visual_tags: Option<PathBuf>,
}

impl UtteranceRecord {
    /// Does the transcript contain `keyword` (case-folded exact match)?
    pub fn transcript_contains(&self, keyword: &str) -> bool {
        let folded = keyword.to_lowercase();
        self.transcript
            .as_ref()
            .map(|t| t.iter().any(|tok| tok.to_lowercase() == folded))
            .unwrap_or(false)
    }
}

/// Raw JSON Lines shape of one record.
#[derive(Serialize, Deserialize)]
struct RawRecord {
    id: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    audio: Option<PathBuf>,
    #[serde(skip_serializing_if = "Option::is_none")]
    features: Option<PathBuf>,
    transcript: Option<Vec<String>>,
    language: String,
    split: Split,
    alignment: Option<AlignmentSource>,
    visual_tags: Option<PathBuf>,
}

/// A validated multimodal corpus: records, vocabulary and language tags.
#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub records: Vec<UtteranceRecord>,
    pub vocabulary: Vocabulary,
    pub audio_language: String,
    pub query_language: String,
    base_dir: PathBuf,
}

/// Options controlling manifest loading.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Tier to read when an alignment path points at a TextGrid.
    pub textgrid_tier: String,
    /// Fail loading when a test record carries no alignment. Set when the
    /// manifest is being loaded for localisation evaluation.
    pub require_test_alignments: bool,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            textgrid_tier: "words".into(),
            require_test_alignments: false,
        }
    }
}

pub fn load_manifest(path: &Path, vocabulary: Vocabulary) -> Result<CorpusManifest> {
    load_manifest_with(path, vocabulary, &LoadOptions::default())
}

pub fn load_manifest_with(
    path: &Path,
    vocabulary: Vocabulary,
    opts: &LoadOptions,
) -> Result<CorpusManifest> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut seen_ids: HashMap<String, usize> = HashMap::new();
    let mut language: Option<String> = None;

    for (lineno, line) in reader.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawRecord =
            serde_json::from_str(&line).map_err(|e| Error::ManifestParse {
                path: path.to_path_buf(),
                line: lineno,
                message: e.to_string(),
            })?;
        let source = match (raw.audio, raw.features) {
            (Some(a), None) => UtteranceSource::Audio(a),
            (None, Some(f)) => UtteranceSource::Features(f),
            _ => {
                return Err(Error::ManifestParse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: "exactly one of \"audio\" or \"features\" required".into(),
                })
            }
        };
        if seen_ids.insert(raw.id.clone(), lineno).is_some() {
            return Err(Error::DuplicateId { id: raw.id });
        }
        if let Some(AlignmentSource::Inline(set)) = &raw.alignment {
            // Re-validate interval ordering on the parsed entries.
            AlignmentSet::new(set.entries.clone()).map_err(|_| Error::ManifestParse {
                path: path.to_path_buf(),
                line: lineno,
                message: format!("record {:?}: bad alignment interval", raw.id),
            })?;
        }
        match &language {
            None => language = Some(raw.language.clone()),
            Some(l) if *l != raw.language => {
                return Err(Error::ManifestParse {
                    path: path.to_path_buf(),
                    line: lineno,
                    message: format!(
                        "mixed audio languages {:?} and {:?} in one manifest",
                        l, raw.language
                    ),
                })
            }
            _ => {}
        }
        records.push(UtteranceRecord {
            id: raw.id,
            source,
            transcript: raw.transcript,
            language_tag: raw.language,
            split: raw.split,
            alignment: raw.alignment,
            visual_tags: raw.visual_tags,
        });
    }

    let audio_language = language.unwrap_or_default();
    let query_language = vocabulary.language_tag().to_string();
    let manifest = CorpusManifest {
        records,
        vocabulary,
        audio_language,
        query_language,
        base_dir: path.parent().unwrap_or(Path::new(".")).to_path_buf(),
    };
    if opts.require_test_alignments {
        manifest.ensure_test_alignments()?;
    }
    Ok(manifest)
}

impl CorpusManifest {
    /// Assemble a manifest in memory. `base_dir` anchors relative paths.
    pub fn from_parts(
        records: Vec<UtteranceRecord>,
        vocabulary: Vocabulary,
        audio_language: impl Into<String>,
        base_dir: impl Into<PathBuf>,
    ) -> Self {
        let query_language = vocabulary.language_tag().to_string();
        CorpusManifest {
            records,
            vocabulary,
            audio_language: audio_language.into(),
            query_language,
            base_dir: base_dir.into(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
        for r in &self.records {
            let (audio, features) = match &r.source {
                UtteranceSource::Audio(p) => (Some(p.clone()), None),
                UtteranceSource::Features(p) => (None, Some(p.clone())),
            };
            let raw = RawRecord {
                id: r.id.clone(),
                audio,
                features,
                transcript: r.transcript.clone(),
                language: r.language_tag.clone(),
                split: r.split,
                alignment: r.alignment.clone(),
                visual_tags: r.visual_tags.clone(),
            };
            let line = serde_json::to_string(&raw).map_err(|e| Error::Json {
                path: path.to_path_buf(),
                source: e,
            })?;
            writeln!(file, "{line}").map_err(|e| Error::io(path, e))?;
        }
        Ok(())
    }

    pub fn records_in(&self, split: Split) -> impl Iterator<Item = &UtteranceRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn by_id(&self, id: &str) -> Option<&UtteranceRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Resolve a path in the manifest relative to the manifest location.
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Number of utterances per split whose transcript contains each keyword.
    pub fn keyword_counts(&self, split: Split) -> Vec<usize> {
        self.vocabulary
            .keywords()
            .iter()
            .map(|kw| {
                self.records_in(split)
                    .filter(|r| r.transcript_contains(kw))
                    .count()
            })
            .collect()
    }

    /// Resolve the alignment of a record, reading path-based sources
    /// (TextGrid by extension, JSON otherwise).
    pub fn alignment_of(
        &self,
        record: &UtteranceRecord,
        textgrid_tier: &str,
    ) -> Result<Option<AlignmentSet>> {
        match &record.alignment {
            None => Ok(None),
            Some(AlignmentSource::Inline(set)) => Ok(Some(set.clone())),
            Some(AlignmentSource::Path(p)) => {
                let path = self.resolve(p);
                let ext = path
                    .extension()
                    .and_then(|e| e.to_str())
                    .unwrap_or("")
                    .to_lowercase();
                let set = if ext == "textgrid" {
                    parse_textgrid(&path, textgrid_tier)?
                } else {
                    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                    let entries: Vec<AlignedWord> =
                        serde_json::from_str(&text).map_err(|e| Error::Json {
                            path: path.clone(),
                            source: e,
                        })?;
                    AlignmentSet::new(entries)?
                };
                Ok(Some(set))
            }
        }
    }

    /// Every test record must carry an alignment before localisation
    /// evaluation can run.
    pub fn ensure_test_alignments(&self) -> Result<()> {
        for r in self.records_in(Split::Test) {
            if r.alignment.is_none() {
                return Err(Error::MissingAlignment { id: r.id.clone() });
            }
        }
        Ok(())
    }

    /// Presence table over a split: rows ordered by utterance id, columns by
    /// vocabulary index.
    pub fn presence_table(&self, split: Split) -> (Vec<String>, Vec<Vec<bool>>) {
        let mut recs: Vec<&UtteranceRecord> = self.records_in(split).collect();
        recs.sort_by(|a, b| a.id.cmp(&b.id));
        let ids = recs.iter().map(|r| r.id.clone()).collect();
        let rows = recs
            .iter()
            .map(|r| {
                self.vocabulary
                    .keywords()
                    .iter()
                    .map(|kw| r.transcript_contains(kw))
                    .collect()
            })
            .collect();
        (ids, rows)
    }

    /// FNV hash of the serialised manifest, for provenance stamping.
    pub fn content_hash(&self) -> u64 {
        let mut bytes = Vec::new();
        for r in &self.records {
            bytes.extend_from_slice(r.id.as_bytes());
            bytes.push(0);
            bytes.extend_from_slice(r.split.name().as_bytes());
            bytes.push(0);
            if let Some(t) = &r.transcript {
                for tok in t {
                    bytes.extend_from_slice(tok.as_bytes());
                    bytes.push(1);
                }
            }
        }
        bytes.extend_from_slice(&self.vocabulary.hash64().to_le_bytes());
        fnv1a(&bytes)
    }
}

/// Group per-keyword occurrence counts for reporting.
pub fn counts_by_split(manifest: &CorpusManifest) -> BTreeMap<&'static str, Vec<usize>> {
    Split::ALL
        .iter()
        .map(|s| (s.name(), manifest.keyword_counts(*s)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_lines(dir: &Path, name: &str, lines: &[&str]) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    fn tempdir(tag: &str) -> PathBuf {
        let dir = std::env::temp_dir().join(format!(
            "vgsloc-corpus-{tag}-{}-{:x}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        fs::create_dir_all(&dir).unwrap();
        dir
    }

    fn vocab() -> Vocabulary {
        Vocabulary::new(vec!["beach".into(), "ball".into()], "en").unwrap()
    }

    #[test]
    fn vocabulary_indexing_and_duplicates() {
        let v = vocab();
        assert_eq!(v.len(), 2);
        assert_eq!(v.index_of("beach"), Some(0));
        assert_eq!(v.index_of("Beach"), Some(0));
        assert_eq!(v.index_of("sand"), None);
        assert!(matches!(
            Vocabulary::new(vec!["a".into(), "a".into()], "en"),
            Err(Error::DuplicateKeyword { .. })
        ));
        assert!(matches!(
            Vocabulary::new(vec!["A".into(), "a".into()], "en"),
            Err(Error::DuplicateKeyword { .. })
        ));
        assert!(matches!(
            Vocabulary::new(vec![], "en"),
            Err(Error::EmptyVocabulary)
        ));
    }

    #[test]
    fn diacritics_stay_distinct() {
        let v = Vocabulary::new(vec!["okun".into(), "òkun".into()], "yo").unwrap();
        assert_eq!(v.index_of("òkun"), Some(1));
        assert_eq!(v.index_of("okun"), Some(0));
        assert_ne!(v.index_of("òkun"), v.index_of("okun"));
    }

    #[test]
    fn three_line_manifest_loads_with_counts() {
        let dir = tempdir("basic");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"s01","features":"f/s01.vgsf","transcript":["a","beach"],"language":"en","split":"train","alignment":null,"visual_tags":null}"#,
                r#"{"id":"s02","features":"f/s02.vgsf","transcript":["ball"],"language":"en","split":"dev","alignment":null,"visual_tags":null}"#,
                r#"{"id":"s03","features":"f/s03.vgsf","transcript":["beach","ball"],"language":"en","split":"test","alignment":[{"word":"beach","start_s":0.1,"end_s":0.4}],"visual_tags":null}"#,
            ],
        );
        let m = load_manifest(&path, vocab()).unwrap();
        assert_eq!(m.records.len(), 3);
        assert_eq!(m.keyword_counts(Split::Train), vec![1, 0]);
        assert_eq!(m.keyword_counts(Split::Dev), vec![0, 1]);
        assert_eq!(m.keyword_counts(Split::Test), vec![1, 1]);
        let total: usize = Split::ALL
            .iter()
            .map(|s| m.records_in(*s).count())
            .sum();
        assert_eq!(total, m.records.len());
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn duplicate_id_rejected() {
        let dir = tempdir("dup");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"s01","features":"a.vgsf","transcript":null,"language":"en","split":"train","alignment":null,"visual_tags":null}"#,
                r#"{"id":"s01","features":"b.vgsf","transcript":null,"language":"en","split":"test","alignment":null,"visual_tags":null}"#,
            ],
        );
        assert!(matches!(
            load_manifest(&path, vocab()),
            Err(Error::DuplicateId { .. })
        ));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempdir("badline");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"s01","features":"a.vgsf","transcript":null,"language":"en","split":"train","alignment":null,"visual_tags":null}"#,
                r#"{"id": broken"#,
            ],
        );
        match load_manifest(&path, vocab()) {
            Err(Error::ManifestParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn missing_test_alignment_flagged_on_request() {
        let dir = tempdir("noalign");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"t1","features":"a.vgsf","transcript":["beach"],"language":"en","split":"test","alignment":null,"visual_tags":null}"#,
            ],
        );
        assert!(load_manifest(&path, vocab()).is_ok());
        let opts = LoadOptions {
            require_test_alignments: true,
            ..LoadOptions::default()
        };
        assert!(matches!(
            load_manifest_with(&path, vocab(), &opts),
            Err(Error::MissingAlignment { .. })
        ));
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn manifest_round_trips_field_by_field() {
        let dir = tempdir("roundtrip");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"s01","audio":"wav/s01.wav","transcript":["beach"],"language":"en","split":"train","alignment":"align/s01.json","visual_tags":"tags/s01.json"}"#,
                r#"{"id":"s02","features":"f/s02.vgsf","transcript":null,"language":"en","split":"test","alignment":[{"word":"ball","start_s":0.0,"end_s":0.2}],"visual_tags":null}"#,
            ],
        );
        let m = load_manifest(&path, vocab()).unwrap();
        let out = dir.join("out.jsonl");
        m.save(&out).unwrap();
        let m2 = load_manifest(&out, vocab()).unwrap();
        assert_eq!(m.records, m2.records);
        assert_eq!(m.audio_language, m2.audio_language);
        fs::remove_dir_all(dir).ok();
    }

    #[test]
    fn bad_inline_alignment_interval_rejected() {
        let dir = tempdir("badiv");
        let path = write_lines(
            &dir,
            "m.jsonl",
            &[
                r#"{"id":"s01","features":"a.vgsf","transcript":null,"language":"en","split":"test","alignment":[{"word":"x","start_s":0.5,"end_s":0.5}],"visual_tags":null}"#,
            ],
        );
        assert!(load_manifest(&path, vocab()).is_err());
        fs::remove_dir_all(dir).ok();
    }
}
