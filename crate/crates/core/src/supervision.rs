//! Training targets: bag-of-words presence vectors from transcripts and
//! soft visual-tagger probabilities loaded from files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetKind {
    Visual,
    Bow,
}

impl TargetKind {
    pub fn name(&self) -> &'static str {
        match self {
            TargetKind::Visual => "visual",
            TargetKind::Bow => "bow",
        }
    }
}

/// Per-keyword occurrence probabilities used as the training target.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupervisionTarget {
    pub probs: Vec<f32>,
    pub kind: TargetKind,
}

impl SupervisionTarget {
    pub fn len(&self) -> usize {
        self.probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probs.is_empty()
    }
}

/// Binary presence targets: 1 iff the keyword occurs in the transcript at
/// least once, multiplicity ignored. Matching is exact surface form after
/// case-folding.
pub fn bow_targets(transcript: &[String], vocab: &Vocabulary) -> SupervisionTarget {
    let folded: Vec<String> = transcript.iter().map(|t| t.to_lowercase()).collect();
    let probs = vocab
        .keywords()
        .iter()
        .map(|kw| {
            let kw = kw.to_lowercase();
            if folded.iter().any(|t| *t == kw) {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    SupervisionTarget {
        probs,
        kind: TargetKind::Bow,
    }
}

/// Build a visual target from a keyword→probability map. Keywords missing
/// from the map default to 0; keywords outside the vocabulary are rejected.
pub fn visual_targets_from_map(
    map: &BTreeMap<String, f64>,
    vocab: &Vocabulary,
) -> Result<SupervisionTarget> {
    let mut probs = vec![0f32; vocab.len()];
    for (word, &p) in map {
        let Some(idx) = vocab.index_of(word) else {
            return Err(Error::UnknownKeyword { word: word.clone() });
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::ProbabilityRange {
                word: word.clone(),
                value: p,
            });
        }
        probs[idx] = p as f32;
    }
    Ok(SupervisionTarget {
        probs,
        kind: TargetKind::Visual,
    })
}

/// Load a visual-tag file: a JSON object mapping keyword to probability.
pub fn load_visual_targets(path: &Path, vocab: &Vocabulary) -> Result<SupervisionTarget> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let map: BTreeMap<String, f64> = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    visual_targets_from_map(&map, vocab)
}
