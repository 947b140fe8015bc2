//! Evaluation: keyword detection, keyword spotting, the three localisation
//! regimes, and cross-lingual keyword co-occurrence via normalised Cohen
//! kappa. Everything is a pure function of score tables plus the corpus
//! ground truth, so an experiment's report can be reproduced from its score
//! dump alone.

pub mod detection;
pub mod kappa;
pub mod localisation;
pub mod spotting;

pub use detection::{eval_detection, macro_over, DetectionReport, MacroCell, PrfCell, PrfCounts};
pub use kappa::{cooccurrence_matrix, normalised_kappa, CooccurrenceMatrix, KappaResult};
pub use localisation::{actual_cell, oracle_accuracy, KeywordLocalisation, SpotLocCell};
pub use spotting::{equal_error_rate, eval_spotting, rank_indices, SpottingCell};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{AlignmentSet, CorpusManifest, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub theta: f64,
    pub per_keyword: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            theta: 0.5,
            per_keyword: true,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0 && self.theta < 1.0) {
            return Err(Error::Config(format!(
                "theta must be in (0, 1), got {}",
                self.theta
            )));
        }
        Ok(())
    }
}

/// One line of the score dump: detection score plus the localisation score
/// track of one method for one (utterance, keyword) pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScoreDumpLine {
    pub utt_id: String,
    pub keyword: String,
    pub method: String,
    pub detection_score: f64,
    pub scores: Vec<f64>,
    pub times_s: Vec<f64>,
}

/// Everything the metrics need, with utterances sorted by id.
#[derive(Clone, Debug)]
pub struct EvalInputs {
    pub utt_ids: Vec<String>,
    pub keywords: Vec<String>,
    /// `detection[u][w]`
    pub detection: Vec<Vec<f64>>,
    /// `presence[u][w]` from transcripts
    pub presence: Vec<Vec<bool>>,
    pub alignments: Vec<AlignmentSet>,
    /// Per method: predicted location per (utterance, keyword).
    pub taus: BTreeMap<String, Vec<Vec<Option<f64>>>>,
}

impl EvalInputs {
    /// Assemble evaluation inputs from dump lines and corpus ground truth.
    /// The predicted location is the time of the highest score, earliest
    /// index on ties.
    pub fn from_dumps(
        manifest: &CorpusManifest,
        split: Split,
        lines: &[ScoreDumpLine],
        textgrid_tier: &str,
    ) -> Result<EvalInputs> {
        let mut records: Vec<&crate::corpus::UtteranceRecord> =
            manifest.records_in(split).collect();
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if records.is_empty() {
            return Err(Error::EmptyInput);
        }
        let utt_ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let keywords: Vec<String> = manifest.vocabulary.keywords().to_vec();
        let utt_index: BTreeMap<&str, usize> = utt_ids
            .iter()
            .enumerate()
            .map(|(i, id)| (id.as_str(), i))
            .collect();

        let n = utt_ids.len();
        let v = keywords.len();
        let mut detection = vec![vec![f64::NAN; v]; n];
        let mut taus: BTreeMap<String, Vec<Vec<Option<f64>>>> = BTreeMap::new();
        for line in lines {
            let Some(&u) = utt_index.get(line.utt_id.as_str()) else {
                continue; // other split
            };
            let Some(w) = manifest.vocabulary.index_of(&line.keyword) else {
                return Err(Error::UnknownKeyword {
                    word: line.keyword.clone(),
                });
            };
            let existing = detection[u][w];
            if existing.is_nan() {
                detection[u][w] = line.detection_score;
            } else if existing != line.detection_score {
                return Err(Error::Config(format!(
                    "inconsistent detection scores for ({}, {})",
                    line.utt_id, line.keyword
                )));
            }
            let tau = argmax_time(&line.scores, &line.times_s);
            taus.entry(line.method.clone())
                .or_insert_with(|| vec![vec![None; v]; n])
                [u][w] = tau;
        }
        for (u, row) in detection.iter().enumerate() {
            for (w, s) in row.iter().enumerate() {
                if s.is_nan() {
                    return Err(Error::MissingScore {
                        utt: utt_ids[u].clone(),
                        keyword: keywords[w].clone(),
                    });
                }
            }
        }

        let presence = records
            .iter()
            .map(|r| keywords.iter().map(|kw| r.transcript_contains(kw)).collect())
            .collect();
        let mut alignments = Vec::with_capacity(n);
        for r in &records {
            alignments.push(
                manifest
                    .alignment_of(r, textgrid_tier)?
                    .unwrap_or_default(),
            );
        }
        Ok(EvalInputs {
            utt_ids,
            keywords,
            detection,
            presence,
            alignments,
            taus,
        })
    }
}

/// Time of the highest score, ties broken to the earliest index.
pub fn argmax_time(scores: &[f64], times_s: &[f64]) -> Option<f64> {
    if scores.is_empty() || scores.len() != times_s.len() {
        return None;
    }
    let mut best = 0usize;
    for (i, s) in scores.iter().enumerate().skip(1) {
        if *s > scores[best] {
            best = i;
        }
    }
    Some(times_s[best])
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct DetectionSummary {
    pub per_keyword: Vec<PrfCell>,
    pub macro_precision: MacroCell,
    pub macro_recall: MacroCell,
    pub macro_f1: MacroCell,
    pub micro: PrfCell,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SpottingSummary {
    pub per_keyword: Vec<SpottingCell>,
    pub macro_p_at_10: MacroCell,
    pub macro_p_at_n: MacroCell,
    pub macro_eer: MacroCell,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LocalisationSummary {
    pub oracle_per_keyword: Vec<Option<f64>>,
    /// Pooled accuracy over all present (utterance, keyword) pairs.
    pub oracle_pooled: Option<f64>,
    pub oracle_macro: MacroCell,
    pub oracle_pairs: usize,
    pub actual_per_keyword: Vec<PrfCell>,
    pub actual_macro_precision: MacroCell,
    pub actual_macro_recall: MacroCell,
    pub actual_macro_f1: MacroCell,
    pub actual_micro: PrfCell,
    pub spotting_per_keyword: Vec<SpotLocCell>,
    pub spotting_macro_p_at_10: MacroCell,
    pub spotting_macro_p_at_n: MacroCell,
}

/// The full evaluation report: detection and spotting once, localisation
/// per method.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalReport {
    pub theta: f64,
    pub keywords: Vec<String>,
    /// Utterances containing each keyword in the evaluated split.
    pub support: Vec<usize>,
    pub n_utterances: usize,
    pub detection: DetectionSummary,
    pub spotting: SpottingSummary,
    pub localisation: BTreeMap<String, LocalisationSummary>,
}

pub fn build_report(inputs: &EvalInputs, theta: f64) -> Result<EvalReport> {
    let v = inputs.keywords.len();
    let n = inputs.utt_ids.len();
    if n == 0 || v == 0 {
        return Err(Error::EmptyInput);
    }

    let det = eval_detection(&inputs.detection, &inputs.presence, theta)?;
    let detection = DetectionSummary {
        per_keyword: det.per_keyword,
        macro_precision: det.macro_precision,
        macro_recall: det.macro_recall,
        macro_f1: det.macro_f1,
        micro: det.micro,
    };

    let column_scores = |w: usize| -> Vec<f64> {
        inputs.detection.iter().map(|row| row[w]).collect()
    };
    let column_presence = |w: usize| -> Vec<bool> {
        inputs.presence.iter().map(|row| row[w]).collect()
    };

    let mut spotting_cells = Vec::with_capacity(v);
    for w in 0..v {
        spotting_cells.push(eval_spotting(
            &column_scores(w),
            &column_presence(w),
            &inputs.utt_ids,
        ));
    }
    let spotting = SpottingSummary {
        macro_p_at_10: macro_over(spotting_cells.iter().map(|c| c.p_at_10)),
        macro_p_at_n: macro_over(spotting_cells.iter().map(|c| c.p_at_n)),
        macro_eer: macro_over(spotting_cells.iter().map(|c| c.eer)),
        per_keyword: spotting_cells,
    };

    let support: Vec<usize> = (0..v)
        .map(|w| column_presence(w).iter().filter(|&&p| p).count())
        .collect();

    let mut localisation = BTreeMap::new();
    for (method, taus) in &inputs.taus {
        let mut oracle_per_keyword = Vec::with_capacity(v);
        let mut oracle_correct = 0usize;
        let mut oracle_total = 0usize;
        let mut actual_per_keyword = Vec::with_capacity(v);
        let mut actual_pooled = PrfCounts::default();
        let mut spot_cells = Vec::with_capacity(v);
        for w in 0..v {
            let scores = column_scores(w);
            let present = column_presence(w);
            let tau_col: Vec<Option<f64>> = taus.iter().map(|row| row[w]).collect();
            let loc = KeywordLocalisation {
                keyword: &inputs.keywords[w],
                ids: &inputs.utt_ids,
                detection_scores: &scores,
                present: &present,
                taus: &tau_col,
                alignments: &inputs.alignments,
            };
            let (correct, total) = loc.oracle_counts()?;
            oracle_correct += correct;
            oracle_total += total;
            oracle_per_keyword.push(oracle_accuracy(correct, total));
            let counts = loc.actual_counts(theta);
            actual_pooled.tp += counts.tp;
            actual_pooled.fp += counts.fp;
            actual_pooled.fn_ += counts.fn_;
            actual_pooled.tn += counts.tn;
            actual_per_keyword.push(PrfCell::from_counts(counts));
            spot_cells.push(loc.spotting_counts());
        }
        localisation.insert(
            method.clone(),
            LocalisationSummary {
                oracle_macro: macro_over(oracle_per_keyword.iter().copied()),
                oracle_pooled: oracle_accuracy(oracle_correct, oracle_total),
                oracle_pairs: oracle_total,
                oracle_per_keyword,
                actual_macro_precision: macro_over(
                    actual_per_keyword.iter().map(|c| c.precision),
                ),
                actual_macro_recall: macro_over(actual_per_keyword.iter().map(|c| c.recall)),
                actual_macro_f1: macro_over(actual_per_keyword.iter().map(|c| c.f1)),
                actual_micro: PrfCell::from_counts(actual_pooled),
                actual_per_keyword,
                spotting_macro_p_at_10: macro_over(spot_cells.iter().map(|c| c.p_at_10)),
                spotting_macro_p_at_n: macro_over(spot_cells.iter().map(|c| c.p_at_n)),
                spotting_per_keyword: spot_cells,
            },
        );
    }

    Ok(EvalReport {
        theta,
        keywords: inputs.keywords.clone(),
        support,
        n_utterances: n,
        detection,
        spotting,
        localisation,
    })
}

fn csv_cell(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Flatten a report into `keyword,metric,value,support` rows for plotting.
/// Aggregate rows use the pseudo-keywords `ALL(macro)` and `ALL(micro)`.
pub fn report_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("keyword,metric,value,support\n");
    let mut push = |kw: &str, metric: &str, value: Option<f64>, support: Option<usize>| {
        let support = support.map(|s| s.to_string()).unwrap_or_default();
        out.push_str(&format!("{kw},{metric},{},{support}\n", csv_cell(value)));
    };
    for (w, kw) in report.keywords.iter().enumerate() {
        let sup = Some(report.support[w]);
        let det = &report.detection.per_keyword[w];
        push(kw, "detection_precision", det.precision, sup);
        push(kw, "detection_recall", det.recall, sup);
        push(kw, "detection_f1", det.f1, sup);
        let sp = &report.spotting.per_keyword[w];
        push(kw, "p_at_10", sp.p_at_10, sup);
        push(kw, "p_at_n", sp.p_at_n, sup);
        push(kw, "eer", sp.eer, sup);
        for (method, loc) in &report.localisation {
            push(kw, &format!("oracle_accuracy[{method}]"), loc.oracle_per_keyword[w], sup);
            let cell = &loc.actual_per_keyword[w];
            push(kw, &format!("actual_precision[{method}]"), cell.precision, sup);
            push(kw, &format!("actual_recall[{method}]"), cell.recall, sup);
            push(kw, &format!("actual_f1[{method}]"), cell.f1, sup);
            let sl = &loc.spotting_per_keyword[w];
            push(kw, &format!("spotting_loc_p_at_10[{method}]"), sl.p_at_10, sup);
            push(kw, &format!("spotting_loc_p_at_n[{method}]"), sl.p_at_n, sup);
        }
    }
    push("ALL(macro)", "detection_precision", report.detection.macro_precision.mean, None);
    push("ALL(macro)", "detection_recall", report.detection.macro_recall.mean, None);
    push("ALL(macro)", "detection_f1", report.detection.macro_f1.mean, None);
    push("ALL(micro)", "detection_precision", report.detection.micro.precision, None);
    push("ALL(micro)", "detection_recall", report.detection.micro.recall, None);
    push("ALL(micro)", "detection_f1", report.detection.micro.f1, None);
    push("ALL(macro)", "p_at_10", report.spotting.macro_p_at_10.mean, None);
    push("ALL(macro)", "p_at_n", report.spotting.macro_p_at_n.mean, None);
    push("ALL(macro)", "eer", report.spotting.macro_eer.mean, None);
    for (method, loc) in &report.localisation {
        push("ALL(pooled)", &format!("oracle_accuracy[{method}]"), loc.oracle_pooled, Some(loc.oracle_pairs));
        push("ALL(macro)", &format!("oracle_accuracy[{method}]"), loc.oracle_macro.mean, None);
        push("ALL(macro)", &format!("actual_precision[{method}]"), loc.actual_macro_precision.mean, None);
        push("ALL(macro)", &format!("actual_recall[{method}]"), loc.actual_macro_recall.mean, None);
        push("ALL(macro)", &format!("actual_f1[{method}]"), loc.actual_macro_f1.mean, None);
        push("ALL(micro)", &format!("actual_f1[{method}]"), loc.actual_micro.f1, None);
        push("ALL(macro)", &format!("spotting_loc_p_at_10[{method}]"), loc.spotting_macro_p_at_10.mean, None);
        push("ALL(macro)", &format!("spotting_loc_p_at_n[{method}]"), loc.spotting_macro_p_at_n.mean, None);
    }
    out
}
