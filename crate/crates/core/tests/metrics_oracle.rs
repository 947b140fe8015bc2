//! Every metric cross-checked against the independent exhaustive-counting
//! oracles on randomised corpora, plus the rank-metric invariance under
//! monotone score transformations.

mod common;

use common::*;
use vgsloc::eval::{
    build_report, equal_error_rate, eval_detection, eval_spotting, normalised_kappa,
    EvalInputs,
};
use vgsloc::rng::Stream;

fn inputs_of(c: &RandomCorpus) -> EvalInputs {
    let mut taus = std::collections::BTreeMap::new();
    taus.insert("synthetic".to_string(), c.taus.clone());
    EvalInputs {
        utt_ids: c.ids.clone(),
        keywords: c.keywords.clone(),
        detection: c.scores.clone(),
        presence: c.presence.clone(),
        alignments: c.alignments.clone(),
        taus,
    }
}

fn column(table: &[Vec<f64>], w: usize) -> Vec<f64> {
    table.iter().map(|r| r[w]).collect()
}

fn bcolumn(table: &[Vec<bool>], w: usize) -> Vec<bool> {
    table.iter().map(|r| r[w]).collect()
}

fn tcolumn(table: &[Vec<Option<f64>>], w: usize) -> Vec<Option<f64>> {
    table.iter().map(|r| r[w]).collect()
}

#[test]
fn every_metric_matches_the_counting_oracle_exactly() {
    let theta = 0.5;
    for seed in 0..20u64 {
        let corpus = random_corpus(seed);
        let inputs = inputs_of(&corpus);
        let report = build_report(&inputs, theta).unwrap();
        let loc = &report.localisation["synthetic"];

        for w in 0..corpus.keywords.len() {
            let scores = column(&corpus.scores, w);
            let present = bcolumn(&corpus.presence, w);
            let taus = tcolumn(&corpus.taus, w);

            let det = naive_detection(&scores, &present, theta);
            let cell = &report.detection.per_keyword[w];
            assert_eq!(cell.precision, det.precision, "P seed {seed} kw {w}");
            assert_eq!(cell.recall, det.recall, "R seed {seed} kw {w}");
            assert_eq!(cell.f1, det.f1, "F1 seed {seed} kw {w}");
            assert_eq!((cell.counts.tp, cell.counts.fp, cell.counts.fn_),
                       (det.tp, det.fp, det.fn_));

            let sp = &report.spotting.per_keyword[w];
            assert_eq!(
                sp.p_at_10,
                naive_p_at_k(&scores, &present, &corpus.ids, 10),
                "P@10 seed {seed} kw {w}"
            );
            assert_eq!(
                sp.p_at_n,
                naive_p_at_n(&scores, &present, &corpus.ids),
                "P@N seed {seed} kw {w}"
            );
            assert_eq!(
                sp.eer,
                naive_eer(&scores, &present),
                "EER seed {seed} kw {w}"
            );

            assert_eq!(
                loc.oracle_per_keyword[w],
                naive_oracle_accuracy(&corpus.keywords[w], &present, &taus, &corpus.alignments),
                "oracle seed {seed} kw {w}"
            );
            let act = naive_actual(
                &corpus.keywords[w],
                &scores,
                &present,
                &taus,
                &corpus.alignments,
                theta,
            );
            let acell = &loc.actual_per_keyword[w];
            assert_eq!(acell.precision, act.precision, "actual P seed {seed} kw {w}");
            assert_eq!(acell.recall, act.recall, "actual R seed {seed} kw {w}");
            assert_eq!(acell.f1, act.f1, "actual F1 seed {seed} kw {w}");

            assert_eq!(
                loc.spotting_per_keyword[w].p_at_10,
                naive_spotting_localisation(
                    &corpus.keywords[w],
                    &scores,
                    &present,
                    &taus,
                    &corpus.alignments,
                    &corpus.ids,
                    10
                ),
                "spotloc seed {seed} kw {w}"
            );
        }
    }
}

#[test]
fn eer_matches_brute_force_sweep_on_fixtures() {
    let mut rng = Stream::new(404);
    for _ in 0..50 {
        let n = rng.int_in(10, 24);
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if rng.bernoulli(0.3) {
                    0.5
                } else {
                    rng.f64()
                }
            })
            .collect();
        let present: Vec<bool> = (0..n).map(|_| rng.bernoulli(0.4)).collect();
        let ours = equal_error_rate(&scores, &present);
        let oracle = naive_eer(&scores, &present);
        match (ours, oracle) {
            (Some(a), Some(b)) => assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
            (a, b) => assert_eq!(a.is_none(), b.is_none(), "{a:?} vs {b:?}"),
        }
    }
}

#[test]
fn rank_metrics_invariant_under_monotone_transforms() {
    // Applying a strictly increasing function to every detection score
    // leaves P@10, P@N, EER and the full rankings unchanged.
    let transforms: [fn(f64) -> f64; 3] = [
        |x| 2.0 * x + 1.0,
        |x| x.exp(),
        |x| x.powi(3) + 0.5 * x,
    ];
    for seed in [3u64, 17, 99] {
        let corpus = random_corpus(seed);
        for w in 0..corpus.keywords.len() {
            let scores = column(&corpus.scores, w);
            let present = bcolumn(&corpus.presence, w);
            let base = eval_spotting(&scores, &present, &corpus.ids);
            for f in transforms {
                let mapped: Vec<f64> = scores.iter().map(|&s| f(s)).collect();
                let got = eval_spotting(&mapped, &present, &corpus.ids);
                assert_eq!(base.p_at_10, got.p_at_10);
                assert_eq!(base.p_at_n, got.p_at_n);
                match (base.eer, got.eer) {
                    (Some(a), Some(b)) => assert!((a - b).abs() < 1e-12),
                    (a, b) => assert_eq!(a.is_none(), b.is_none()),
                }
                assert_eq!(
                    vgsloc::eval::rank_indices(&scores, &corpus.ids),
                    vgsloc::eval::rank_indices(&mapped, &corpus.ids)
                );
            }
        }
    }
}

#[test]
fn detection_report_macro_excludes_undefined() {
    // Two keywords never detected, one never present: the macro means only
    // average over the defined subset and the counts say how many fell out.
    let scores = vec![
        vec![0.9, 0.0, 0.9],
        vec![0.8, 0.0, 0.2],
        vec![0.1, 0.0, 0.4],
    ];
    let presence = vec![
        vec![true, true, false],
        vec![false, true, false],
        vec![true, false, false],
    ];
    let report = eval_detection(&scores, &presence, 0.5).unwrap();
    assert_eq!(report.per_keyword[1].precision, None);
    assert_eq!(report.per_keyword[2].recall, None);
    assert_eq!(report.macro_precision.undefined, 1);
    assert_eq!(report.macro_recall.undefined, 1);
    assert_eq!(report.macro_precision.defined, 2);
}

#[test]
fn kappa_matches_second_implementation_everywhere() {
    let mut rng = Stream::new(2024);
    for _ in 0..300 {
        let n = rng.int_in(1, 500);
        let p_a = rng.f64();
        let p_b = rng.f64();
        let a: Vec<bool> = (0..n).map(|_| rng.bernoulli(p_a)).collect();
        let b: Vec<bool> = (0..n).map(|_| rng.bernoulli(p_b)).collect();
        let ours = normalised_kappa(&a, &b).unwrap();
        let naive = naive_kappa(&a, &b);
        match (ours.kappa, naive.kappa) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
            (x, y) => assert_eq!(x.is_none(), y.is_none()),
        }
        match (ours.kappa_norm, naive.kappa_norm) {
            (Some(x), Some(y)) => assert!((x - y).abs() < 1e-12),
            (x, y) => assert_eq!(x.is_none(), y.is_none()),
        }
    }
}
