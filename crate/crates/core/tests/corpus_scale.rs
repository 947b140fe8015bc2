//! Corpus handling at realistic sizes: thousands of manifest records and
//! hundreds of alignment files.

mod common;

use std::fmt::Write as _;

use vgsloc::corpus::{load_manifest, parse_textgrid, Split, Vocabulary};

/// 67 keywords in the style of a visual-vocabulary list.
fn vocab67() -> Vocabulary {
    let words: Vec<String> = (0..67).map(|i| format!("word{i:02}")).collect();
    Vocabulary::new(words, "en").unwrap()
}

#[test]
fn sixty_seven_keyword_vocabulary_indexes_stably() {
    let v = vocab67();
    assert_eq!(v.len(), 67);
    assert_eq!(v.index_of("word00"), Some(0));
    assert_eq!(v.index_of("word66"), Some(66));
    let h1 = v.hash64();
    let v2 = vocab67();
    assert_eq!(h1, v2.hash64());
}

#[test]
fn six_thousand_utterance_manifest_loads_with_split_counts() {
    // The 5k/500/500 split shape of a small cross-lingual corpus.
    let dir = common::tempdir("manifest6k");
    let mut text = String::new();
    for i in 0..6000 {
        let split = if i < 5000 {
            "train"
        } else if i < 5500 {
            "dev"
        } else {
            "test"
        };
        let alignment = if split == "test" {
            r#"[{"word":"word01","start_s":0.2,"end_s":0.5}]"#
        } else {
            "null"
        };
        writeln!(
            text,
            r#"{{"id":"yo_{i:05}","features":"feats/yo_{i:05}.vgsf","transcript":["word01","word{:02}"],"language":"yo","split":"{split}","alignment":{alignment},"visual_tags":null}}"#,
            i % 67,
        )
        .unwrap();
    }
    let path = dir.join("manifest.jsonl");
    std::fs::write(&path, text).unwrap();

    let m = load_manifest(&path, vocab67()).unwrap();
    assert_eq!(m.records.len(), 6000);
    assert_eq!(m.records_in(Split::Train).count(), 5000);
    assert_eq!(m.records_in(Split::Dev).count(), 500);
    assert_eq!(m.records_in(Split::Test).count(), 500);
    let total: usize = Split::ALL.iter().map(|s| m.records_in(*s).count()).sum();
    assert_eq!(total, m.records.len());
    m.ensure_test_alignments().unwrap();
    // Occurrence counts: word01 appears in every transcript.
    let counts = m.keyword_counts(Split::Train);
    assert_eq!(counts[1], 5000);
    std::fs::remove_dir_all(dir).ok();
}

#[test]
fn five_hundred_textgrids_parse_to_alignments() {
    let dir = common::tempdir("tg500");
    let vocab = vocab67();
    let mut rng = vgsloc::rng::Stream::new(3);
    let mut total_entries = 0usize;
    for i in 0..500 {
        let n_words = rng.int_in(1, 4);
        let mut body = String::new();
        let mut t = 0.0f64;
        let mut intervals = Vec::new();
        for _ in 0..n_words {
            let gap = rng.uniform(0.05, 0.3);
            let dur = rng.uniform(0.2, 0.6);
            intervals.push((t, t + gap, String::new()));
            let w = vocab.keyword(rng.below(67)).to_string();
            intervals.push((t + gap, t + gap + dur, w));
            t += gap + dur;
        }
        writeln!(body, "File type = \"ooTextFile\"").unwrap();
        writeln!(body, "Object class = \"TextGrid\"\n").unwrap();
        writeln!(body, "xmin = 0\nxmax = {t}\ntiers? <exists>\nsize = 1").unwrap();
        writeln!(body, "item []:\n    item [1]:").unwrap();
        writeln!(body, "        class = \"IntervalTier\"").unwrap();
        writeln!(body, "        name = \"words\"").unwrap();
        writeln!(body, "        xmin = 0\n        xmax = {t}").unwrap();
        writeln!(body, "        intervals: size = {}", intervals.len()).unwrap();
        for (k, (a, b, label)) in intervals.iter().enumerate() {
            writeln!(body, "        intervals [{}]:", k + 1).unwrap();
            writeln!(body, "            xmin = {a}").unwrap();
            writeln!(body, "            xmax = {b}").unwrap();
            writeln!(body, "            text = \"{label}\"").unwrap();
        }
        let path = dir.join(format!("u{i:03}.TextGrid"));
        std::fs::write(&path, body).unwrap();
        let set = parse_textgrid(&path, "words").unwrap();
        assert_eq!(set.entries.len(), n_words, "file {i}");
        assert!(set
            .entries
            .iter()
            .all(|e| vocab.index_of(&e.word).is_some()));
        total_entries += set.entries.len();
    }
    assert!(total_entries >= 500);
    std::fs::remove_dir_all(dir).ok();
}
