mod common;

use common::fixture;
use ulmfit::textpipe::{load_corpus_lines, load_labeled_csv, preprocess, Label, Vocabulary, DEFAULT_MAX_VOCAB};

#[test]
fn preprocess_matches_committed_cases() {
    let text = std::fs::read_to_string(fixture("preprocess_cases.jsonl")).unwrap();
    let cases: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(cases.len(), 20);
    for case in cases {
        let input = case["input"].as_str().unwrap();
        let expected: Vec<String> = serde_json::from_value(case["expected"].clone()).unwrap();
        assert_eq!(preprocess(input), expected, "{input:?}");
    }
}

#[test]
fn bundled_fixtures_load() {
    assert_eq!(load_corpus_lines(&fixture("lm_corpus.txt")).unwrap().len(), 200);
    let labeled = load_labeled_csv(&fixture("labeled.csv")).unwrap();
    assert_eq!(labeled.len(), 60);
    let hate = labeled.iter().filter(|r| r.label == Label::Hate).count();
    assert!(hate > 0 && hate < 60);
}

#[test]
fn default_cap_bounds_large_vocabularies() {
    let words: Vec<String> = (0..61_000).map(|i| format!("w{i}")).collect();
    let v = Vocabulary::build(words.iter(), DEFAULT_MAX_VOCAB, 1).unwrap();
    assert_eq!(v.len(), 60_000);
}
