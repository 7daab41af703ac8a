use std::fs;

use cotah::corpus::{load_corpus, parse_quac, split_dev_test, to_quac_json, NO_ANSWER};
use cotah::eval::human_f1;
use cotah::toy::toy_corpus;
use cotah::Error;
use proptest::prelude::*;

const FIXTURE: &str = r#"{"data": [{"title": "Drummer", "paragraphs": [{
  "id": "C_1",
  "context": "Élan joined a jazz club in 1963. He left in 1965. CANNOTANSWER",
  "qas": [
    {"id": "C_1_q#0", "question": "What did Élan join?",
     "orig_answer": {"text": "a jazz club", "answer_start": 12},
     "answers": [{"text": "a jazz club", "answer_start": 12},
                 {"text": "a jazz club in 1963", "answer_start": 12}]},
    {"id": "C_1_q#1", "question": "Did he record?",
     "orig_answer": {"text": "CANNOTANSWER", "answer_start": 51},
     "answers": [{"text": "CANNOTANSWER", "answer_start": 51}]}
  ]}]}]}"#;

#[test]
fn one_dialog_two_turns() {
    let dialogs = parse_quac(FIXTURE, "fixture").unwrap();
    assert_eq!(dialogs.len(), 1);
    let d = &dialogs[0];
    assert_eq!(d.dialog_id, "C_1");
    assert_eq!(
        d.document.text,
        "Élan joined a jazz club in 1963. He left in 1965."
    );
    assert_eq!(d.document.sentences.len(), 2);
    assert_eq!(d.turns.len(), 2);

    let first = &d.turns[0];
    assert_eq!(first.gold_answers.len(), 2);
    let span = first.gold_answers[0].span.unwrap();
    // offsets are bytes; the accented letter takes two
    assert_eq!(span.begin, 13);
    assert_eq!(d.document.slice(span), "a jazz club");
    assert!((first.human_f1 - human_f1(&["a jazz club", "a jazz club in 1963"])).abs() < 1e-12);

    let second = &d.turns[1];
    assert!(second.gold_answers[0].is_unanswerable());
    assert_eq!(second.gold_answers[0].text, NO_ANSWER);
    assert_eq!(d.history(1), vec!["What did Élan join?"]);
}

#[test]
fn empty_and_malformed_files_are_parse_errors() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty.json");
    fs::write(&empty, "").unwrap();
    assert!(matches!(load_corpus(&empty), Err(Error::Parse { .. })));

    let err = parse_quac(r#"{"data": [{"paragraphs": [{"id": "bad"}]}]}"#, "x").unwrap_err();
    assert!(err.to_string().contains("dialog bad"), "{err}");
    assert!(matches!(
        load_corpus(&dir.path().join("absent.json")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn mismatched_answer_text_is_rejected() {
    let bad = FIXTURE.replace("\"answer_start\": 12}]", "\"answer_start\": 14}]");
    let err = parse_quac(&bad, "fixture").unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn quac_round_trip() {
    let dialogs = toy_corpus(4, 3);
    let json = serde_json::to_string(&to_quac_json(&dialogs)).unwrap();
    assert_eq!(parse_quac(&json, "round trip").unwrap(), dialogs);

    let fixture = parse_quac(FIXTURE, "fixture").unwrap();
    let json = serde_json::to_string(&to_quac_json(&fixture)).unwrap();
    assert_eq!(parse_quac(&json, "round trip").unwrap(), fixture);
}

#[test]
fn two_three_turn_dialogs_split_one_each() {
    let mut dialogs = toy_corpus(2, 1);
    for d in &mut dialogs {
        d.turns.truncate(3);
    }
    let s = split_dev_test(&dialogs, 1000).unwrap();
    assert_eq!(s.dev_dialog_ids.len(), 1);
    assert_eq!(s.test_dialog_ids.len(), 1);
    assert_eq!(s.side_counts(&dialogs), (3, 3));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn split_is_a_balanced_partition(n in 2usize..40, seed in 0u64..1000) {
        let dialogs = toy_corpus(n, seed);
        let s = split_dev_test(&dialogs, seed).unwrap();
        prop_assert!(s.dev_dialog_ids.is_disjoint(&s.test_dialog_ids));
        prop_assert_eq!(s.dev_dialog_ids.len() + s.test_dialog_ids.len(), n);
        let (dev, test) = s.side_counts(&dialogs);
        // dialogs hold 6..=10 turns, so a gap over 10 would mean a move was missed
        prop_assert!(dev.abs_diff(test) <= 10, "{} vs {}", dev, test);
        prop_assert_eq!(&s, &split_dev_test(&dialogs, seed).unwrap());
    }
}

#[test]
fn large_corpus_splits_within_two_questions() {
    let dialogs = toy_corpus(1000, 11);
    let s = split_dev_test(&dialogs, 1000).unwrap();
    let (dev, test) = s.side_counts(&dialogs);
    assert!(dev.abs_diff(test) <= 2, "{dev} vs {test}");
}
