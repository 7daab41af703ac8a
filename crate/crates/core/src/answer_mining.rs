//! Candidate synthetic answers: noun phrases chunked from the sentences
//! around each real answer.

use std::collections::{BTreeSet, HashMap};
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::{locate_answer_sentence, CharSpan, Dialog};
use crate::error::Result;
use crate::eval::normalize_text;
use crate::text::{tokenize, Token};

/// Default per-slot cap on mined candidates.
pub const MAX_CANDIDATES: usize = 20;

/// Assigns Penn Treebank tags to a word sequence.
pub trait PosTagger: Send + Sync {
    fn tag(&self, words: &[&str]) -> Vec<String>;
}

/// Lookup tagger. Words missing from the table get the fallback tag, or
/// `UNK` (which never matches a chunk pattern).
#[derive(Debug, Clone, Default)]
pub struct DictionaryTagger {
    table: HashMap<String, String>,
    fallback: Option<String>,
}

impl DictionaryTagger {
    pub fn new<I, W, T>(entries: I) -> Self
    where
        I: IntoIterator<Item = (W, T)>,
        W: Into<String>,
        T: Into<String>,
    {
        Self {
            table: entries
                .into_iter()
                .map(|(w, t)| (w.into().to_lowercase(), t.into()))
                .collect(),
            fallback: None,
        }
    }

    pub fn with_fallback(mut self, tag: impl Into<String>) -> Self {
        self.fallback = Some(tag.into());
        self
    }
}

impl PosTagger for DictionaryTagger {
    fn tag(&self, words: &[&str]) -> Vec<String> {
        words
            .iter()
            .map(|w| {
                self.table
                    .get(&w.to_lowercase())
                    .cloned()
                    .or_else(|| self.fallback.clone())
                    .unwrap_or_else(|| "UNK".to_string())
            })
            .collect()
    }
}

const CLOSED_CLASS: &[(&str, &str)] = &[
    ("a", "DT"),
    ("about", "IN"),
    ("after", "IN"),
    ("against", "IN"),
    ("all", "DT"),
    ("also", "RB"),
    ("although", "IN"),
    ("always", "RB"),
    ("am", "VBP"),
    ("an", "DT"),
    ("and", "CC"),
    ("another", "DT"),
    ("any", "DT"),
    ("are", "VBP"),
    ("as", "IN"),
    ("at", "IN"),
    ("be", "VB"),
    ("became", "VBD"),
    ("because", "IN"),
    ("been", "VBN"),
    ("before", "IN"),
    ("began", "VBD"),
    ("being", "VBG"),
    ("between", "IN"),
    ("both", "DT"),
    ("but", "CC"),
    ("by", "IN"),
    ("came", "VBD"),
    ("can", "MD"),
    ("could", "MD"),
    ("did", "VBD"),
    ("do", "VBP"),
    ("does", "VBZ"),
    ("during", "IN"),
    ("each", "DT"),
    ("even", "RB"),
    ("every", "DT"),
    ("for", "IN"),
    ("from", "IN"),
    ("had", "VBD"),
    ("has", "VBZ"),
    ("have", "VBP"),
    ("he", "PRP"),
    ("her", "PRP$"),
    ("here", "RB"),
    ("him", "PRP"),
    ("his", "PRP$"),
    ("how", "WRB"),
    ("however", "RB"),
    ("i", "PRP"),
    ("if", "IN"),
    ("in", "IN"),
    ("into", "IN"),
    ("is", "VBZ"),
    ("it", "PRP"),
    ("its", "PRP$"),
    ("just", "RB"),
    ("later", "RB"),
    ("made", "VBD"),
    ("may", "MD"),
    ("me", "PRP"),
    ("might", "MD"),
    ("must", "MD"),
    ("my", "PRP$"),
    ("never", "RB"),
    ("no", "DT"),
    ("nor", "CC"),
    ("not", "RB"),
    ("of", "IN"),
    ("often", "RB"),
    ("on", "IN"),
    ("only", "RB"),
    ("or", "CC"),
    ("our", "PRP$"),
    ("over", "IN"),
    ("said", "VBD"),
    ("shall", "MD"),
    ("she", "PRP"),
    ("should", "MD"),
    ("since", "IN"),
    ("so", "RB"),
    ("some", "DT"),
    ("soon", "RB"),
    ("still", "RB"),
    ("than", "IN"),
    ("that", "DT"),
    ("the", "DT"),
    ("their", "PRP$"),
    ("them", "PRP"),
    ("then", "RB"),
    ("there", "EX"),
    ("these", "DT"),
    ("they", "PRP"),
    ("this", "DT"),
    ("those", "DT"),
    ("through", "IN"),
    ("to", "TO"),
    ("too", "RB"),
    ("under", "IN"),
    ("until", "IN"),
    ("upon", "IN"),
    ("us", "PRP"),
    ("very", "RB"),
    ("was", "VBD"),
    ("we", "PRP"),
    ("went", "VBD"),
    ("were", "VBD"),
    ("what", "WP"),
    ("when", "WRB"),
    ("where", "WRB"),
    ("which", "WDT"),
    ("while", "IN"),
    ("who", "WP"),
    ("whom", "WP"),
    ("whose", "WP$"),
    ("why", "WRB"),
    ("will", "MD"),
    ("with", "IN"),
    ("within", "IN"),
    ("without", "IN"),
    ("would", "MD"),
    ("yet", "CC"),
    ("you", "PRP"),
    ("your", "PRP$"), // irregular past forms the suffix rules would call nouns
    ("bought", "VBD"),
    ("brought", "VBD"),
    ("built", "VBD"),
    ("chose", "VBD"),
    ("drew", "VBD"),
    ("fell", "VBD"),
    ("felt", "VBD"),
    ("fought", "VBD"),
    ("found", "VBD"),
    ("gave", "VBD"),
    ("got", "VBD"),
    ("grew", "VBD"),
    ("heard", "VBD"),
    ("held", "VBD"),
    ("kept", "VBD"),
    ("knew", "VBD"),
    ("led", "VBD"),
    ("left", "VBD"),
    ("lost", "VBD"),
    ("met", "VBD"),
    ("paid", "VBD"),
    ("ran", "VBD"),
    ("sang", "VBD"),
    ("saw", "VBD"),
    ("sent", "VBD"),
    ("sold", "VBD"),
    ("spent", "VBD"),
    ("spoke", "VBD"),
    ("stood", "VBD"),
    ("taught", "VBD"),
    ("thought", "VBD"),
    ("told", "VBD"),
    ("took", "VBD"),
    ("won", "VBD"),
    ("wrote", "VBD"),
];

const ADJECTIVE_SUFFIXES: &[&str] = &[
    "ous", "ful", "ive", "able", "ible", "ic", "less", "ish", "ary",
];

/// Closed-class lexicon plus suffix and capitalization rules. Needs no model
/// files; good enough to find noun-phrase candidates.
#[derive(Debug, Clone)]
pub struct HeuristicTagger {
    lexicon: HashMap<&'static str, &'static str>,
}

impl Default for HeuristicTagger {
    fn default() -> Self {
        Self {
            lexicon: CLOSED_CLASS.iter().copied().collect(),
        }
    }
}

impl HeuristicTagger {
    fn tag_word(&self, word: &str, sentence_initial: bool) -> String {
        let lower = word.to_lowercase();
        if let Some(t) = self.lexicon.get(lower.as_str()) {
            return (*t).to_string();
        }
        let first = word.chars().next().unwrap_or(' ');
        if !first.is_alphanumeric() {
            return word.to_string();
        }
        if first.is_ascii_digit() {
            return "CD".into();
        }
        if first.is_uppercase() && !sentence_initial {
            return "NNP".into();
        }
        let n = lower.chars().count();
        if n > 4 && lower.ends_with("ly") {
            return "RB".into();
        }
        if n > 5 && lower.ends_with("ing") {
            return "VBG".into();
        }
        if n > 4 && lower.ends_with("ed") {
            return "VBD".into();
        }
        if ADJECTIVE_SUFFIXES.iter().any(|s| lower.ends_with(s)) && n > 4
            || (n > 5 && lower.ends_with("al"))
        {
            return "JJ".into();
        }
        if first.is_uppercase() {
            return "NNP".into();
        }
        if n > 3 && lower.ends_with('s') && !lower.ends_with("ss") {
            return "NNS".into();
        }
        "NN".into()
    }
}

impl PosTagger for HeuristicTagger {
    fn tag(&self, words: &[&str]) -> Vec<String> {
        words
            .iter()
            .enumerate()
            .map(|(i, w)| self.tag_word(w, i == 0))
            .collect()
    }
}

fn is_noun(tag: &str) -> bool {
    matches!(tag, "NN" | "NNS" | "NNP" | "NNPS")
}

/// Maximal matches of `DT? JJ* (NN|NNS|NNP|NNPS)+`, as token index ranges.
pub fn extract_noun_phrases<W: AsRef<str>, T: AsRef<str>>(tagged: &[(W, T)]) -> Vec<Range<usize>> {
    let tags: Vec<&str> = tagged.iter().map(|(_, t)| t.as_ref()).collect();
    let mut out = Vec::new();
    let mut i = 0;
    while i < tags.len() {
        let mut j = i;
        if tags[j] == "DT" {
            j += 1;
        }
        while j < tags.len() && tags[j] == "JJ" {
            j += 1;
        }
        let noun_start = j;
        while j < tags.len() && is_noun(tags[j]) {
            j += 1;
        }
        if j > noun_start {
            out.push(i..j);
            i = j;
        } else {
            i += 1;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateAnswer {
    pub text: String,
    pub span: CharSpan,
    pub source_sentence: usize,
    /// The synthetic question sits between real turns `slot` and `slot + 1`.
    pub slot: usize,
}

/// JSONL row for persisted candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub dialog_id: String,
    pub slot: usize,
    pub text: String,
    pub begin: usize,
    pub end: usize,
    pub source_sentence: usize,
}

impl CandidateRecord {
    pub fn new(dialog_id: &str, c: &CandidateAnswer) -> Self {
        Self {
            dialog_id: dialog_id.to_string(),
            slot: c.slot,
            text: c.text.clone(),
            begin: c.span.begin,
            end: c.span.end,
            source_sentence: c.source_sentence,
        }
    }

    pub fn candidate(&self) -> CandidateAnswer {
        CandidateAnswer {
            text: self.text.clone(),
            span: CharSpan::new(self.begin, self.end),
            source_sentence: self.source_sentence,
            slot: self.slot,
        }
    }
}

/// Sentence indices `i-1 ..= i+1`, clamped to the document.
pub fn sentence_window(answer_sentence: usize, n_sentences: usize) -> Range<usize> {
    answer_sentence.saturating_sub(1)..(answer_sentence + 2).min(n_sentences)
}

/// Noun phrases near the real answer of turn `slot`, in document order,
/// deduplicated by normalized text and excluding the real answer itself.
pub fn mine_candidates(
    dialog: &Dialog,
    slot: usize,
    tagger: &dyn PosTagger,
    cap: usize,
) -> Result<Vec<CandidateAnswer>> {
    let doc = &dialog.document;
    let gold = dialog.turns[slot].answer();
    let Some(span) = gold.span else {
        return Ok(Vec::new());
    };
    let i = locate_answer_sentence(doc, span)?;
    let gold_norm = normalize_text(&gold.text);

    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for s in sentence_window(i, doc.sentences.len()) {
        let sent = doc.sentences[s];
        let tokens: Vec<Token> = tokenize(doc.slice(sent))
            .into_iter()
            .map(|t| Token {
                begin: t.begin + sent.begin,
                end: t.end + sent.begin,
                text: t.text,
            })
            .collect();
        let words: Vec<&str> = tokens.iter().map(|t| t.text.as_str()).collect();
        let tags = tagger.tag(&words);
        let tagged: Vec<(&str, &str)> = words
            .iter()
            .copied()
            .zip(tags.iter().map(String::as_str))
            .collect();
        for np in extract_noun_phrases(&tagged) {
            if out.len() >= cap {
                return Ok(out);
            }
            let span = CharSpan::new(tokens[np.start].begin, tokens[np.end - 1].end);
            let text = doc.slice(span).to_string();
            let norm = normalize_text(&text);
            if norm.is_empty() || norm == gold_norm || !seen.insert(norm) {
                continue;
            }
            out.push(CandidateAnswer {
                text,
                span,
                source_sentence: s,
                slot,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Document, GoldAnswer, Turn};

    fn tagged<'a>(pairs: &[(&'a str, &'a str)]) -> Vec<(&'a str, &'a str)> {
        pairs.to_vec()
    }

    fn phrases(pairs: &[(&str, &str)]) -> Vec<String> {
        extract_noun_phrases(pairs)
            .into_iter()
            .map(|r| {
                pairs[r]
                    .iter()
                    .map(|(w, _)| *w)
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect()
    }

    #[test]
    fn chunk_examples() {
        let t = tagged(&[
            ("the", "DT"),
            ("red", "JJ"),
            ("car", "NN"),
            ("stopped", "VBD"),
        ]);
        assert_eq!(phrases(&t), ["the red car"]);
        let t = tagged(&[("run", "VB"), ("quickly", "RB"), ("now", "RB")]);
        assert!(phrases(&t).is_empty());
        let t = tagged(&[("John", "NNP"), ("met", "VBD"), ("Mary", "NNP")]);
        assert_eq!(phrases(&t), ["John", "Mary"]);
    }

    #[test]
    fn chunk_edge_cases() {
        // determiner and adjectives without a noun never match
        let t = tagged(&[("the", "DT"), ("big", "JJ"), ("ran", "VBD")]);
        assert!(phrases(&t).is_empty());
        // noun compounds are one maximal phrase
        let t = tagged(&[("a", "DT"), ("rock", "NN"), ("band", "NN"), ("tour", "NN")]);
        assert_eq!(phrases(&t), ["a rock band tour"]);
        // unknown tags break phrases without error
        let t = tagged(&[("x", "NN"), ("y", "???"), ("z", "NNS")]);
        assert_eq!(phrases(&t), ["x", "z"]);
    }

    fn fixture_tagger() -> DictionaryTagger {
        DictionaryTagger::new([
            ("the", "DT"),
            ("band", "NN"),
            ("album", "NN"),
            ("red", "JJ"),
            ("guitar", "NN"),
            ("tour", "NN"),
            ("drummer", "NN"),
            ("label", "NN"),
            ("city", "NN"),
            ("song", "NN"),
            ("studio", "NN"),
            ("singer", "NN"),
            ("stage", "NN"),
            ("a", "DT"),
        ])
        .with_fallback("VB")
    }

    fn dialog(text: &str, answer: &str) -> Dialog {
        let doc = Document::new("d", text);
        let b = text.find(answer).unwrap();
        Dialog {
            dialog_id: "d".into(),
            document: doc,
            turns: vec![Turn {
                turn_index: 0,
                question: "what?".into(),
                gold_answers: vec![GoldAnswer {
                    text: answer.into(),
                    span: Some(CharSpan::new(b, b + answer.len())),
                }],
                human_f1: 1.0,
            }],
        }
    }

    const TEXT: &str =
        "The band formed. The drummer left. The album sold. The tour ended. The singer rested.";

    #[test]
    fn window_clamped_at_start() {
        let d = dialog(TEXT, "The band");
        let c = mine_candidates(&d, 0, &fixture_tagger(), MAX_CANDIDATES).unwrap();
        let texts: Vec<_> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["The drummer"]);
        assert!(c.iter().all(|c| c.source_sentence <= 1 && c.slot == 0));
    }

    #[test]
    fn window_in_middle_uses_three_sentences() {
        let d = dialog(TEXT, "The album");
        let c = mine_candidates(&d, 0, &fixture_tagger(), MAX_CANDIDATES).unwrap();
        let texts: Vec<_> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["The drummer", "The tour"]);
        for cand in &c {
            assert_eq!(d.document.slice(cand.span), cand.text);
            assert!((1..=3).contains(&cand.source_sentence));
        }
    }

    #[test]
    fn duplicates_removed() {
        let d = dialog(
            "A song played. The guitar and the guitar rang. A stage lit.",
            "A stage",
        );
        let c = mine_candidates(&d, 0, &fixture_tagger(), MAX_CANDIDATES).unwrap();
        let texts: Vec<_> = c.iter().map(|c| c.text.as_str()).collect();
        assert_eq!(texts, ["The guitar"]);
    }

    #[test]
    fn unanswerable_yields_nothing() {
        let mut d = dialog(TEXT, "The band");
        d.turns[0].gold_answers = vec![GoldAnswer::unanswerable()];
        assert!(mine_candidates(&d, 0, &fixture_tagger(), 20)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn cap_applies() {
        let d = dialog(TEXT, "The album");
        assert_eq!(
            mine_candidates(&d, 0, &fixture_tagger(), 1).unwrap().len(),
            1
        );
    }

    #[test]
    fn heuristic_tagger_finds_phrases() {
        let tagger = HeuristicTagger::default();
        let words = [
            "In", "1963", "the", "famous", "band", "recorded", "Abbey", "Road", ".",
        ];
        let tags = tagger.tag(&words);
        let pairs: Vec<_> = words
            .iter()
            .copied()
            .zip(tags.iter().map(String::as_str))
            .collect();
        assert_eq!(phrases(&pairs), ["the famous band", "Abbey Road"]);
    }
}
