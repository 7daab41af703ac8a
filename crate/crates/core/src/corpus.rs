//! Conversational QA corpora: QuAC-format loading, sentence segmentation and
//! dialog-level dev/test splitting.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::eval::human_f1;
use crate::rng;

/// QuAC marks unanswerable turns with this literal answer text.
pub const NO_ANSWER: &str = "CANNOTANSWER";

/// Half-open byte range into a document's text. Always on `char` boundaries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CharSpan {
    pub begin: usize,
    pub end: usize,
}

impl CharSpan {
    pub fn new(begin: usize, end: usize) -> Self {
        Self { begin, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.begin
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.begin
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub text: String,
    pub sentences: Vec<CharSpan>,
}

impl Document {
    /// Builds a document, segmenting it with the default rule-based splitter.
    pub fn new(doc_id: impl Into<String>, text: impl Into<String>) -> Self {
        Self::with_segmenter(doc_id, text, &RuleSegmenter::default())
    }

    pub fn with_segmenter(
        doc_id: impl Into<String>,
        text: impl Into<String>,
        segmenter: &dyn SentenceSegmenter,
    ) -> Self {
        let text = text.into();
        let sentences = segmenter.segment(&text);
        Self {
            doc_id: doc_id.into(),
            text,
            sentences,
        }
    }

    pub fn slice(&self, span: CharSpan) -> &str {
        &self.text[span.begin..span.end]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoldAnswer {
    pub text: String,
    /// `None` for unanswerable turns.
    pub span: Option<CharSpan>,
}

impl GoldAnswer {
    pub fn unanswerable() -> Self {
        Self {
            text: NO_ANSWER.to_string(),
            span: None,
        }
    }

    pub fn is_unanswerable(&self) -> bool {
        self.span.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_index: usize,
    pub question: String,
    /// Reference answers. The first one is the dialog's own answer and is
    /// used as the training target.
    pub gold_answers: Vec<GoldAnswer>,
    pub human_f1: f64,
}

impl Turn {
    pub fn answer(&self) -> &GoldAnswer {
        &self.gold_answers[0]
    }

    pub fn reference_texts(&self) -> Vec<&str> {
        self.gold_answers.iter().map(|a| a.text.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dialog {
    pub dialog_id: String,
    pub document: Document,
    pub turns: Vec<Turn>,
}

impl Dialog {
    /// Real history questions `q_0 .. q_{k-1}` for turn `k`.
    pub fn history(&self, k: usize) -> Vec<&str> {
        self.turns[..k]
            .iter()
            .map(|t| t.question.as_str())
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let len = self.document.text.len();
        for (pos, turn) in self.turns.iter().enumerate() {
            if turn.turn_index != pos {
                return Err(Error::Validation(format!(
                    "dialog {}: turn at position {pos} has index {}",
                    self.dialog_id, turn.turn_index
                )));
            }
            if turn.gold_answers.is_empty() {
                return Err(Error::Validation(format!(
                    "dialog {} turn {pos}: no gold answers",
                    self.dialog_id
                )));
            }
            for ans in &turn.gold_answers {
                let Some(span) = ans.span else { continue };
                if span.begin > span.end
                    || span.end > len
                    || !self.document.text.is_char_boundary(span.begin)
                    || !self.document.text.is_char_boundary(span.end)
                {
                    return Err(Error::Validation(format!(
                        "dialog {} turn {pos}: answer span {}..{} outside document",
                        self.dialog_id, span.begin, span.end
                    )));
                }
                if self.document.slice(span) != ans.text {
                    return Err(Error::Validation(format!(
                        "dialog {} turn {pos}: answer text {:?} does not match document span {:?}",
                        self.dialog_id,
                        ans.text,
                        self.document.slice(span)
                    )));
                }
            }
        }
        Ok(())
    }
}

pub fn question_count(dialogs: &[Dialog]) -> usize {
    dialogs.iter().map(|d| d.turns.len()).sum()
}

// ---------------------------------------------------------------------------
// Sentence segmentation

pub trait SentenceSegmenter: Send + Sync {
    fn segment(&self, text: &str) -> Vec<CharSpan>;
}

/// Splits after `.`, `?` or `!` (plus closing quotes/brackets) when the next
/// non-space character is uppercase, unless the word before the period is a
/// known abbreviation.
#[derive(Debug, Clone)]
pub struct RuleSegmenter {
    abbreviations: BTreeSet<String>,
}

const ABBREVIATIONS: &[&str] = &[
    "apr", "aug", "capt", "co", "col", "corp", "dec", "dr", "e.g", "etc", "feb", "gen", "gov",
    "i.e", "inc", "jan", "jr", "jul", "jun", "lt", "ltd", "mar", "mr", "mrs", "ms", "mt", "no",
    "nov", "oct", "prof", "rev", "sen", "sep", "sept", "sgt", "sr", "st", "u.k", "u.s", "vol",
    "vs",
];

impl Default for RuleSegmenter {
    fn default() -> Self {
        Self {
            abbreviations: ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl RuleSegmenter {
    fn word_before(text: &str, dot: usize) -> &str {
        let head = &text[..dot];
        let start = head
            .char_indices()
            .rev()
            .find(|(_, c)| c.is_whitespace() || matches!(c, '(' | '"' | '\''))
            .map(|(i, c)| i + c.len_utf8())
            .unwrap_or(0);
        &head[start..]
    }
}

impl SentenceSegmenter for RuleSegmenter {
    fn segment(&self, text: &str) -> Vec<CharSpan> {
        let chars: Vec<(usize, char)> = text.char_indices().collect();
        let mut cuts = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            let (pos, c) = chars[i];
            if !matches!(c, '.' | '?' | '!') {
                i += 1;
                continue;
            }
            let mut j = i + 1;
            while j < chars.len() && matches!(chars[j].1, '.' | '?' | '!' | '"' | '\'' | ')' | ']')
            {
                j += 1;
            }
            let mut k = j;
            while k < chars.len() && chars[k].1.is_whitespace() {
                k += 1;
            }
            let follows_space = k > j;
            let next_upper = k < chars.len()
                && (chars[k].1.is_uppercase()
                    || (matches!(chars[k].1, '"' | '\'' | '(')
                        && chars.get(k + 1).is_some_and(|(_, c)| c.is_uppercase())));
            let abbreviation = c == '.'
                && self
                    .abbreviations
                    .contains(&Self::word_before(text, pos).to_lowercase());
            if follows_space && next_upper && !abbreviation {
                let end = chars.get(j).map_or(text.len(), |(p, _)| *p);
                cuts.push(end);
            }
            i = j;
        }
        cuts.push(text.len());

        let mut spans = Vec::new();
        let mut start = 0;
        for cut in cuts {
            let piece = &text[start..cut];
            let lead = piece.len() - piece.trim_start().len();
            let trimmed = piece.trim();
            if !trimmed.is_empty() {
                let b = start + lead;
                spans.push(CharSpan::new(b, b + trimmed.len()));
            }
            start = cut;
        }
        spans
    }
}

pub fn segment_sentences(text: &str) -> Vec<CharSpan> {
    RuleSegmenter::default().segment(text)
}

/// Index of the sentence holding the first character of `span`. A span
/// starting in inter-sentence whitespace belongs to the following sentence.
pub fn locate_answer_sentence(doc: &Document, span: CharSpan) -> Result<usize> {
    if span.begin >= doc.text.len() || span.end > doc.text.len() || span.begin > span.end {
        return Err(Error::InvalidArgument(format!(
            "span {}..{} outside document {} of length {}",
            span.begin,
            span.end,
            doc.doc_id,
            doc.text.len()
        )));
    }
    doc.sentences
        .iter()
        .position(|s| span.begin < s.end)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "span {}..{} follows the last sentence of {}",
                span.begin, span.end, doc.doc_id
            ))
        })
}

// ---------------------------------------------------------------------------
// QuAC JSON

#[derive(Debug, Deserialize, Serialize)]
struct QuacAnswer {
    text: String,
    answer_start: usize,
}

#[derive(Debug, Deserialize)]
struct QuacQa {
    question: String,
    #[serde(default)]
    answers: Vec<QuacAnswer>,
    #[serde(default)]
    orig_answer: Option<QuacAnswer>,
}

#[derive(Debug, Deserialize)]
struct QuacParagraph {
    id: String,
    context: String,
    qas: Vec<QuacQa>,
}

fn char_to_byte_table(text: &str) -> Vec<usize> {
    let mut table: Vec<usize> = text.char_indices().map(|(b, _)| b).collect();
    table.push(text.len());
    table
}

fn convert_answer(
    dialog_id: &str,
    turn: usize,
    context: &str,
    table: &[usize],
    ans: &QuacAnswer,
) -> Result<GoldAnswer> {
    if ans.text == NO_ANSWER {
        return Ok(GoldAnswer::unanswerable());
    }
    let n_chars = ans.text.chars().count();
    let (Some(&b), Some(&e)) = (
        table.get(ans.answer_start),
        table.get(ans.answer_start + n_chars),
    ) else {
        return Err(Error::Validation(format!(
            "dialog {dialog_id} turn {turn}: answer_start {} outside context",
            ans.answer_start
        )));
    };
    if context[b..e] != ans.text {
        return Err(Error::Validation(format!(
            "dialog {dialog_id} turn {turn}: answer text {:?} does not match context {:?}",
            ans.text,
            &context[b..e]
        )));
    }
    Ok(GoldAnswer {
        text: ans.text.clone(),
        span: Some(CharSpan::new(b, e)),
    })
}

fn convert_paragraph(p: QuacParagraph) -> Result<Dialog> {
    let full = p.context;
    let table = char_to_byte_table(&full);
    let text = full
        .strip_suffix(NO_ANSWER)
        .map(|s| s.trim_end().to_string())
        .unwrap_or_else(|| full.clone());
    let mut turns = Vec::with_capacity(p.qas.len());
    for (k, qa) in p.qas.into_iter().enumerate() {
        let mut raw: Vec<QuacAnswer> = Vec::new();
        if let Some(orig) = qa.orig_answer {
            raw.push(orig);
        }
        for a in qa.answers {
            if !raw
                .iter()
                .any(|r| r.text == a.text && r.answer_start == a.answer_start)
            {
                raw.push(a);
            }
        }
        if raw.is_empty() {
            return Err(Error::Validation(format!(
                "dialog {} turn {k}: no answers",
                p.id
            )));
        }
        let mut gold = Vec::with_capacity(raw.len());
        for a in &raw {
            let g = convert_answer(&p.id, k, &full, &table, a)?;
            if let Some(span) = g.span {
                if span.end > text.len() {
                    return Err(Error::Validation(format!(
                        "dialog {} turn {k}: answer overlaps the no-answer marker",
                        p.id
                    )));
                }
            }
            gold.push(g);
        }
        let refs: Vec<&str> = gold.iter().map(|g| g.text.as_str()).collect();
        let h = human_f1(&refs);
        turns.push(Turn {
            turn_index: k,
            question: qa.question,
            gold_answers: gold,
            human_f1: h,
        });
    }
    let dialog = Dialog {
        dialog_id: p.id.clone(),
        document: Document::new(p.id, text),
        turns,
    };
    dialog.validate()?;
    Ok(dialog)
}

/// Parses QuAC-format JSON (`{"data": [{"paragraphs": [{"id", "context",
/// "qas": [...]}]}]}`). Each paragraph is one dialog.
pub fn parse_quac(json: &str, source: &str) -> Result<Vec<Dialog>> {
    if json.trim().is_empty() {
        return Err(Error::Parse {
            context: source.to_string(),
            message: "empty input".into(),
        });
    }
    let root: Value = serde_json::from_str(json).map_err(|e| Error::Parse {
        context: source.to_string(),
        message: e.to_string(),
    })?;
    let articles = root
        .get("data")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::Parse {
            context: source.to_string(),
            message: "missing top-level \"data\" array".into(),
        })?;
    let mut dialogs = Vec::new();
    for (ai, article) in articles.iter().enumerate() {
        let paragraphs = article
            .get("paragraphs")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::Parse {
                context: format!("{source}: article {ai}"),
                message: "missing \"paragraphs\" array".into(),
            })?;
        for (pi, para) in paragraphs.iter().enumerate() {
            let name = para
                .get("id")
                .and_then(Value::as_str)
                .map(|s| format!("dialog {s}"))
                .unwrap_or_else(|| format!("article {ai} paragraph {pi}"));
            let p: QuacParagraph =
                serde_json::from_value(para.clone()).map_err(|e| Error::Parse {
                    context: format!("{source}: {name}"),
                    message: e.to_string(),
                })?;
            dialogs.push(convert_paragraph(p)?);
        }
    }
    Ok(dialogs)
}

pub fn load_corpus(path: &Path) -> Result<Vec<Dialog>> {
    let json = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_quac(&json, &path.display().to_string())
}

/// Serializes dialogs back into QuAC JSON, one article per dialog.
pub fn to_quac_json(dialogs: &[Dialog]) -> Value {
    let data: Vec<Value> = dialogs
        .iter()
        .map(|d| {
            let text = &d.document.text;
            let context = format!("{text} {NO_ANSWER}");
            let marker_start = text.chars().count() + 1;
            let qas: Vec<Value> = d
                .turns
                .iter()
                .map(|t| {
                    let answers: Vec<QuacAnswer> = t
                        .gold_answers
                        .iter()
                        .map(|a| QuacAnswer {
                            text: a.text.clone(),
                            answer_start: a
                                .span
                                .map_or(marker_start, |s| text[..s.begin].chars().count()),
                        })
                        .collect();
                    serde_json::json!({
                        "id": format!("{}_q#{}", d.dialog_id, t.turn_index),
                        "question": t.question,
                        "orig_answer": &answers[0],
                        "answers": &answers,
                    })
                })
                .collect();
            serde_json::json!({
                "title": d.document.doc_id,
                "paragraphs": [{"id": d.dialog_id, "context": context, "qas": qas}],
            })
        })
        .collect();
    serde_json::json!({ "data": data })
}

// ---------------------------------------------------------------------------
// Dev/test split

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub dev_dialog_ids: BTreeSet<String>,
    pub test_dialog_ids: BTreeSet<String>,
}

impl Split {
    pub fn side_counts(&self, dialogs: &[Dialog]) -> (usize, usize) {
        let mut dev = 0;
        let mut test = 0;
        for d in dialogs {
            if self.dev_dialog_ids.contains(&d.dialog_id) {
                dev += d.turns.len();
            } else if self.test_dialog_ids.contains(&d.dialog_id) {
                test += d.turns.len();
            }
        }
        (dev, test)
    }

    pub fn select<'a>(&self, dialogs: &'a [Dialog], test: bool) -> Vec<&'a Dialog> {
        let side = if test {
            &self.test_dialog_ids
        } else {
            &self.dev_dialog_ids
        };
        dialogs
            .iter()
            .filter(|d| side.contains(&d.dialog_id))
            .collect()
    }
}

/// Dialog-level split with near-equal question counts: shuffle with the seed,
/// greedily give each dialog to the lighter side, then apply single moves or
/// pairwise swaps while they shrink the imbalance.
pub fn split_dev_test(dialogs: &[Dialog], seed: u64) -> Result<Split> {
    if dialogs.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "need at least 2 dialogs to split, got {}",
            dialogs.len()
        )));
    }
    let mut seen = BTreeSet::new();
    for d in dialogs {
        if !seen.insert(d.dialog_id.as_str()) {
            return Err(Error::Validation(format!(
                "duplicate dialog id {}",
                d.dialog_id
            )));
        }
    }

    let mut order: Vec<usize> = (0..dialogs.len()).collect();
    let mut rng = rng::stream(seed, "split", "", 0);
    order.shuffle(&mut rng);

    let sizes: Vec<i64> = order
        .iter()
        .map(|&i| dialogs[i].turns.len() as i64)
        .collect();
    // side[p] is true for test
    let mut side = vec![false; order.len()];
    let (mut dev, mut test) = (0i64, 0i64);
    for (p, &n) in sizes.iter().enumerate() {
        if test < dev {
            side[p] = true;
            test += n;
        } else {
            dev += n;
        }
    }
    rebalance(&sizes, &mut side, &mut dev, &mut test);

    let mut split = Split {
        seed,
        dev_dialog_ids: BTreeSet::new(),
        test_dialog_ids: BTreeSet::new(),
    };
    for (p, &i) in order.iter().enumerate() {
        let id = dialogs[i].dialog_id.clone();
        if side[p] {
            split.test_dialog_ids.insert(id);
        } else {
            split.dev_dialog_ids.insert(id);
        }
    }
    Ok(split)
}

fn rebalance(sizes: &[i64], side: &mut [bool], dev: &mut i64, test: &mut i64) {
    loop {
        let diff = *dev - *test;
        if diff == 0 {
            return;
        }
        let heavy = diff < 0; // side value of the heavier side
        let d = diff.abs();
        // first position (in shuffled order) of each size on each side
        let mut first_heavy = std::collections::BTreeMap::new();
        let mut first_light = std::collections::BTreeMap::new();
        for (p, &n) in sizes.iter().enumerate() {
            let map = if side[p] == heavy {
                &mut first_heavy
            } else {
                &mut first_light
            };
            map.entry(n).or_insert(p);
        }
        // (new imbalance, heavy position, optional light position)
        let mut best: Option<(i64, usize, Option<usize>)> = None;
        let mut consider = |score: i64, h: usize, l: Option<usize>| {
            let key = (score, h, l.unwrap_or(usize::MAX));
            if best.is_none_or(|(s, bh, bl)| key < (s, bh, bl.unwrap_or(usize::MAX))) {
                best = Some((score, h, l));
            }
        };
        for (&x, &h) in &first_heavy {
            consider((d - 2 * x).abs(), h, None);
            for (&y, &l) in &first_light {
                if x > y {
                    consider((d - 2 * (x - y)).abs(), h, Some(l));
                }
            }
        }
        match best {
            Some((score, h, l)) if score < d => {
                let sign = if heavy { 1 } else { -1 };
                side[h] = !side[h];
                let mut delta = sizes[h];
                if let Some(l) = l {
                    side[l] = !side[l];
                    delta -= sizes[l];
                }
                // move `delta` questions from the heavy side to the light side
                *dev += sign * delta;
                *test -= sign * delta;
            }
            _ => return,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dialog(id: &str, n: usize) -> Dialog {
        Dialog {
            dialog_id: id.into(),
            document: Document::new(id, "Some text."),
            turns: (0..n)
                .map(|k| Turn {
                    turn_index: k,
                    question: format!("q{k}"),
                    gold_answers: vec![GoldAnswer::unanswerable()],
                    human_f1: 1.0,
                })
                .collect(),
        }
    }

    #[test]
    fn segments_simple_sentences() {
        let spans = segment_sentences("A. B.");
        assert_eq!(spans, vec![CharSpan::new(0, 2), CharSpan::new(3, 5)]);
        assert!(segment_sentences("").is_empty());
        assert_eq!(
            segment_sentences("No terminal punctuation"),
            vec![CharSpan::new(0, 23)]
        );
    }

    #[test]
    fn abbreviations_do_not_split() {
        let text = "Dr. Smith met Mr. Jones in St. Louis. They talked.";
        let spans = segment_sentences(text);
        assert_eq!(spans.len(), 2);
        assert_eq!(
            &text[spans[0].begin..spans[0].end],
            "Dr. Smith met Mr. Jones in St. Louis."
        );
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(segment_sentences("It cost 3.5 dollars. ok then.").len(), 1);
        assert_eq!(segment_sentences("Really? Yes! \"Fine.\" Done").len(), 4);
    }

    #[test]
    fn locate_uses_first_character() {
        let doc = Document::new("d", "One two. Three four. Five six. Seven.");
        assert_eq!(doc.sentences.len(), 4);
        assert_eq!(
            locate_answer_sentence(&doc, CharSpan::new(0, 3)).unwrap(),
            0
        );
        // starts in sentence 2, ends in sentence 3
        let s2 = doc.sentences[2];
        let s3 = doc.sentences[3];
        assert_eq!(
            locate_answer_sentence(&doc, CharSpan::new(s2.begin + 2, s3.end)).unwrap(),
            2
        );
        // exact boundary start
        assert_eq!(
            locate_answer_sentence(&doc, CharSpan::new(s3.begin, s3.begin + 1)).unwrap(),
            3
        );
        assert!(locate_answer_sentence(&doc, CharSpan::new(100, 101)).is_err());
    }

    #[test]
    fn split_two_equal_dialogs() {
        let ds = vec![dialog("a", 3), dialog("b", 3)];
        let s = split_dev_test(&ds, 7).unwrap();
        assert_eq!(s.dev_dialog_ids.len(), 1);
        assert_eq!(s.test_dialog_ids.len(), 1);
        assert_eq!(s.side_counts(&ds), (3, 3));
        assert_eq!(s, split_dev_test(&ds, 7).unwrap());
    }

    #[test]
    fn split_rejects_single_dialog() {
        assert!(split_dev_test(&[dialog("a", 2)], 1).is_err());
    }

    #[test]
    fn rebalance_fixes_greedy_leftover() {
        // greedy alone on [5, 4, 1] yields 5 | 4+1; sizes chosen so a swap is needed
        let sizes = [7, 6, 2, 1];
        let mut side = vec![false, true, true, false];
        let (mut dev, mut test) = (8, 8);
        rebalance(&sizes, &mut side, &mut dev, &mut test);
        assert_eq!((dev, test), (8, 8));
        let sizes = [10, 4, 4];
        let mut side = vec![false, true, true];
        let (mut dev, mut test) = (10, 8);
        rebalance(&sizes, &mut side, &mut dev, &mut test);
        assert_eq!((dev - test).abs(), 2);
    }
}
