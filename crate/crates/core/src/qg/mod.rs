//! Conversational question generation: generator input serialization,
//! training, per-slot synthetic question generation and question pools.

mod metrics;
mod neural;
mod template;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::answer_mining::CandidateAnswer;
use crate::corpus::{locate_answer_sentence, CharSpan, Dialog, Document, NO_ANSWER};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{tokenize, Token};

pub use metrics::{qg_metrics, QgMetrics};
pub use neural::{NeuralGenerator, NeuralGeneratorConfig};
pub use template::TemplateGenerator;

pub const ANSWER_MARK: &str = "[ANSWER]";
pub const HISTORY_MARK: &str = "[HISTORY]";
pub const SEP_MARK: &str = "[SEP]";
pub const DOC_MARK: &str = "[DOC]";

/// The answer a question should be generated for.
#[derive(Debug, Clone, Copy)]
pub struct AnswerRef<'a> {
    pub text: &'a str,
    /// Location in the document. Without it the text is searched for;
    /// [`NO_ANSWER`] anchors the window at the start of the document.
    pub span: Option<CharSpan>,
}

impl<'a> AnswerRef<'a> {
    pub fn new(text: &'a str, span: Option<CharSpan>) -> Self {
        Self { text, span }
    }
}

/// Token range `[lo, hi)` of at most `budget` tokens around `center`,
/// split evenly on both sides and shifted inward at the document edges.
fn centered_window(center: (usize, usize), n: usize, budget: usize) -> (usize, usize) {
    let (a, b) = center;
    if b - a >= budget {
        return (a, a + budget);
    }
    let extra = budget - (b - a);
    let mut left = extra / 2;
    let mut right = extra - left;
    if left > a {
        right += left - a;
        left = a;
    }
    if b + right > n {
        let over = b + right - n;
        right = n - b;
        left = (left + over).min(a);
    }
    (a - left, b + right)
}

/// `[ANSWER] a [HISTORY] q_0 [SEP] q_1 ... [DOC] window`. The document window
/// is centered on the answer sentence and sized to fill `budget` tokens.
pub fn serialize_generator_input<S: AsRef<str>>(
    doc: &Document,
    history: &[S],
    answer: AnswerRef<'_>,
    budget: usize,
) -> Result<Vec<String>> {
    let mut out = vec![ANSWER_MARK.to_string()];
    out.extend(tokenize(answer.text).into_iter().map(|t| t.text));
    out.push(HISTORY_MARK.to_string());
    for (i, q) in history.iter().enumerate() {
        if i > 0 {
            out.push(SEP_MARK.to_string());
        }
        out.extend(tokenize(q.as_ref()).into_iter().map(|t| t.text));
    }
    out.push(DOC_MARK.to_string());

    let doc_tokens: Vec<Token> = tokenize(&doc.text);
    let span = match answer.span {
        Some(s) => Some(s),
        None if answer.text == NO_ANSWER => None,
        None => {
            let b = doc.text.find(answer.text).ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "answer {:?} not found in document {}",
                    answer.text, doc.doc_id
                ))
            })?;
            Some(CharSpan::new(b, b + answer.text.len()))
        }
    };
    let remaining = budget.saturating_sub(out.len());
    if doc_tokens.is_empty() || remaining == 0 {
        return Ok(out);
    }
    let to_tokens = |s: CharSpan| {
        let a = doc_tokens.partition_point(|t| t.end <= s.begin);
        let b = doc_tokens.partition_point(|t| t.begin < s.end).max(a + 1);
        (a.min(doc_tokens.len() - 1), b.min(doc_tokens.len()))
    };
    let center = match span {
        None => (0, 0),
        Some(s) => {
            let sentence = locate_answer_sentence(doc, s)?;
            let sent = to_tokens(doc.sentences[sentence]);
            if sent.1 - sent.0 <= remaining {
                sent
            } else {
                to_tokens(s)
            }
        }
    };
    let (lo, hi) = centered_window(center, doc_tokens.len(), remaining);
    out.extend(doc_tokens[lo..hi].iter().map(|t| t.text.clone()));
    Ok(out)
}

/// Teacher-forced pair: serialized input and target question tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: Vec<String>,
    pub target: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub max_new_tokens: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self { max_new_tokens: 32 }
    }
}

/// A trainable sequence-to-sequence question generator.
pub trait GeneratorBackend: Send + Sync {
    /// Fixes vocabulary and initial weights from the training pairs.
    fn prepare(&mut self, pairs: &[TrainingPair], seed: u64) -> Result<()>;
    /// Mean per-token teacher-forced cross-entropy of one pair.
    fn loss(&self, pair: &TrainingPair) -> f64;
    /// One optimizer step on a batch; returns the batch's mean loss.
    fn train_batch(&mut self, batch: &[&TrainingPair]) -> Result<f64>;
    /// Greedy decoding.
    fn generate(&self, input: &[String], decode: &DecodeConfig) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub input_budget: usize,
    pub seed: u64,
}

impl Default for QgTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            input_budget: 256,
            seed: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgTrainLog {
    pub pairs: usize,
    pub loss_before: f64,
    pub epoch_losses: Vec<f64>,
    pub loss_after: f64,
}

/// One pair per turn: `(D, H_k, a_k) -> q_k`.
pub fn training_pairs(dialogs: &[Dialog], input_budget: usize) -> Result<Vec<TrainingPair>> {
    let mut pairs = Vec::new();
    for d in dialogs {
        for (k, turn) in d.turns.iter().enumerate() {
            let a = turn.answer();
            let input = serialize_generator_input(
                &d.document,
                &d.history(k),
                AnswerRef::new(&a.text, a.span),
                input_budget,
            )?;
            let target = tokenize(&turn.question)
                .into_iter()
                .map(|t| t.text)
                .collect();
            pairs.push(TrainingPair { input, target });
        }
    }
    Ok(pairs)
}

fn mean_loss(backend: &dyn GeneratorBackend, pairs: &[TrainingPair]) -> f64 {
    pairs.iter().map(|p| backend.loss(p)).sum::<f64>() / pairs.len() as f64
}

pub fn train_cqg(
    backend: &mut dyn GeneratorBackend,
    dialogs: &[Dialog],
    cfg: &QgTrainConfig,
) -> Result<QgTrainLog> {
    let pairs = training_pairs(dialogs, cfg.input_budget)?;
    if pairs.is_empty() {
        return Err(Error::InvalidArgument(
            "question generator needs at least one training turn".into(),
        ));
    }
    backend.prepare(&pairs, cfg.seed)?;
    let loss_before = mean_loss(backend, &pairs);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    for epoch in 0..cfg.epochs {
        let mut rng = rng::stream(cfg.seed, "train-qg", "", epoch as u64);
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<&TrainingPair> = chunk.iter().map(|&i| &pairs[i]).collect();
            total += backend.train_batch(&batch)? * batch.len() as f64;
        }
        epoch_losses.push(total / pairs.len() as f64);
    }
    let loss_after = mean_loss(backend, &pairs);
    Ok(QgTrainLog {
        pairs: pairs.len(),
        loss_before,
        epoch_losses,
        loss_after,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticQuestion {
    pub text: String,
    pub slot: usize,
    pub candidate: CandidateAnswer,
    pub score: Option<f64>,
}

/// JSONL row for persisted synthetic questions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticRecord {
    pub dialog_id: String,
    pub slot: usize,
    pub text: String,
    pub candidate_text: String,
    pub candidate_begin: usize,
    pub candidate_end: usize,
}

impl SyntheticRecord {
    pub fn new(dialog_id: &str, q: &SyntheticQuestion) -> Self {
        Self {
            dialog_id: dialog_id.to_string(),
            slot: q.slot,
            text: q.text.clone(),
            candidate_text: q.candidate.text.clone(),
            candidate_begin: q.candidate.span.begin,
            candidate_end: q.candidate.span.end,
        }
    }

    pub fn question(&self, doc: &Document) -> Result<SyntheticQuestion> {
        let span = CharSpan::new(self.candidate_begin, self.candidate_end);
        Ok(SyntheticQuestion {
            text: self.text.clone(),
            slot: self.slot,
            candidate: CandidateAnswer {
                text: self.candidate_text.clone(),
                span,
                source_sentence: locate_answer_sentence(doc, span)?,
                slot: self.slot,
            },
            score: None,
        })
    }
}

/// Generates one question per candidate at `slot`, conditioned on the real
/// questions `q_0 ..= q_slot`.
pub fn generate_slot_questions(
    backend: &dyn GeneratorBackend,
    dialog: &Dialog,
    slot: usize,
    candidates: &[CandidateAnswer],
    decode: &DecodeConfig,
    input_budget: usize,
) -> Result<Vec<SyntheticQuestion>> {
    let history = dialog.history(slot + 1);
    let mut out = Vec::with_capacity(candidates.len());
    for c in candidates {
        let input = serialize_generator_input(
            &dialog.document,
            &history,
            AnswerRef::new(&c.text, Some(c.span)),
            input_budget,
        )?;
        let text = backend.generate(&input, decode)?;
        let text = text.trim();
        if text.is_empty() {
            continue;
        }
        out.push(SyntheticQuestion {
            text: text.to_string(),
            slot,
            candidate: c.clone(),
            score: None,
        });
    }
    Ok(out)
}

/// Real history plus every synthetic question eligible for turn `k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuestionPool {
    pub dialog_id: String,
    pub k: usize,
    pub real: Vec<String>,
    pub synthetic: Vec<SyntheticQuestion>,
}

/// Pool for turn `k`: `q_0 .. q_{k-1}` and all synthetics with slot `< k`,
/// ordered by slot then generation order.
pub fn build_pool(dialog: &Dialog, k: usize, synthetic: &[SyntheticQuestion]) -> QuestionPool {
    let mut by_slot: BTreeMap<usize, Vec<&SyntheticQuestion>> = BTreeMap::new();
    for q in synthetic.iter().filter(|q| q.slot < k) {
        by_slot.entry(q.slot).or_default().push(q);
    }
    QuestionPool {
        dialog_id: dialog.dialog_id.clone(),
        k,
        real: dialog.history(k).into_iter().map(str::to_string).collect(),
        synthetic: by_slot.into_values().flatten().cloned().collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{GoldAnswer, Turn};

    fn doc() -> Document {
        Document::new(
            "d",
            "Alpha one two. Beta three four. Gamma five six. Delta seven eight. Epsilon nine ten.",
        )
    }

    #[test]
    fn empty_history_layout() {
        let d = doc();
        let toks =
            serialize_generator_input::<&str>(&d, &[], AnswerRef::new("Gamma", None), 6).unwrap();
        assert_eq!(toks[..3], ["[ANSWER]", "Gamma", "[HISTORY]"]);
        assert_eq!(toks[3], "[DOC]");
        // 2 tokens left for the window, taken from the answer sentence
        assert_eq!(toks[4..], ["Gamma", "five"]);
    }

    #[test]
    fn separators_between_history_questions() {
        let d = doc();
        let toks = serialize_generator_input(
            &d,
            &["who one", "who two"],
            AnswerRef::new("Beta", None),
            100,
        )
        .unwrap();
        let s = toks.join(" ");
        assert!(s.starts_with("[ANSWER] Beta [HISTORY] who one [SEP] who two [DOC] Alpha"));
        assert_eq!(toks.iter().filter(|t| *t == SEP_MARK).count(), 1);
    }

    #[test]
    fn window_contains_answer_sentence() {
        let d = doc();
        // prefix is 4 tokens; 8 window tokens around sentence 3 ("Delta seven eight .")
        let toks =
            serialize_generator_input::<&str>(&d, &[], AnswerRef::new("seven", None), 12).unwrap();
        let window = toks[4..].join(" ");
        assert_eq!(toks.len(), 12);
        assert!(window.contains("Delta seven eight ."), "{window}");
        assert_eq!(window, "six . Delta seven eight . Epsilon nine");
    }

    #[test]
    fn missing_answer_is_an_error() {
        let d = doc();
        assert!(
            serialize_generator_input::<&str>(&d, &[], AnswerRef::new("Omega", None), 20).is_err()
        );
        assert!(
            serialize_generator_input::<&str>(&d, &[], AnswerRef::new(NO_ANSWER, None), 20).is_ok()
        );
    }

    #[test]
    fn window_edges() {
        assert_eq!(centered_window((0, 2), 10, 6), (0, 6));
        assert_eq!(centered_window((8, 10), 10, 6), (4, 10));
        assert_eq!(centered_window((4, 6), 10, 6), (2, 8));
        assert_eq!(centered_window((2, 9), 10, 3), (2, 5));
        assert_eq!(centered_window((0, 3), 3, 10), (0, 3));
    }

    fn synthetic(slot: usize, text: &str) -> SyntheticQuestion {
        SyntheticQuestion {
            text: text.into(),
            slot,
            candidate: CandidateAnswer {
                text: "x".into(),
                span: CharSpan::new(0, 1),
                source_sentence: 0,
                slot,
            },
            score: None,
        }
    }

    fn dialog(n: usize) -> Dialog {
        Dialog {
            dialog_id: "d".into(),
            document: doc(),
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
    fn pool_counts() {
        let d = dialog(4);
        let syn: Vec<_> = (0..3)
            .flat_map(|s| [synthetic(s, "a"), synthetic(s, "b")])
            .collect();
        let p0 = build_pool(&d, 0, &syn);
        assert!(p0.real.is_empty() && p0.synthetic.is_empty());
        let p1 = build_pool(&d, 1, &syn);
        assert_eq!(p1.real, ["q0"]);
        assert!(p1.synthetic.iter().all(|q| q.slot == 0));
        assert_eq!(p1.synthetic.len(), 2);
        let p2 = build_pool(&d, 2, &syn);
        assert_eq!((p2.real.len(), p2.synthetic.len()), (2, 4));
    }

    #[test]
    fn training_pair_count_matches_turns() {
        let ds = vec![dialog(3), dialog(2)];
        assert_eq!(training_pairs(&ds, 64).unwrap().len(), 5);
    }
}
