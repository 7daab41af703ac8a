//! Extractive reader: input serialization, answer distributions, losses and
//! span decoding. Training lives in [`train`], the reference reader in
//! [`reader`].

pub mod reader;
pub mod train;

use serde::{Deserialize, Serialize};

use crate::corpus::{CharSpan, Document, GoldAnswer, NO_ANSWER};
use crate::error::{Error, Result};
use crate::nn::softmax;
use crate::text::tokenize;

pub use reader::{FeatureSet, LinearSpanReader, ReaderBackend};
pub use train::{
    predict, train_qa, train_step, Prediction, StepLog, TrainConfig, TrainExample, TrainingLog,
    TurnAugmentation,
};

pub const HISTORY_MARK: &str = "[H]";
pub const QUESTION_MARK: &str = "[Q]";
pub const DOCUMENT_MARK: &str = "[D]";
pub const SENTINEL: &str = "[NOANSWER]";

/// Floor for probabilities inside logarithms.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Segment {
    Marker,
    /// Index among the history entries kept in the input, oldest first.
    History(usize),
    Question,
    Document,
    Sentinel,
}

/// Serialized reader input. Answer positions are the kept document tokens
/// followed by the no-answer sentinel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderInput {
    pub tokens: Vec<String>,
    pub segments: Vec<Segment>,
    /// Input index of each answer position.
    pub answer_positions: Vec<usize>,
    /// Document byte span of each kept document token.
    pub doc_spans: Vec<CharSpan>,
    pub history_kept: usize,
}

impl ReaderInput {
    /// Number of document answer positions; also the sentinel's position.
    pub fn n_doc(&self) -> usize {
        self.doc_spans.len()
    }

    pub fn n_positions(&self) -> usize {
        self.doc_spans.len() + 1
    }

    /// Document byte range covered by a span, or `None` for the sentinel.
    pub fn char_span(&self, span: AnswerSpan) -> Option<CharSpan> {
        if span.start_pos >= self.n_doc() || span.end_pos >= self.n_doc() {
            return None;
        }
        Some(CharSpan::new(
            self.doc_spans[span.start_pos].begin,
            self.doc_spans[span.end_pos].end,
        ))
    }

    pub fn span_text(&self, doc: &Document, span: AnswerSpan) -> String {
        self.char_span(span)
            .map_or_else(|| NO_ANSWER.to_string(), |s| doc.slice(s).to_string())
    }

    /// Token span of a gold answer. Unanswerable answers, and answers cut
    /// off by truncation, map to the sentinel.
    pub fn gold_span(&self, answer: &GoldAnswer) -> AnswerSpan {
        let sentinel = AnswerSpan::sentinel(self.n_doc());
        let Some(span) = answer.span else {
            return sentinel;
        };
        let start = self.doc_spans.partition_point(|t| t.end <= span.begin);
        let end = self.doc_spans.partition_point(|t| t.begin < span.end);
        if start >= self.n_doc() || end == 0 || end <= start {
            return sentinel;
        }
        if self.doc_spans[self.n_doc() - 1].end < span.end {
            return sentinel;
        }
        AnswerSpan {
            start_pos: start,
            end_pos: end - 1,
        }
    }
}

/// `[H] h_0 [H] h_1 ... [Q] q [D] doc [NOANSWER]`. Over budget, the oldest
/// history entries go first, then the document tail.
pub fn serialize_reader_input<S: AsRef<str>>(
    question: &str,
    history: &[S],
    doc: &Document,
    budget: usize,
) -> Result<ReaderInput> {
    let q_tokens: Vec<String> = tokenize(question).into_iter().map(|t| t.text).collect();
    let fixed = q_tokens.len() + 3; // [Q], [D], sentinel
    if fixed > budget {
        return Err(Error::InvalidArgument(format!(
            "question of {} tokens does not fit a reader budget of {budget}",
            q_tokens.len()
        )));
    }
    let doc_tokens = tokenize(&doc.text);
    let doc_keep = doc_tokens.len().min(budget - fixed);
    let mut room = budget - fixed - doc_keep;

    let hist_tokens: Vec<Vec<String>> = history
        .iter()
        .map(|h| tokenize(h.as_ref()).into_iter().map(|t| t.text).collect())
        .collect();
    let mut first_kept = hist_tokens.len();
    while first_kept > 0 && hist_tokens[first_kept - 1].len() < room {
        room -= hist_tokens[first_kept - 1].len() + 1;
        first_kept -= 1;
    }

    let mut tokens = Vec::with_capacity(budget);
    let mut segments = Vec::with_capacity(budget);
    for (i, h) in hist_tokens[first_kept..].iter().enumerate() {
        tokens.push(HISTORY_MARK.to_string());
        segments.push(Segment::Marker);
        for t in h {
            tokens.push(t.clone());
            segments.push(Segment::History(i));
        }
    }
    tokens.push(QUESTION_MARK.to_string());
    segments.push(Segment::Marker);
    for t in q_tokens {
        tokens.push(t);
        segments.push(Segment::Question);
    }
    tokens.push(DOCUMENT_MARK.to_string());
    segments.push(Segment::Marker);
    let mut answer_positions = Vec::with_capacity(doc_keep + 1);
    let mut doc_spans = Vec::with_capacity(doc_keep);
    for t in &doc_tokens[..doc_keep] {
        answer_positions.push(tokens.len());
        doc_spans.push(CharSpan::new(t.begin, t.end));
        tokens.push(t.text.clone());
        segments.push(Segment::Document);
    }
    answer_positions.push(tokens.len());
    tokens.push(SENTINEL.to_string());
    segments.push(Segment::Sentinel);

    Ok(ReaderInput {
        tokens,
        segments,
        answer_positions,
        doc_spans,
        history_kept: hist_tokens.len() - first_kept,
    })
}

/// Start and end distributions over answer positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnswerDistribution {
    pub start: Vec<f64>,
    pub end: Vec<f64>,
}

impl AnswerDistribution {
    pub fn new(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        for (name, head) in [("start", &start), ("end", &end)] {
            let sum: f64 = head.iter().sum();
            if head.is_empty()
                || head.iter().any(|p| *p < 0.0 || !p.is_finite())
                || (sum - 1.0).abs() > 1e-6
            {
                return Err(Error::InvalidArgument(format!(
                    "{name} head is not a probability vector (sum {sum})"
                )));
            }
        }
        if start.len() != end.len() {
            return Err(Error::InvalidArgument(format!(
                "start head has {} positions, end head {}",
                start.len(),
                end.len()
            )));
        }
        Ok(Self { start, end })
    }

    pub fn from_logits(start: &[f64], end: &[f64]) -> Self {
        Self {
            start: softmax(start),
            end: softmax(end),
        }
    }

    pub fn len(&self) -> usize {
        self.start.len()
    }

    pub fn is_empty(&self) -> bool {
        self.start.is_empty()
    }
}

/// Inclusive token span over answer positions; `(n, n)` with `n` the number
/// of document positions is the no-answer sentinel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerSpan {
    pub start_pos: usize,
    pub end_pos: usize,
}

impl AnswerSpan {
    pub fn sentinel(n_doc: usize) -> Self {
        Self {
            start_pos: n_doc,
            end_pos: n_doc,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_ce: f64,
    pub l_cons: f64,
    pub l_total: f64,
}

/// Mean over heads of `-ln p[gold]`, floored at [`PROB_FLOOR`].
pub fn ce_loss(dist: &AnswerDistribution, gold: AnswerSpan) -> f64 {
    let s = dist.start[gold.start_pos].max(PROB_FLOOR);
    let e = dist.end[gold.end_pos].max(PROB_FLOOR);
    -(s.ln() + e.ln()) / 2.0
}

fn kl(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(pi, _)| **pi > 0.0)
        .map(|(pi, qi)| pi * (pi.ln() - qi.max(PROB_FLOOR).ln()))
        .sum::<f64>()
        .max(0.0)
}

/// Mean over heads of `KL(real || aug)`.
pub fn consistency_loss(real: &AnswerDistribution, aug: &AnswerDistribution) -> Result<f64> {
    if real.start.len() != aug.start.len() || real.end.len() != aug.end.len() {
        return Err(Error::InvalidArgument(format!(
            "distributions over {} and {} positions",
            real.len(),
            aug.len()
        )));
    }
    Ok((kl(&real.start, &aug.start) + kl(&real.end, &aug.end)) / 2.0)
}

/// `l_ce + lambda * l_cons` for turns at or past `tau`; `l_ce` alone before.
pub fn total_loss(l_ce: f64, l_cons: f64, lambda: f64, k: usize, tau: usize) -> LossBreakdown {
    if k >= tau {
        LossBreakdown {
            l_ce,
            l_cons,
            l_total: l_ce + lambda * l_cons,
        }
    } else {
        LossBreakdown {
            l_ce,
            l_cons: 0.0,
            l_total: l_ce,
        }
    }
}

/// Best `(s, e)` by `start[s] * end[e]` over document spans with
/// `s <= e < s + max_answer_len`, plus the sentinel pair. Ties go to the
/// smaller `s`, then the smaller `e`.
pub fn decode_span(dist: &AnswerDistribution, max_answer_len: usize) -> AnswerSpan {
    let n = dist.len() - 1;
    let mut best = AnswerSpan::sentinel(n);
    let mut best_score = f64::NEG_INFINITY;
    for s in 0..n {
        let hi = n.min(s + max_answer_len);
        for e in s..hi {
            let score = dist.start[s] * dist.end[e];
            if score > best_score {
                best_score = score;
                best = AnswerSpan {
                    start_pos: s,
                    end_pos: e,
                };
            }
        }
    }
    if dist.start[n] * dist.end[n] > best_score {
        best = AnswerSpan::sentinel(n);
    }
    best
}
