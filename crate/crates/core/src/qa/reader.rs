//! Reader backends. [`LinearSpanReader`] scores every answer position with a
//! linear function of lexical-overlap features, one weight vector per head.

use std::collections::HashSet;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{AnswerDistribution, ReaderInput, Segment};
use crate::error::{Error, Result};
use crate::rng;
use crate::text::is_stopword;

/// A differentiable start/end scorer over [`ReaderInput`] answer positions.
pub trait ReaderBackend {
    type Cache;

    fn params(&self) -> &[f64];
    fn params_mut(&mut self) -> &mut [f64];

    /// Distribution plus whatever the backward pass needs.
    fn forward(&self, input: &ReaderInput) -> (AnswerDistribution, Self::Cache);

    /// Accumulates parameter gradients into `grad` given gradients with
    /// respect to the start and end logits.
    fn backward(&self, cache: &Self::Cache, d_start: &[f64], d_end: &[f64], grad: &mut [f64]);

    /// Forward pass whose output is a constant: nothing is kept for
    /// backpropagation.
    fn predict(&self, input: &ReaderInput) -> AnswerDistribution {
        self.forward(input).0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSet {
    /// sentinel, question overlap in window, history overlap in window
    Minimal,
    /// Minimal plus token-level question match, most-recent-history overlap,
    /// question word before, boundary after and sentence-level question overlap.
    Full,
}

impl FeatureSet {
    pub fn width(self) -> usize {
        match self {
            FeatureSet::Minimal => 3,
            FeatureSet::Full => 8,
        }
    }
}

impl std::str::FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "minimal" => Ok(Self::Minimal),
            "full" => Ok(Self::Full),
            other => Err(Error::Config(format!(
                "unknown reader feature set {other:?} (expected minimal or full)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpanReader {
    pub features: FeatureSet,
    pub window: usize,
    /// Start-head weights followed by end-head weights.
    pub weights: Vec<f64>,
}

fn content(word: &str) -> Option<String> {
    let w = word.to_lowercase();
    let first = w.chars().next()?;
    (first.is_alphanumeric() && !is_stopword(&w)).then_some(w)
}

fn is_boundary(word: &str) -> bool {
    matches!(word, "." | "?" | "!" | "," | ";" | ":")
}

impl LinearSpanReader {
    pub fn new(features: FeatureSet, seed: u64, init_scale: f64) -> Self {
        let mut rng = rng::stream(seed, "reader-init", "", 0);
        let weights = (0..2 * features.width())
            .map(|_| rng.gen_range(-init_scale..=init_scale))
            .collect();
        Self {
            features,
            window: 3,
            weights,
        }
    }

    pub fn with_weights(features: FeatureSet, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != 2 * features.width() {
            return Err(Error::InvalidArgument(format!(
                "{features:?} reader needs {} weights, got {}",
                2 * features.width(),
                weights.len()
            )));
        }
        Ok(Self {
            features,
            window: 3,
            weights,
        })
    }

    /// Feature rows, one per answer position (documents first, sentinel last).
    pub fn featurize(&self, input: &ReaderInput) -> Vec<Vec<f64>> {
        let width = self.features.width();
        let mut question = HashSet::new();
        let mut history: Vec<HashSet<String>> = vec![HashSet::new(); input.history_kept];
        for (tok, seg) in input.tokens.iter().zip(&input.segments) {
            match seg {
                Segment::Question => {
                    question.extend(content(tok));
                }
                Segment::History(i) => {
                    history[*i].extend(content(tok));
                }
                _ => {}
            }
        }
        let all_history: HashSet<&String> = history.iter().flatten().collect();
        let last_history = history.last();

        let n = input.n_doc();
        let doc: Vec<&str> = input.answer_positions[..n]
            .iter()
            .map(|&i| input.tokens[i].as_str())
            .collect();
        let doc_content: Vec<Option<String>> = doc.iter().map(|w| content(w)).collect();

        // sentence id per document token, split after . ? !
        let mut sentence = Vec::with_capacity(n);
        let mut sid = 0usize;
        for w in &doc {
            sentence.push(sid);
            if matches!(*w, "." | "?" | "!") {
                sid += 1;
            }
        }
        let mut sentence_q_overlap = vec![0.0; sid + 1];
        if !question.is_empty() {
            let mut seen: Vec<HashSet<&String>> = vec![HashSet::new(); sid + 1];
            for (i, c) in doc_content.iter().enumerate() {
                if let Some(c) = c.as_ref().filter(|c| question.contains(*c)) {
                    seen[sentence[i]].insert(c);
                }
            }
            for (s, set) in seen.iter().enumerate() {
                sentence_q_overlap[s] = set.len() as f64 / question.len() as f64;
            }
        }

        let mut rows = Vec::with_capacity(n + 1);
        for p in 0..n {
            let lo = p.saturating_sub(self.window);
            let hi = (p + self.window + 1).min(n);
            let size = (hi - lo) as f64;
            let frac = |pred: &dyn Fn(&String) -> bool| {
                doc_content[lo..hi]
                    .iter()
                    .flatten()
                    .filter(|c| pred(c))
                    .count() as f64
                    / size
            };
            let q_window = frac(&|c| question.contains(c));
            let h_window = frac(&|c| all_history.contains(c));
            let mut row = vec![0.0, q_window, h_window];
            if self.features == FeatureSet::Full {
                let in_q = |i: usize| {
                    doc_content[i]
                        .as_ref()
                        .is_some_and(|c| question.contains(c))
                };
                row.push(f64::from(u8::from(in_q(p))));
                row.push(last_history.map_or(0.0, |h| frac(&|c| h.contains(c))));
                row.push(f64::from(u8::from(p > 0 && in_q(p - 1))));
                row.push(f64::from(u8::from(p + 1 >= n || is_boundary(doc[p + 1]))));
                row.push(sentence_q_overlap[sentence[p]]);
            }
            debug_assert_eq!(row.len(), width);
            rows.push(row);
        }
        let mut sentinel = vec![0.0; width];
        sentinel[0] = 1.0;
        rows.push(sentinel);
        rows
    }

    fn logits(&self, rows: &[Vec<f64>], head: usize) -> Vec<f64> {
        let w = self.features.width();
        let weights = &self.weights[head * w..(head + 1) * w];
        rows.iter()
            .map(|r| r.iter().zip(weights).map(|(x, w)| x * w).sum())
            .collect()
    }
}

impl ReaderBackend for LinearSpanReader {
    type Cache = Vec<Vec<f64>>;

    fn params(&self) -> &[f64] {
        &self.weights
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    fn forward(&self, input: &ReaderInput) -> (AnswerDistribution, Self::Cache) {
        let rows = self.featurize(input);
        let dist = AnswerDistribution::from_logits(&self.logits(&rows, 0), &self.logits(&rows, 1));
        (dist, rows)
    }

    fn backward(&self, rows: &Self::Cache, d_start: &[f64], d_end: &[f64], grad: &mut [f64]) {
        let w = self.features.width();
        for (head, dz) in [d_start, d_end].into_iter().enumerate() {
            for (row, &g) in rows.iter().zip(dz) {
                if g == 0.0 {
                    continue;
                }
                for (j, x) in row.iter().enumerate() {
                    grad[head * w + j] += g * x;
                }
            }
        }
    }
}
