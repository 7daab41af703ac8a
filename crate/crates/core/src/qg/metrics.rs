//! Corpus BLEU-1/4 and mean ROUGE-L for generated questions.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::lower_words;

/// Added to zero n-gram match counts for orders 2-4.
const SMOOTHING_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QgMetrics {
    pub bleu1: f64,
    pub bleu4: f64,
    #[serde(rename = "rougeL")]
    pub rouge_l: f64,
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn rouge_l_pair(r: &[String], h: &[String]) -> f64 {
    if r.is_empty() || h.is_empty() {
        return if r.is_empty() && h.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let lcs = lcs_len(r, h) as f64;
    if lcs == 0.0 {
        return 0.0;
    }
    let p = lcs / h.len() as f64;
    let rec = lcs / r.len() as f64;
    2.0 * p * rec / (p + rec)
}

/// Scores in `[0, 100]`. BLEU is corpus-level with a brevity penalty; BLEU-1
/// is unsmoothed so a hypothesis set sharing no word with the references
/// scores 0.
pub fn qg_metrics<R: AsRef<str>, H: AsRef<str>>(
    references: &[R],
    hypotheses: &[H],
) -> Result<QgMetrics> {
    if references.len() != hypotheses.len() {
        return Err(Error::InvalidArgument(format!(
            "{} references vs {} hypotheses",
            references.len(),
            hypotheses.len()
        )));
    }
    if references.is_empty() {
        return Err(Error::InvalidArgument("no question pairs to score".into()));
    }
    let refs: Vec<Vec<String>> = references.iter().map(|r| lower_words(r.as_ref())).collect();
    let hyps: Vec<Vec<String>> = hypotheses.iter().map(|h| lower_words(h.as_ref())).collect();

    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for (r, h) in refs.iter().zip(&hyps) {
        for n in 1..=4 {
            let rc = ngram_counts(r, n);
            for (g, c) in ngram_counts(h, n) {
                matches[n - 1] += c.min(rc.get(g).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }
    let precision = |n: usize| -> f64 {
        let (m, t) = (matches[n - 1] as f64, totals[n - 1] as f64);
        if n == 1 {
            return if t == 0.0 { 0.0 } else { m / t };
        }
        if m == 0.0 {
            SMOOTHING_EPSILON / t.max(1.0)
        } else {
            m / t
        }
    };
    let hyp_len: usize = hyps.iter().map(Vec::len).sum();
    let ref_len: usize = refs.iter().map(Vec::len).sum();
    let bp = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let p1 = precision(1);
    let bleu1 = bp * p1;
    let bleu4 = if p1 == 0.0 {
        0.0
    } else {
        bp * ((1..=4).map(|n| precision(n).ln()).sum::<f64>() / 4.0).exp()
    };

    let mut rouge: Vec<f64> = refs
        .iter()
        .zip(&hyps)
        .map(|(r, h)| rouge_l_pair(r, h))
        .collect();
    // order-independent summation
    rouge.sort_by(f64::total_cmp);
    let rouge_l = rouge.iter().sum::<f64>() / rouge.len() as f64;

    Ok(QgMetrics {
        bleu1: 100.0 * bleu1,
        bleu4: 100.0 * bleu4,
        rouge_l: 100.0 * rouge_l,
    })
}
