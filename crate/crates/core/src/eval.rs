//! QuAC-style scoring: word-overlap F1, human-equivalence (HEQ) rates and
//! per-turn aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

/// Lowercase, drop ASCII punctuation and the articles a/an/the, collapse
/// whitespace.
pub fn normalize_text(s: &str) -> String {
    let lowered = s.to_lowercase();
    let no_punct: String = lowered
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect();
    no_punct
        .split_whitespace()
        .filter(|w| !matches!(*w, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn pair_f1(prediction: &str, reference: &str) -> f64 {
    let pred = normalize_text(prediction);
    let gold = normalize_text(reference);
    let pred: Vec<&str> = pred.split_whitespace().collect();
    let gold: Vec<&str> = gold.split_whitespace().collect();
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() {
            1.0
        } else {
            0.0
        };
    }
    let mut counts: BTreeMap<&str, i64> = BTreeMap::new();
    for t in &gold {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0usize;
    for t in &pred {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pred.len() as f64;
    let recall = common as f64 / gold.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Best bag-of-words F1 of `prediction` against any reference.
pub fn token_f1<S: AsRef<str>>(prediction: &str, references: &[S]) -> f64 {
    references
        .iter()
        .map(|r| pair_f1(prediction, r.as_ref()))
        .fold(0.0, f64::max)
}

/// Leave-one-out agreement among reference answers. A single reference
/// scores 1.0.
pub fn human_f1<S: AsRef<str>>(references: &[S]) -> f64 {
    if references.len() < 2 {
        return 1.0;
    }
    let total: f64 = (0..references.len())
        .map(|i| {
            let others: Vec<&str> = references
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, r)| r.as_ref())
                .collect();
            token_f1(references[i].as_ref(), &others)
        })
        .sum();
    total / references.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnResult {
    pub dialog_id: String,
    pub k: usize,
    pub model_f1: f64,
    pub human_f1: f64,
}

impl TurnResult {
    pub fn matches_human(&self) -> bool {
        self.model_f1 >= self.human_f1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Heq {
    pub heq_q: f64,
    pub heq_d: f64,
}

/// Fractions of questions and of whole dialogs where the model reaches human
/// F1 (ties count).
pub fn heq(results: &[TurnResult]) -> Heq {
    if results.is_empty() {
        return Heq {
            heq_q: 0.0,
            heq_d: 0.0,
        };
    }
    let mut dialogs: BTreeMap<&str, bool> = BTreeMap::new();
    let mut hits = 0usize;
    for r in results {
        let ok = r.matches_human();
        hits += usize::from(ok);
        let entry = dialogs.entry(r.dialog_id.as_str()).or_insert(true);
        *entry &= ok;
    }
    let full = dialogs.values().filter(|ok| **ok).count();
    Heq {
        heq_q: hits as f64 / results.len() as f64,
        heq_d: full as f64 / dialogs.len() as f64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnBucket {
    pub k: usize,
    pub f1: f64,
    pub count: usize,
}

/// Mean model F1 per turn index, ascending by index.
pub fn per_turn_f1(results: &[TurnResult]) -> Vec<TurnBucket> {
    let mut acc: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for r in results {
        let e = acc.entry(r.k).or_default();
        e.0 += r.model_f1;
        e.1 += 1;
    }
    acc.into_iter()
        .map(|(k, (sum, count))| TurnBucket {
            k,
            f1: sum / count as f64,
            count,
        })
        .collect()
}

/// Evaluation summary. Scores are percentages.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub f1: f64,
    pub heq_q: f64,
    pub heq_d: f64,
    pub questions: usize,
    pub dialogs: usize,
    /// Digest of the sorted test dialog ids, so reports on different splits
    /// are never compared.
    pub split_digest: String,
    pub per_turn: Vec<TurnBucket>,
}

impl Report {
    pub fn from_results(results: &[TurnResult], split_digest: impl Into<String>) -> Self {
        let h = heq(results);
        let f1 = if results.is_empty() {
            0.0
        } else {
            results.iter().map(|r| r.model_f1).sum::<f64>() / results.len() as f64
        };
        let dialogs = results
            .iter()
            .map(|r| r.dialog_id.as_str())
            .collect::<std::collections::BTreeSet<_>>()
            .len();
        Self {
            f1: 100.0 * f1,
            heq_q: 100.0 * h.heq_q,
            heq_d: 100.0 * h.heq_d,
            questions: results.len(),
            dialogs,
            split_digest: split_digest.into(),
            per_turn: per_turn_f1(results)
                .into_iter()
                .map(|b| TurnBucket {
                    f1: 100.0 * b.f1,
                    ..b
                })
                .collect(),
        }
    }

    pub fn per_turn_csv(&self) -> String {
        let mut out = String::from("k,f1,count\n");
        for b in &self.per_turn {
            out.push_str(&format!("{},{:.4},{}\n", b.k, b.f1, b.count));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn tr(d: &str, k: usize, m: f64, h: f64) -> TurnResult {
        TurnResult {
            dialog_id: d.into(),
            k,
            model_f1: m,
            human_f1: h,
        }
    }

    #[test]
    fn normalization() {
        assert_eq!(normalize_text("The Red Car!"), "red car");
        assert_eq!(normalize_text(""), "");
        assert_eq!(normalize_text("a  a  a"), "");
    }

    #[test]
    fn f1_examples() {
        assert_eq!(token_f1("red car", &["red car"]), 1.0);
        assert!((token_f1("red car", &["red car in 1963"]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(token_f1("blue bike", &["red car"]), 0.0);
        assert_eq!(token_f1("the", &["a"]), 1.0);
        assert_eq!(token_f1("the", &["car"]), 0.0);
        assert_eq!(token_f1("red", &["car", "red"]), 1.0);
    }

    #[test]
    fn human_f1_examples() {
        assert_eq!(human_f1(&["red car", "red car"]), 1.0);
        assert!((human_f1(&["red car", "red car in 1963"]) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(human_f1(&["only"]), 1.0);
    }

    #[test]
    fn heq_examples() {
        let rs = vec![
            tr("d", 0, 0.8, 0.7),
            tr("d", 1, 0.5, 0.9),
            tr("d", 2, 1.0, 1.0),
        ];
        let h = heq(&rs);
        assert!((h.heq_q - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(h.heq_d, 0.0);
        let rs = vec![tr("a", 0, 1.0, 1.0), tr("b", 0, 1.0, 0.3)];
        assert_eq!(
            heq(&rs),
            Heq {
                heq_q: 1.0,
                heq_d: 1.0
            }
        );
    }

    #[test]
    fn per_turn_examples() {
        let rs = vec![
            tr("a", 0, 1.0, 1.0),
            tr("b", 0, 0.0, 1.0),
            tr("a", 1, 0.25, 1.0),
        ];
        assert_eq!(
            per_turn_f1(&rs),
            vec![
                TurnBucket {
                    k: 0,
                    f1: 0.5,
                    count: 2
                },
                TurnBucket {
                    k: 1,
                    f1: 0.25,
                    count: 1
                }
            ]
        );
        assert!(per_turn_f1(&[]).is_empty());
    }

    #[test]
    fn ragged_dialogs_can_break_ordering() {
        let mut rs = vec![tr("short", 0, 1.0, 0.5)];
        rs.extend((0..10).map(|k| tr("long", k, 0.0, 0.5)));
        let h = heq(&rs);
        assert!(h.heq_d > h.heq_q);
    }

    proptest! {
        #[test]
        fn f1_symmetric(a in "[a-e ]{0,12}", b in "[a-e ]{0,12}") {
            prop_assert_eq!(token_f1(&a, &[&b]), token_f1(&b, &[&a]));
        }

        #[test]
        fn f1_ignores_case_and_articles(a in "[a-d ]{1,12}", b in "[a-d ]{1,12}") {
            let upper = format!("The {}", a.to_uppercase());
            prop_assert_eq!(token_f1(&a, &[&b]), token_f1(&upper, &[&b]));
            prop_assert_eq!(token_f1(&a, &[&b]), token_f1(&a, &[format!("an {b}")]));
        }

        // Holds whenever dialogs have equal length; with ragged lengths a short
        // perfect dialog next to a long failed one can push heq_d above heq_q.
        #[test]
        fn heq_d_bounded_by_heq_q(
            turns in 1usize..8,
            scores in proptest::collection::vec((0.0f64..=1.0, 0.0f64..=1.0), 1..64)
        ) {
            let rs: Vec<_> = scores
                .iter()
                .enumerate()
                .map(|(i, (m, h))| tr(&(i / turns).to_string(), i % turns, *m, *h))
                .take(scores.len() / turns * turns)
                .collect();
            prop_assume!(!rs.is_empty());
            let h = heq(&rs);
            prop_assert!(h.heq_d <= h.heq_q + 1e-12);
        }

    }
}
