//! Scores, filters and samples synthetic questions, then interleaves the
//! chosen ones into the real history.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Mutex;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::qg::{build_pool, QuestionPool, SyntheticQuestion};
use crate::rng;
use crate::text::{fnv1a, lower_words};

/// Maps a sentence to a fixed-size vector.
pub trait SentenceEncoder: Send + Sync {
    fn dim(&self) -> usize;
    fn encode(&self, text: &str) -> Result<Vec<f64>>;
}

/// Feature hashing over word unigrams, word bigrams and character trigrams.
/// All counts are non-negative, so any non-empty text has a non-zero vector.
#[derive(Debug, Clone)]
pub struct HashingEncoder {
    dim: usize,
}

impl HashingEncoder {
    pub fn new(dim: usize) -> Self {
        assert!(dim > 0, "encoder dimension must be positive");
        Self { dim }
    }
}

impl Default for HashingEncoder {
    fn default() -> Self {
        Self::new(512)
    }
}

impl SentenceEncoder for HashingEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        let mut v = vec![0.0; self.dim];
        let mut bump = |key: &[u8], w: f64| {
            v[(fnv1a(key) % self.dim as u64) as usize] += w;
        };
        let words = lower_words(text);
        for w in &words {
            bump(format!("w:{w}").as_bytes(), 1.0);
        }
        for pair in words.windows(2) {
            bump(format!("b:{} {}", pair[0], pair[1]).as_bytes(), 1.0);
        }
        let trimmed = text.trim().to_lowercase();
        if !trimmed.is_empty() {
            let chars: Vec<char> = format!(" {trimmed} ").chars().collect();
            for tri in chars.windows(3) {
                let s: String = tri.iter().collect();
                bump(format!("c:{s}").as_bytes(), 0.5);
            }
        }
        Ok(v)
    }
}

/// Fixed text-to-vector table, e.g. embeddings precomputed by an external
/// sentence encoder. Unknown texts are an error.
#[derive(Debug, Clone, Default)]
pub struct TableEncoder {
    dim: usize,
    table: HashMap<String, Vec<f64>>,
}

#[derive(Deserialize)]
struct EmbeddingRow {
    text: String,
    vector: Vec<f64>,
}

impl TableEncoder {
    pub fn from_pairs<I, S>(pairs: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f64>)>,
        S: Into<String>,
    {
        let mut enc = Self::default();
        for (text, vector) in pairs {
            enc.insert(text.into(), vector)?;
        }
        Ok(enc)
    }

    fn insert(&mut self, text: String, vector: Vec<f64>) -> Result<()> {
        if self.table.is_empty() {
            self.dim = vector.len();
        } else if vector.len() != self.dim {
            return Err(Error::Validation(format!(
                "embedding for {text:?} has dimension {}, expected {}",
                vector.len(),
                self.dim
            )));
        }
        self.table.insert(text, vector);
        Ok(())
    }

    /// Reads JSONL rows `{"text": ..., "vector": [...]}`.
    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut enc = Self::default();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let row: EmbeddingRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
                context: format!("{} line {}", path.display(), i + 1),
                message: e.to_string(),
            })?;
            enc.insert(row.text, row.vector)?;
        }
        Ok(enc)
    }
}

impl SentenceEncoder for TableEncoder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        self.table
            .get(text)
            .cloned()
            .ok_or_else(|| Error::Backend(format!("no embedding for {text:?}")))
    }
}

/// Memoizes another encoder.
pub struct CachedEncoder<'a> {
    inner: &'a dyn SentenceEncoder,
    cache: Mutex<HashMap<String, Vec<f64>>>,
}

impl<'a> CachedEncoder<'a> {
    pub fn new(inner: &'a dyn SentenceEncoder) -> Self {
        Self {
            inner,
            cache: Mutex::new(HashMap::new()),
        }
    }
}

impl SentenceEncoder for CachedEncoder<'_> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn encode(&self, text: &str) -> Result<Vec<f64>> {
        if let Some(v) = self.cache.lock().expect("encoder cache poisoned").get(text) {
            return Ok(v.clone());
        }
        let v = self.inner.encode(text)?;
        self.cache
            .lock()
            .expect("encoder cache poisoned")
            .insert(text.to_string(), v.clone());
        Ok(v)
    }
}

pub fn cosine_sim(u: &[f64], v: &[f64]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::InvalidArgument(format!(
            "dimension mismatch: {} vs {}",
            u.len(),
            v.len()
        )));
    }
    let nu = u.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nv = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::InvalidArgument("cosine of a zero vector".into()));
    }
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    Ok((dot / (nu * nv)).clamp(-1.0, 1.0))
}

fn text_sim(enc: &dyn SentenceEncoder, a: &str, b: &str) -> Result<f64> {
    cosine_sim(&enc.encode(a)?, &enc.encode(b)?)
}

/// Similarity of a synthetic question at slot j to its real neighbors
/// `q_j` and `q_{j+1}`, summed. Range `[-2, 2]`.
pub fn score_synthetic(
    synthetic: &str,
    prev_question: &str,
    next_question: &str,
    enc: &dyn SentenceEncoder,
) -> Result<f64> {
    Ok(text_sim(enc, prev_question, synthetic)? + text_sim(enc, next_question, synthetic)?)
}

/// Drops synthetic questions whose similarity to the current question or any
/// real history question is strictly above `gamma`.
pub fn filter_similar(
    pool: &QuestionPool,
    current_question: &str,
    gamma: f64,
    enc: &dyn SentenceEncoder,
) -> Result<QuestionPool> {
    let mut kept = Vec::with_capacity(pool.synthetic.len());
    for q in &pool.synthetic {
        let mut max = text_sim(enc, current_question, &q.text)?;
        for r in &pool.real {
            max = max.max(text_sim(enc, r, &q.text)?);
        }
        if max <= gamma {
            kept.push(q.clone());
        }
    }
    Ok(QuestionPool {
        synthetic: kept,
        ..pool.clone()
    })
}

/// Keeps the `m` highest-scoring synthetic questions (ties: lower slot, then
/// earlier in the pool). Survivors stay in pool order.
pub fn top_m(pool: &QuestionPool, m: usize) -> Result<QuestionPool> {
    let mut ranked = Vec::with_capacity(pool.synthetic.len());
    for (i, q) in pool.synthetic.iter().enumerate() {
        let score = q.score.ok_or_else(|| {
            Error::InvalidArgument(format!(
                "synthetic question {:?} in dialog {} is unscored",
                q.text, pool.dialog_id
            ))
        })?;
        ranked.push((score, q.slot, i));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut keep: Vec<usize> = ranked.into_iter().take(m).map(|(_, _, i)| i).collect();
    keep.sort_unstable();
    Ok(QuestionPool {
        synthetic: keep
            .into_iter()
            .map(|i| pool.synthetic[i].clone())
            .collect(),
        ..pool.clone()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionDistribution {
    Uniform,
    /// Weight `k - j` for a question at slot `j`.
    Linear,
}

impl std::str::FromStr for SelectionDistribution {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "linear" => Ok(Self::Linear),
            other => Err(Error::Config(format!(
                "unknown selection distribution {other:?} (expected uniform or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub m: usize,
    pub gamma: f64,
    pub s: usize,
    pub distribution: SelectionDistribution,
    pub seed: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            m: 10,
            gamma: 0.8,
            s: 2,
            distribution: SelectionDistribution::Uniform,
            seed: 1000,
        }
    }
}

/// Draws up to `cfg.s` synthetic questions without replacement. Returned in
/// pool order.
pub fn sample_selection<R: Rng + ?Sized>(
    pool: &QuestionPool,
    k: usize,
    cfg: &SelectionConfig,
    rng: &mut R,
) -> Vec<SyntheticQuestion> {
    let n = pool.synthetic.len();
    if cfg.s == 0 {
        return Vec::new();
    }
    if n <= cfg.s {
        return pool.synthetic.clone();
    }
    let mut picked: Vec<usize> = match cfg.distribution {
        SelectionDistribution::Uniform => index::sample(rng, n, cfg.s).into_vec(),
        SelectionDistribution::Linear => {
            let weights: Vec<f64> = pool
                .synthetic
                .iter()
                .map(|q| k.saturating_sub(q.slot) as f64)
                .collect();
            index::sample_weighted(rng, n, |i| weights[i], cfg.s)
                .map(|iv| iv.into_vec())
                .unwrap_or_else(|_| index::sample(rng, n, cfg.s).into_vec())
        }
    };
    picked.sort_unstable();
    picked
        .into_iter()
        .map(|i| pool.synthetic[i].clone())
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Real,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub text: String,
    pub origin: Origin,
    pub slot: usize,
}

/// History with synthetic questions interleaved at their slots.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AugmentedHistory {
    pub entries: Vec<HistoryEntry>,
}

impl AugmentedHistory {
    pub fn questions(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.text.as_str()).collect()
    }

    pub fn real_questions(&self) -> Vec<&str> {
        self.entries
            .iter()
            .filter(|e| e.origin == Origin::Real)
            .map(|e| e.text.as_str())
            .collect()
    }

    pub fn synthetic_count(&self) -> usize {
        self.entries
            .iter()
            .filter(|e| e.origin == Origin::Synthetic)
            .count()
    }
}

/// Places each selected question right after real question `slot`; several
/// in one slot are ordered by descending score. Selected slots must be below
/// `real_history.len()`.
pub fn assemble_augmented_history<S: AsRef<str>>(
    real_history: &[S],
    selected: &[SyntheticQuestion],
) -> AugmentedHistory {
    let mut by_slot: BTreeMap<usize, Vec<&SyntheticQuestion>> = BTreeMap::new();
    for q in selected {
        debug_assert!(q.slot < real_history.len(), "slot {} out of range", q.slot);
        by_slot.entry(q.slot).or_default().push(q);
    }
    for qs in by_slot.values_mut() {
        qs.sort_by(|a, b| {
            let sa = a.score.unwrap_or(f64::NEG_INFINITY);
            let sb = b.score.unwrap_or(f64::NEG_INFINITY);
            sb.total_cmp(&sa)
        });
    }
    let mut entries = Vec::with_capacity(real_history.len() + selected.len());
    let last = real_history.len().saturating_sub(1);
    for (j, q) in real_history.iter().enumerate() {
        entries.push(HistoryEntry {
            text: q.as_ref().to_string(),
            origin: Origin::Real,
            slot: j,
        });
        let range = if j == last { j..usize::MAX } else { j..j + 1 };
        for qs in by_slot.range(range).map(|(_, v)| v) {
            entries.extend(qs.iter().map(|s| HistoryEntry {
                text: s.text.clone(),
                origin: Origin::Synthetic,
                slot: s.slot,
            }));
        }
    }
    AugmentedHistory { entries }
}

/// Everything the selector decided for one turn.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnSelection {
    pub dialog_id: String,
    pub k: usize,
    /// Scored pool after similarity filtering and top-M.
    pub pool: QuestionPool,
    pub selected: Vec<SyntheticQuestion>,
    pub history: AugmentedHistory,
}

/// JSONL row for persisted augmented histories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedRecord {
    pub dialog_id: String,
    pub k: usize,
    pub entries: Vec<HistoryEntry>,
}

impl From<&TurnSelection> for AugmentedRecord {
    fn from(t: &TurnSelection) -> Self {
        Self {
            dialog_id: t.dialog_id.clone(),
            k: t.k,
            entries: t.history.entries.clone(),
        }
    }
}

/// Scores every synthetic question in the pool against its two real
/// neighbors. The neighbor after slot `k-1` is the current question.
pub fn score_pool(
    dialog: &Dialog,
    pool: &QuestionPool,
    enc: &dyn SentenceEncoder,
) -> Result<QuestionPool> {
    let mut out = pool.clone();
    for q in &mut out.synthetic {
        let prev = &dialog.turns[q.slot].question;
        let next = &dialog
            .turns
            .get(q.slot + 1)
            .ok_or_else(|| {
                Error::InvalidArgument(format!(
                    "slot {} has no following turn in dialog {}",
                    q.slot, dialog.dialog_id
                ))
            })?
            .question;
        q.score = Some(score_synthetic(&q.text, prev, next, enc)?);
    }
    Ok(out)
}

/// Full selection for turn `k`: pool, score, filter, top-M, sample, assemble.
pub fn select_for_turn(
    dialog: &Dialog,
    k: usize,
    synthetic: &[SyntheticQuestion],
    cfg: &SelectionConfig,
    enc: &dyn SentenceEncoder,
) -> Result<TurnSelection> {
    let pool = build_pool(dialog, k, synthetic);
    let pool = score_pool(dialog, &pool, enc)?;
    let pool = filter_similar(&pool, &dialog.turns[k].question, cfg.gamma, enc)?;
    let pool = top_m(&pool, cfg.m)?;
    let mut rng = rng::stream(cfg.seed, "select", &dialog.dialog_id, k as u64);
    let selected = sample_selection(&pool, k, cfg, &mut rng);
    let history = assemble_augmented_history(&pool.real, &selected);
    Ok(TurnSelection {
        dialog_id: dialog.dialog_id.clone(),
        k,
        pool,
        selected,
        history,
    })
}
