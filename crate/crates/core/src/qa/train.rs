//! Consistency training: every turn runs the reader on its real history;
//! turns at or past `tau` also run on the augmented history, and the KL
//! between the two outputs (real side held constant) is added with weight
//! `lambda`.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::reader::ReaderBackend;
use super::{
    ce_loss, consistency_loss, decode_span, serialize_reader_input, total_loss, AnswerDistribution,
    AnswerSpan, LossBreakdown, ReaderInput,
};
use crate::corpus::Dialog;
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig};
use crate::qg::QuestionPool;
use crate::rng;
use crate::selector::{
    assemble_augmented_history, sample_selection, AugmentedHistory, SelectionConfig,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda: f64,
    pub tau: usize,
    pub seed: u64,
    pub max_answer_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub input_budget: usize,
    /// Draw a fresh augmented history every epoch instead of reusing the
    /// selector's fixed draw.
    pub resample_each_epoch: bool,
    /// S, M, gamma and the sampling distribution. `s == 0` disables
    /// augmentation (baseline reader).
    pub selection: SelectionConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda: 2.0,
            tau: 6,
            seed: 1000,
            max_answer_len: 30,
            epochs: 3,
            batch_size: 8,
            learning_rate: 0.05,
            input_budget: 512,
            resample_each_epoch: false,
            selection: SelectionConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn augmenting(&self) -> bool {
        self.selection.s > 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainExample {
    pub dialog_id: String,
    pub k: usize,
    pub input_real: ReaderInput,
    /// Present only for turns that get an augmented pass.
    pub input_aug: Option<ReaderInput>,
    pub gold: AnswerSpan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleLoss {
    pub dialog_id: String,
    pub k: usize,
    pub loss: LossBreakdown,
    pub forward_passes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub epoch: usize,
    pub step: usize,
    pub mean: LossBreakdown,
    pub examples: Vec<ExampleLoss>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub examples: usize,
    pub augmented: usize,
    pub mean_l_ce: f64,
    /// Mean over augmented examples only.
    pub mean_l_cons: f64,
    pub mean_l_total: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingLog {
    pub epochs: Vec<EpochLog>,
    pub steps: Vec<StepLog>,
}

fn ce_logit_grad(p: &[f64], gold: usize, scale: f64) -> Vec<f64> {
    let mut g: Vec<f64> = p.iter().map(|x| scale * x).collect();
    g[gold] -= scale;
    g
}

/// `d KL(const(p_real) || p_aug) / d logits_aug`, scaled.
fn kl_logit_grad(real: &[f64], aug: &[f64], scale: f64) -> Vec<f64> {
    aug.iter().zip(real).map(|(q, p)| scale * (q - p)).collect()
}

/// Losses and their parameter gradient for one example, accumulated into
/// `grad` with weight `scale`. Returns the breakdown and forward-pass count.
pub fn example_gradient<R: ReaderBackend>(
    reader: &R,
    ex: &TrainExample,
    cfg: &TrainConfig,
    scale: f64,
    grad: &mut [f64],
) -> Result<(LossBreakdown, usize)> {
    let (real, real_cache) = reader.forward(&ex.input_real);
    let l_ce = ce_loss(&real, ex.gold);
    let d_start = ce_logit_grad(&real.start, ex.gold.start_pos, scale / 2.0);
    let d_end = ce_logit_grad(&real.end, ex.gold.end_pos, scale / 2.0);
    reader.backward(&real_cache, &d_start, &d_end, grad);

    let gated = ex.k >= cfg.tau;
    let Some(aug_input) = ex.input_aug.as_ref().filter(|_| gated) else {
        return Ok((total_loss(l_ce, 0.0, cfg.lambda, ex.k, cfg.tau), 1));
    };
    let (aug, aug_cache) = reader.forward(aug_input);
    let l_cons = consistency_loss(&real, &aug)?;
    // the real-history output is a constant target here
    let w = cfg.lambda * scale / 2.0;
    let d_start = kl_logit_grad(&real.start, &aug.start, w);
    let d_end = kl_logit_grad(&real.end, &aug.end, w);
    reader.backward(&aug_cache, &d_start, &d_end, grad);
    Ok((total_loss(l_ce, l_cons, cfg.lambda, ex.k, cfg.tau), 2))
}

/// One optimizer update on the batch mean of `L_T`.
pub fn train_step<R: ReaderBackend>(
    reader: &mut R,
    batch: &[TrainExample],
    cfg: &TrainConfig,
    optimizer: &mut Adam,
) -> Result<StepLog> {
    let mut grad = vec![0.0; reader.params().len()];
    let scale = 1.0 / batch.len().max(1) as f64;
    let mut examples = Vec::with_capacity(batch.len());
    let mut sum = (0.0, 0.0, 0.0);
    for ex in batch {
        let (loss, passes) = example_gradient(reader, ex, cfg, scale, &mut grad)?;
        sum.0 += loss.l_ce;
        sum.1 += loss.l_cons;
        sum.2 += loss.l_total;
        examples.push(ExampleLoss {
            dialog_id: ex.dialog_id.clone(),
            k: ex.k,
            loss,
            forward_passes: passes,
        });
    }
    optimizer.step(reader.params_mut(), &grad);
    Ok(StepLog {
        epoch: 0,
        step: 0,
        mean: LossBreakdown {
            l_ce: sum.0 * scale,
            l_cons: sum.1 * scale,
            l_total: sum.2 * scale,
        },
        examples,
    })
}

/// Selector output for one turn: the filtered pool and the fixed draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnAugmentation {
    pub pool: QuestionPool,
    pub history: AugmentedHistory,
}

pub type AugmentationMap = BTreeMap<(String, usize), TurnAugmentation>;

fn build_examples(
    dialogs: &[Dialog],
    augment: &AugmentationMap,
    cfg: &TrainConfig,
) -> Result<Vec<TrainExample>> {
    let mut out = Vec::new();
    for d in dialogs {
        for (k, turn) in d.turns.iter().enumerate() {
            let input_real = serialize_reader_input(
                &turn.question,
                &d.history(k),
                &d.document,
                cfg.input_budget,
            )?;
            let gold = input_real.gold_span(turn.answer());
            let input_aug = if cfg.augmenting() && k >= cfg.tau {
                let a = augment.get(&(d.dialog_id.clone(), k)).ok_or_else(|| {
                    Error::Validation(format!(
                        "missing augmented history for dialog {} turn {k}",
                        d.dialog_id
                    ))
                })?;
                Some(serialize_reader_input(
                    &turn.question,
                    &a.history.questions(),
                    &d.document,
                    cfg.input_budget,
                )?)
            } else {
                None
            };
            out.push(TrainExample {
                dialog_id: d.dialog_id.clone(),
                k,
                input_real,
                input_aug,
                gold,
            });
        }
    }
    Ok(out)
}

fn resample(
    examples: &mut [TrainExample],
    dialogs: &[Dialog],
    augment: &AugmentationMap,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<()> {
    let by_id: BTreeMap<&str, &Dialog> =
        dialogs.iter().map(|d| (d.dialog_id.as_str(), d)).collect();
    let stage = format!("train-qa/resample/{epoch}");
    for ex in examples.iter_mut().filter(|e| e.input_aug.is_some()) {
        let d = by_id[ex.dialog_id.as_str()];
        let a = &augment[&(ex.dialog_id.clone(), ex.k)];
        let mut rng = rng::stream(cfg.seed, &stage, &ex.dialog_id, ex.k as u64);
        let picked = sample_selection(&a.pool, ex.k, &cfg.selection, &mut rng);
        let history = assemble_augmented_history(&a.pool.real, &picked);
        ex.input_aug = Some(serialize_reader_input(
            &d.turns[ex.k].question,
            &history.questions(),
            &d.document,
            cfg.input_budget,
        )?);
    }
    Ok(())
}

pub fn train_qa<R: ReaderBackend>(
    reader: &mut R,
    dialogs: &[Dialog],
    augment: &AugmentationMap,
    cfg: &TrainConfig,
) -> Result<TrainingLog> {
    let mut examples = build_examples(dialogs, augment, cfg)?;
    if examples.is_empty() {
        return Err(Error::InvalidArgument("no training turns".into()));
    }
    let mut optimizer = Adam::new(
        reader.params().len(),
        AdamConfig::with_lr(cfg.learning_rate),
    );
    let mut log = TrainingLog::default();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0;
    for epoch in 0..cfg.epochs {
        if cfg.resample_each_epoch && epoch > 0 {
            resample(&mut examples, dialogs, augment, cfg, epoch)?;
        }
        let mut rng = rng::stream(cfg.seed, "train-qa", "", epoch as u64);
        order.shuffle(&mut rng);
        let (mut ce, mut cons, mut total, mut augmented) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let batch: Vec<TrainExample> = chunk.iter().map(|&i| examples[i].clone()).collect();
            let mut s = train_step(reader, &batch, cfg, &mut optimizer)?;
            s.epoch = epoch;
            s.step = step;
            step += 1;
            for e in &s.examples {
                ce += e.loss.l_ce;
                total += e.loss.l_total;
                if e.forward_passes == 2 {
                    cons += e.loss.l_cons;
                    augmented += 1;
                }
            }
            log.steps.push(s);
        }
        let n = examples.len() as f64;
        log.epochs.push(EpochLog {
            epoch,
            examples: examples.len(),
            augmented,
            mean_l_ce: ce / n,
            mean_l_cons: if augmented == 0 {
                0.0
            } else {
                cons / augmented as f64
            },
            mean_l_total: total / n,
        });
    }
    Ok(log)
}

/// Predictions JSONL row. Offsets are document byte offsets; `None` for a
/// no-answer prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub dialog_id: String,
    pub k: usize,
    pub span_text: String,
    pub start: Option<usize>,
    pub end: Option<usize>,
}

/// Answers turn `k` from its real history questions only.
pub fn predict<R: ReaderBackend>(
    reader: &R,
    dialog: &Dialog,
    k: usize,
    cfg: &TrainConfig,
) -> Result<(Prediction, AnswerDistribution)> {
    let turn = &dialog.turns[k];
    let input = serialize_reader_input(
        &turn.question,
        &dialog.history(k),
        &dialog.document,
        cfg.input_budget,
    )?;
    let dist = reader.predict(&input);
    let span = decode_span(&dist, cfg.max_answer_len);
    let chars = input.char_span(span);
    Ok((
        Prediction {
            dialog_id: dialog.dialog_id.clone(),
            k,
            span_text: input.span_text(&dialog.document, span),
            start: chars.map(|c| c.begin),
            end: chars.map(|c| c.end),
        },
        dist,
    ))
}

#[cfg(test)]
mod tests {
    use std::cell::Cell;

    use super::*;
    use crate::corpus::Document;
    use crate::qa::reader::{FeatureSet, LinearSpanReader};

    /// Counts forward passes of the wrapped reader.
    struct Counting<R> {
        inner: R,
        calls: Cell<usize>,
    }

    impl<R: ReaderBackend> ReaderBackend for Counting<R> {
        type Cache = R::Cache;
        fn params(&self) -> &[f64] {
            self.inner.params()
        }
        fn params_mut(&mut self) -> &mut [f64] {
            self.inner.params_mut()
        }
        fn forward(&self, input: &ReaderInput) -> (AnswerDistribution, Self::Cache) {
            self.calls.set(self.calls.get() + 1);
            self.inner.forward(input)
        }
        fn backward(&self, c: &Self::Cache, s: &[f64], e: &[f64], g: &mut [f64]) {
            self.inner.backward(c, s, e, g)
        }
    }

    fn example(k: usize, aug_history: Option<&[&str]>) -> TrainExample {
        let doc = Document::new(
            "d",
            "The band recorded Abbey Road. The drummer left the band.",
        );
        let real =
            serialize_reader_input("What did the band record?", &["Who left?"], &doc, 64).unwrap();
        let aug = aug_history
            .map(|h| serialize_reader_input("What did the band record?", h, &doc, 64).unwrap());
        TrainExample {
            dialog_id: "d".into(),
            k,
            gold: AnswerSpan {
                start_pos: 3,
                end_pos: 4,
            },
            input_real: real,
            input_aug: aug,
        }
    }

    fn reader() -> Counting<LinearSpanReader> {
        Counting {
            inner: LinearSpanReader::new(FeatureSet::Full, 5, 0.5),
            calls: Cell::new(0),
        }
    }

    #[test]
    fn gated_turn_runs_one_pass() {
        let mut r = reader();
        let cfg = TrainConfig::default();
        let mut opt = Adam::new(r.params().len(), AdamConfig::with_lr(0.01));
        let ex = example(3, Some(&["Who left?", "What about the drummer?"]));
        let log = train_step(&mut r, &[ex], &cfg, &mut opt).unwrap();
        assert_eq!(r.calls.get(), 1);
        assert_eq!(log.examples[0].loss.l_cons, 0.0);
        assert_eq!(log.examples[0].forward_passes, 1);
    }

    #[test]
    fn augmented_turn_runs_two_passes() {
        let mut r = reader();
        let cfg = TrainConfig::default();
        let mut opt = Adam::new(r.params().len(), AdamConfig::with_lr(0.01));
        let ex = example(6, Some(&["Who left?", "What about the drummer?"]));
        let log = train_step(&mut r, &[ex], &cfg, &mut opt).unwrap();
        assert_eq!(r.calls.get(), 2);
        assert!(log.examples[0].loss.l_cons > 0.0);
    }

    #[test]
    fn identical_inputs_add_no_consistency_gradient() {
        let r = reader();
        let cfg = TrainConfig::default();
        let same = example(6, Some(&["Who left?"]));
        let plain = example(6, None);
        let mut g1 = vec![0.0; r.params().len()];
        let mut g2 = vec![0.0; r.params().len()];
        let (l1, _) = example_gradient(&r, &same, &cfg, 1.0, &mut g1).unwrap();
        let (l2, _) = example_gradient(&r, &plain, &cfg, 1.0, &mut g2).unwrap();
        assert_eq!(l1.l_cons, 0.0);
        assert_eq!(l1.l_total, l2.l_total);
        assert_eq!(g1, g2);
    }
}
