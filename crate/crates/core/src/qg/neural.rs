//! A small trainable question generator: bag-of-segment context, previous
//! token and position embeddings feed a tanh hidden layer, with a learned
//! copy bonus for words from the answer and the history.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    DecodeConfig, GeneratorBackend, TrainingPair, ANSWER_MARK, DOC_MARK, HISTORY_MARK, SEP_MARK,
};
use crate::error::{Error, Result};
use crate::nn::{softmax, Adam, AdamConfig};
use crate::rng;
use crate::text::detokenize;

const UNK: usize = 0;
const BOS: usize = 1;
const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<bos>", "<eos>"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeuralGeneratorConfig {
    pub hidden: usize,
    pub max_vocab: usize,
    pub learning_rate: f64,
    pub max_positions: usize,
    pub init_scale: f64,
}

impl Default for NeuralGeneratorConfig {
    fn default() -> Self {
        Self {
            hidden: 32,
            max_vocab: 5000,
            learning_rate: 0.01,
            max_positions: 33,
            init_scale: 0.1,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    v: usize,
    d: usize,
    e_ans: usize,
    e_hist: usize,
    e_doc: usize,
    e_prev: usize,
    pos: usize,
    w_out: usize,
    b_out: usize,
    u_ans: usize,
    u_hist: usize,
    total: usize,
}

impl Layout {
    fn new(v: usize, d: usize, p: usize) -> Self {
        let e_ans = 0;
        let e_hist = e_ans + v * d;
        let e_doc = e_hist + v * d;
        let e_prev = e_doc + v * d;
        let pos = e_prev + v * d;
        let w_out = pos + p * d;
        let b_out = w_out + v * d;
        let u_ans = b_out + v;
        let u_hist = u_ans + d;
        Self {
            v,
            d,
            e_ans,
            e_hist,
            e_doc,
            e_prev,
            pos,
            w_out,
            b_out,
            u_ans,
            u_hist,
            total: u_hist + d,
        }
    }
}

struct Encoded {
    segments: [Vec<usize>; 3],
    ans_set: Vec<usize>,
    hist_set: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NeuralGenerator {
    cfg: NeuralGeneratorConfig,
    vocab: Vec<String>,
    params: Vec<f64>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    optimizer: Option<Adam>,
}

impl NeuralGenerator {
    pub fn new(cfg: NeuralGeneratorConfig) -> Self {
        Self {
            cfg,
            vocab: Vec::new(),
            params: Vec::new(),
            index: HashMap::new(),
            optimizer: None,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string(self).map_err(|e| Error::Backend(e.to_string()))
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let mut g: Self = serde_json::from_str(json).map_err(|e| Error::Parse {
            context: "generator checkpoint".into(),
            message: e.to_string(),
        })?;
        g.rebuild_index();
        let layout = g.layout();
        if g.params.len() != layout.total {
            return Err(Error::Validation(format!(
                "generator checkpoint has {} parameters, expected {}",
                g.params.len(),
                layout.total
            )));
        }
        Ok(g)
    }

    fn rebuild_index(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i))
            .collect();
    }

    fn layout(&self) -> Layout {
        Layout::new(self.vocab.len(), self.cfg.hidden, self.cfg.max_positions)
    }

    fn id(&self, word: &str) -> usize {
        self.index.get(&word.to_lowercase()).copied().unwrap_or(UNK)
    }

    fn encode_input(&self, input: &[String]) -> Encoded {
        let mut segments: [Vec<usize>; 3] = Default::default();
        let mut current: Option<usize> = None;
        for tok in input {
            match tok.as_str() {
                ANSWER_MARK => current = Some(0),
                HISTORY_MARK => current = Some(1),
                DOC_MARK => current = Some(2),
                SEP_MARK => {}
                w => {
                    if let Some(s) = current {
                        segments[s].push(self.id(w));
                    }
                }
            }
        }
        let set = |ids: &[usize]| {
            let mut s: Vec<usize> = ids.iter().copied().filter(|&i| i != UNK).collect();
            s.sort_unstable();
            s.dedup();
            s
        };
        Encoded {
            ans_set: set(&segments[0]),
            hist_set: set(&segments[1]),
            segments,
        }
    }

    fn context(&self, l: &Layout, enc: &Encoded) -> Vec<f64> {
        let d = l.d;
        let mut c = vec![0.0; d];
        for (seg, base) in enc.segments.iter().zip([l.e_ans, l.e_hist, l.e_doc]) {
            if seg.is_empty() {
                continue;
            }
            let scale = 1.0 / seg.len() as f64;
            for &id in seg {
                let row = &self.params[base + id * d..base + (id + 1) * d];
                for j in 0..d {
                    c[j] += scale * row[j];
                }
            }
        }
        c
    }

    /// Hidden state and output distribution at step `t` after token `prev`.
    fn step(
        &self,
        l: &Layout,
        enc: &Encoded,
        ctx: &[f64],
        t: usize,
        prev: usize,
    ) -> (Vec<f64>, Vec<f64>) {
        let d = l.d;
        let p = t.min(self.cfg.max_positions - 1);
        let h: Vec<f64> = (0..d)
            .map(|j| {
                (ctx[j] + self.params[l.e_prev + prev * d + j] + self.params[l.pos + p * d + j])
                    .tanh()
            })
            .collect();
        let dot = |base: usize| (0..d).map(|j| self.params[base + j] * h[j]).sum::<f64>();
        let copy_ans = dot(l.u_ans);
        let copy_hist = dot(l.u_hist);
        let mut logits: Vec<f64> = (0..l.v)
            .map(|v| {
                let row = &self.params[l.w_out + v * d..l.w_out + (v + 1) * d];
                self.params[l.b_out + v] + row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect();
        for &v in &enc.ans_set {
            logits[v] += copy_ans;
        }
        for &v in &enc.hist_set {
            logits[v] += copy_hist;
        }
        (h, softmax(&logits))
    }

    fn target_ids(&self, target: &[String]) -> Vec<usize> {
        let mut ids: Vec<usize> = target.iter().map(|w| self.id(w)).collect();
        ids.push(EOS);
        ids
    }

    /// Mean token loss; accumulates `scale * dLoss/dθ` into `grad` if given.
    fn forward_backward(&self, pair: &TrainingPair, mut grad: Option<(&mut [f64], f64)>) -> f64 {
        let l = self.layout();
        let d = l.d;
        let enc = self.encode_input(&pair.input);
        let ctx = self.context(&l, &enc);
        let targets = self.target_ids(&pair.target);
        let n = targets.len() as f64;
        let mut loss = 0.0;
        let mut d_ctx = vec![0.0; d];
        let mut prev = BOS;
        for (t, &y) in targets.iter().enumerate() {
            let (h, probs) = self.step(&l, &enc, &ctx, t, prev);
            loss -= probs[y].max(1e-12).ln();
            if let Some((g, scale)) = grad.as_mut() {
                let w = *scale / n;
                let mut dz = probs;
                dz[y] -= 1.0;
                let mut dh = vec![0.0; d];
                for (v, &dzv) in dz.iter().enumerate() {
                    if dzv == 0.0 {
                        continue;
                    }
                    let gz = w * dzv;
                    g[l.b_out + v] += gz;
                    let row = l.w_out + v * d;
                    for j in 0..d {
                        g[row + j] += gz * h[j];
                        dh[j] += gz * self.params[row + j];
                    }
                }
                for (set, base) in [(&enc.ans_set, l.u_ans), (&enc.hist_set, l.u_hist)] {
                    let s: f64 = set.iter().map(|&v| w * dz[v]).sum();
                    for j in 0..d {
                        g[base + j] += s * h[j];
                        dh[j] += s * self.params[base + j];
                    }
                }
                let p = t.min(self.cfg.max_positions - 1);
                for j in 0..d {
                    let dpre = dh[j] * (1.0 - h[j] * h[j]);
                    g[l.e_prev + prev * d + j] += dpre;
                    g[l.pos + p * d + j] += dpre;
                    d_ctx[j] += dpre;
                }
            }
            prev = y;
        }
        if let Some((g, _)) = grad {
            for (seg, base) in enc.segments.iter().zip([l.e_ans, l.e_hist, l.e_doc]) {
                if seg.is_empty() {
                    continue;
                }
                let scale = 1.0 / seg.len() as f64;
                for &id in seg {
                    for j in 0..d {
                        g[base + id * d + j] += scale * d_ctx[j];
                    }
                }
            }
        }
        loss / n
    }
}

impl GeneratorBackend for NeuralGenerator {
    fn prepare(&mut self, pairs: &[TrainingPair], seed: u64) -> Result<()> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for p in pairs {
            for w in p.input.iter().chain(&p.target) {
                if matches!(w.as_str(), ANSWER_MARK | HISTORY_MARK | DOC_MARK | SEP_MARK) {
                    continue;
                }
                *counts.entry(w.to_lowercase()).or_default() += 1;
            }
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        self.vocab = SPECIALS.iter().map(|s| s.to_string()).collect();
        self.vocab.extend(
            ranked
                .into_iter()
                .map(|(w, _)| w)
                .take(self.cfg.max_vocab.saturating_sub(SPECIALS.len())),
        );
        self.rebuild_index();
        let l = self.layout();
        let mut rng = rng::stream(seed, "train-qg-init", "", 0);
        let s = self.cfg.init_scale;
        self.params = (0..l.total).map(|_| rng.gen_range(-s..s)).collect();
        for v in &mut self.params[l.b_out..l.b_out + l.v] {
            *v = 0.0;
        }
        self.optimizer = Some(Adam::new(
            l.total,
            AdamConfig::with_lr(self.cfg.learning_rate),
        ));
        Ok(())
    }

    fn loss(&self, pair: &TrainingPair) -> f64 {
        self.forward_backward(pair, None)
    }

    fn train_batch(&mut self, batch: &[&TrainingPair]) -> Result<f64> {
        if self.params.is_empty() {
            return Err(Error::Backend("generator trained before prepare()".into()));
        }
        if batch.is_empty() {
            return Ok(0.0);
        }
        let mut grad = vec![0.0; self.params.len()];
        let scale = 1.0 / batch.len() as f64;
        let mut total = 0.0;
        for pair in batch {
            total += self.forward_backward(pair, Some((&mut grad, scale)));
        }
        let mut opt = self
            .optimizer
            .take()
            .unwrap_or_else(|| Adam::new(grad.len(), AdamConfig::with_lr(self.cfg.learning_rate)));
        opt.step(&mut self.params, &grad);
        self.optimizer = Some(opt);
        Ok(total * scale)
    }

    fn generate(&self, input: &[String], decode: &DecodeConfig) -> Result<String> {
        if self.params.is_empty() {
            return Err(Error::Backend("generator used before training".into()));
        }
        let l = self.layout();
        let enc = self.encode_input(input);
        let ctx = self.context(&l, &enc);
        let mut prev = BOS;
        let mut words = Vec::new();
        for t in 0..decode.max_new_tokens {
            let (_, probs) = self.step(&l, &enc, &ctx, t, prev);
            let mut best = EOS;
            for (v, &p) in probs.iter().enumerate() {
                if v != UNK && v != BOS && p > probs[best] {
                    best = v;
                }
            }
            if best == EOS {
                break;
            }
            words.push(self.vocab[best].as_str());
            prev = best;
        }
        Ok(detokenize(&words))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pair(input: &str, target: &str) -> TrainingPair {
        TrainingPair {
            input: input.split(' ').map(String::from).collect(),
            target: target.split(' ').map(String::from).collect(),
        }
    }

    fn small() -> NeuralGenerator {
        NeuralGenerator::new(NeuralGeneratorConfig {
            hidden: 6,
            learning_rate: 0.05,
            max_positions: 8,
            ..Default::default()
        })
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let pairs = vec![
            pair(
                "[ANSWER] red car [HISTORY] who drove [DOC] the red car drove",
                "what did he drive ?",
            ),
            pair(
                "[ANSWER] home [HISTORY] [DOC] he went home",
                "where did he go ?",
            ),
        ];
        let mut g = small();
        g.prepare(&pairs, 3).unwrap();
        let mut grad = vec![0.0; g.params.len()];
        g.forward_backward(&pairs[0], Some((&mut grad, 1.0)));
        let h = 1e-6;
        let l = g.layout();
        // sample coordinates from every parameter block
        let probes = [
            l.e_ans + 7,
            l.e_hist + 20,
            l.e_doc + 31,
            l.e_prev + 9,
            l.pos + 4,
            l.w_out + 13,
            l.b_out + 5,
            l.u_ans + 2,
            l.u_hist + 1,
        ];
        for &i in &probes {
            let orig = g.params[i];
            g.params[i] = orig + h;
            let up = g.loss(&pairs[0]);
            g.params[i] = orig - h;
            let down = g.loss(&pairs[0]);
            g.params[i] = orig;
            let fd = (up - down) / (2.0 * h);
            assert!(
                (fd - grad[i]).abs() <= 1e-6 * (1.0 + fd.abs()),
                "param {i}: fd {fd} vs analytic {}",
                grad[i]
            );
        }
    }

    #[test]
    fn checkpoint_round_trip() {
        let pairs = vec![pair("[ANSWER] x [HISTORY] [DOC] x y", "what is x ?")];
        let mut g = small();
        g.prepare(&pairs, 1).unwrap();
        let json = g.to_json().unwrap();
        let back = NeuralGenerator::from_json(&json).unwrap();
        assert_eq!(back.loss(&pairs[0]), g.loss(&pairs[0]));
    }
}
