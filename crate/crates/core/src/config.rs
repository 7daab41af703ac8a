//! Pipeline configuration: a flat `key = value` file. Lines starting with
//! `#` are comments. Unknown or repeated keys are errors. Relative paths are
//! resolved against the config file's directory.
//!
//! | key | default |
//! |---|---|
//! | `corpus.train`, `corpus.dev` | required |
//! | `workdir` | `work` |
//! | `seed` | 1000 |
//! | `qg.backend` | `neural` (or `template`) |
//! | `qg.template` | `what about {answer} ?` |
//! | `qg.epochs`, `qg.batch_size`, `qg.input_budget` | 5, 16, 256 |
//! | `qg.hidden`, `qg.max_vocab`, `qg.learning_rate` | 32, 5000, 0.01 |
//! | `qg.max_new_tokens` | 32 |
//! | `mining.max_candidates` | 20 |
//! | `encoder.backend` | `hashing` (or `table`) |
//! | `encoder.dim`, `encoder.path` | 512, none |
//! | `selection.m`, `selection.gamma`, `selection.s` | 10, 0.8, 2 |
//! | `selection.distribution` | `uniform` (or `linear`) |
//! | `train.lambda`, `train.tau` | 2.0, 6 |
//! | `train.epochs`, `train.batch_size`, `train.learning_rate` | 3, 8, 0.05 |
//! | `train.max_answer_len`, `train.input_budget` | 30, 512 |
//! | `train.resample_each_epoch` | false |
//! | `reader.features`, `reader.init_scale` | `full`, 0.5 |
//! | `eval.per_turn_csv` | true |
//! | `eval.qg_max_turns` | 0 (all) |

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::answer_mining::MAX_CANDIDATES;
use crate::error::{Error, Result};
use crate::qa::reader::FeatureSet;
use crate::qa::train::TrainConfig;
use crate::qg::{DecodeConfig, NeuralGeneratorConfig, QgTrainConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeneratorKind {
    Neural,
    Template,
}

impl FromStr for GeneratorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "neural" => Ok(Self::Neural),
            "template" => Ok(Self::Template),
            other => Err(Error::Config(format!(
                "unknown generator backend {other:?} (expected neural or template)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EncoderKind {
    Hashing,
    Table,
}

impl FromStr for EncoderKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hashing" => Ok(Self::Hashing),
            "table" => Ok(Self::Table),
            other => Err(Error::Config(format!(
                "unknown encoder backend {other:?} (expected hashing or table)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgSettings {
    pub backend: GeneratorKind,
    pub template: String,
    pub train: QgTrainConfig,
    pub model: NeuralGeneratorConfig,
    pub decode: DecodeConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderSettings {
    pub backend: EncoderKind,
    pub dim: usize,
    pub path: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderSettings {
    pub features: FeatureSet,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSettings {
    pub per_turn_csv: bool,
    /// Cap on dev turns scored by eval-qg; 0 means all.
    pub qg_max_turns: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub corpus_train: PathBuf,
    pub corpus_dev: PathBuf,
    pub workdir: PathBuf,
    pub seed: u64,
    pub qg: QgSettings,
    pub max_candidates: usize,
    pub encoder: EncoderSettings,
    pub train: TrainConfig,
    pub reader: ReaderSettings,
    pub eval: EvalSettings,
}

impl PipelineConfig {
    pub fn new(corpus_train: impl Into<PathBuf>, corpus_dev: impl Into<PathBuf>) -> Self {
        Self {
            corpus_train: corpus_train.into(),
            corpus_dev: corpus_dev.into(),
            workdir: PathBuf::from("work"),
            seed: 1000,
            qg: QgSettings {
                backend: GeneratorKind::Neural,
                template: "what about {answer} ?".into(),
                train: QgTrainConfig::default(),
                model: NeuralGeneratorConfig::default(),
                decode: DecodeConfig::default(),
            },
            max_candidates: MAX_CANDIDATES,
            encoder: EncoderSettings {
                backend: EncoderKind::Hashing,
                dim: 512,
                path: None,
            },
            train: TrainConfig::default(),
            reader: ReaderSettings {
                features: FeatureSet::Full,
                init_scale: 0.5,
            },
            eval: EvalSettings {
                per_turn_csv: true,
                qg_max_turns: 0,
            },
        }
    }

    /// Sets the one global seed every stage derives its streams from.
    pub fn set_seed(&mut self, seed: u64) {
        self.seed = seed;
        self.qg.train.seed = seed;
        self.train.seed = seed;
        self.train.selection.seed = seed;
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new(""));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            let key = key.trim();
            if kv
                .insert(key.to_string(), value.trim().to_string())
                .is_some()
            {
                return Err(Error::Config(format!(
                    "line {}: duplicate key {key}",
                    n + 1
                )));
            }
        }

        let path = |kv: &mut BTreeMap<String, String>, key: &str| -> Option<PathBuf> {
            kv.remove(key).map(|v| base.join(v))
        };
        let corpus_train = path(&mut kv, "corpus.train")
            .ok_or_else(|| Error::Config("missing required key corpus.train".into()))?;
        let corpus_dev = path(&mut kv, "corpus.dev")
            .ok_or_else(|| Error::Config("missing required key corpus.dev".into()))?;
        let mut cfg = Self::new(corpus_train, corpus_dev);
        cfg.workdir = path(&mut kv, "workdir").unwrap_or_else(|| base.join("work"));
        cfg.encoder.path = path(&mut kv, "encoder.path");
        if let Some(seed) = take(&mut kv, "seed")? {
            cfg.set_seed(seed);
        }

        set(&mut kv, "qg.backend", &mut cfg.qg.backend)?;
        set(&mut kv, "qg.template", &mut cfg.qg.template)?;
        set(&mut kv, "qg.epochs", &mut cfg.qg.train.epochs)?;
        set(&mut kv, "qg.batch_size", &mut cfg.qg.train.batch_size)?;
        set(&mut kv, "qg.input_budget", &mut cfg.qg.train.input_budget)?;
        set(&mut kv, "qg.hidden", &mut cfg.qg.model.hidden)?;
        set(&mut kv, "qg.max_vocab", &mut cfg.qg.model.max_vocab)?;
        set(&mut kv, "qg.learning_rate", &mut cfg.qg.model.learning_rate)?;
        set(
            &mut kv,
            "qg.max_new_tokens",
            &mut cfg.qg.decode.max_new_tokens,
        )?;
        cfg.qg.model.max_positions = cfg.qg.decode.max_new_tokens + 1;

        set(&mut kv, "mining.max_candidates", &mut cfg.max_candidates)?;

        set(&mut kv, "encoder.backend", &mut cfg.encoder.backend)?;
        set(&mut kv, "encoder.dim", &mut cfg.encoder.dim)?;

        let sel = &mut cfg.train.selection;
        set(&mut kv, "selection.m", &mut sel.m)?;
        set(&mut kv, "selection.gamma", &mut sel.gamma)?;
        set(&mut kv, "selection.s", &mut sel.s)?;
        set(&mut kv, "selection.distribution", &mut sel.distribution)?;

        let t = &mut cfg.train;
        set(&mut kv, "train.lambda", &mut t.lambda)?;
        set(&mut kv, "train.tau", &mut t.tau)?;
        set(&mut kv, "train.epochs", &mut t.epochs)?;
        set(&mut kv, "train.batch_size", &mut t.batch_size)?;
        set(&mut kv, "train.learning_rate", &mut t.learning_rate)?;
        set(&mut kv, "train.max_answer_len", &mut t.max_answer_len)?;
        set(&mut kv, "train.input_budget", &mut t.input_budget)?;
        set(
            &mut kv,
            "train.resample_each_epoch",
            &mut t.resample_each_epoch,
        )?;

        set(&mut kv, "reader.features", &mut cfg.reader.features)?;
        set(&mut kv, "reader.init_scale", &mut cfg.reader.init_scale)?;
        set(&mut kv, "eval.per_turn_csv", &mut cfg.eval.per_turn_csv)?;
        set(&mut kv, "eval.qg_max_turns", &mut cfg.eval.qg_max_turns)?;

        if let Some(key) = kv.keys().next() {
            return Err(Error::Config(format!("unknown key {key}")));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let sel = &self.train.selection;
        if !(-1.0..=1.0).contains(&sel.gamma) {
            return Err(Error::Config(format!(
                "selection.gamma {} outside [-1, 1]",
                sel.gamma
            )));
        }
        if sel.m == 0 && sel.s > 0 {
            return Err(Error::Config(
                "selection.m must be positive when selection.s > 0".into(),
            ));
        }
        if self.train.lambda < 0.0 || !self.train.lambda.is_finite() {
            return Err(Error::Config(format!(
                "train.lambda {} must be >= 0",
                self.train.lambda
            )));
        }
        if self.encoder.backend == EncoderKind::Table && self.encoder.path.is_none() {
            return Err(Error::Config(
                "encoder.backend = table needs encoder.path".into(),
            ));
        }
        if self.encoder.dim == 0 {
            return Err(Error::Config("encoder.dim must be positive".into()));
        }
        Ok(())
    }
}

fn take<T>(kv: &mut BTreeMap<String, String>, key: &str) -> Result<Option<T>>
where
    T: FromStr,
    T::Err: Display,
{
    kv.remove(key)
        .map(|v| {
            v.parse()
                .map_err(|e| Error::Config(format!("{key}: cannot parse {v:?}: {e}")))
        })
        .transpose()
}

fn set<T>(kv: &mut BTreeMap<String, String>, key: &str, slot: &mut T) -> Result<()>
where
    T: FromStr,
    T::Err: Display,
{
    if let Some(v) = take(kv, key)? {
        *slot = v;
    }
    Ok(())
}
