//! Stage orchestration. Every stage reads the corpus files named in the
//! config plus artifacts of earlier stages, and writes into
//! `<workdir>/<stage>/`. JSONL outputs are deterministic for a fixed config.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::thread;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::answer_mining::{mine_candidates, CandidateAnswer, CandidateRecord, HeuristicTagger};
use crate::config::{EncoderKind, GeneratorKind, PipelineConfig};
use crate::corpus::{load_corpus, split_dev_test, Dialog, Split};
use crate::error::{Error, Result};
use crate::eval::{token_f1, Report, TurnResult};
use crate::qa::train::{predict, train_qa, AugmentationMap, Prediction, TurnAugmentation};
use crate::qa::LinearSpanReader;
use crate::qg::{
    generate_slot_questions, qg_metrics, train_cqg, training_pairs, GeneratorBackend,
    NeuralGenerator, QgMetrics, QgTrainLog, SyntheticQuestion, SyntheticRecord, TemplateGenerator,
};
use crate::rng;
use crate::selector::{
    select_for_turn, AugmentedRecord, CachedEncoder, HashingEncoder, SentenceEncoder, TableEncoder,
    TurnSelection,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Split,
    TrainQg,
    EvalQg,
    Mine,
    Generate,
    Select,
    TrainQa,
    Evaluate,
    Report,
}

impl Stage {
    /// Execution order for a full run.
    pub const ALL: [Stage; 9] = [
        Stage::Split,
        Stage::TrainQg,
        Stage::EvalQg,
        Stage::Mine,
        Stage::Generate,
        Stage::Select,
        Stage::TrainQa,
        Stage::Evaluate,
        Stage::Report,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Split => "split",
            Stage::TrainQg => "train-qg",
            Stage::EvalQg => "eval-qg",
            Stage::Mine => "mine",
            Stage::Generate => "generate",
            Stage::Select => "select",
            Stage::TrainQa => "train-qa",
            Stage::Evaluate => "evaluate",
            Stage::Report => "report",
        }
    }

    /// The file whose presence marks the stage as done.
    fn marker(self) -> &'static str {
        match self {
            Stage::Split => "split.json",
            Stage::TrainQg => "generator.json",
            Stage::EvalQg => "metrics.json",
            Stage::Mine => "candidates.jsonl",
            Stage::Generate => "synthetic.jsonl",
            Stage::Select => "selections.jsonl",
            Stage::TrainQa => "reader.json",
            Stage::Evaluate => "turn_results.jsonl",
            Stage::Report => "report.json",
        }
    }

    /// Direct prerequisites. The selector output is only needed when
    /// augmentation is on.
    pub fn prerequisites(self, cfg: &PipelineConfig) -> Vec<Stage> {
        match self {
            Stage::Split | Stage::Mine => vec![],
            Stage::TrainQg => vec![Stage::Split],
            Stage::EvalQg => vec![Stage::Split, Stage::TrainQg],
            Stage::Generate => vec![Stage::Mine, Stage::TrainQg],
            Stage::Select => vec![Stage::Generate],
            Stage::TrainQa if cfg.train.augmenting() => vec![Stage::Split, Stage::Select],
            Stage::TrainQa => vec![Stage::Split],
            Stage::Evaluate => vec![Stage::Split, Stage::TrainQa],
            Stage::Report => vec![Stage::Evaluate],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown stage {s:?}")))
    }
}

/// Paths of one run's artifacts.
#[derive(Debug, Clone)]
pub struct Workdir {
    root: PathBuf,
}

impl Workdir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn stage_dir(&self, stage: Stage) -> PathBuf {
        self.root.join(stage.name())
    }

    pub fn path(&self, stage: Stage, file: &str) -> PathBuf {
        self.stage_dir(stage).join(file)
    }

    pub fn require(&self, stage: Stage) -> Result<PathBuf> {
        let p = self.path(stage, stage.marker());
        if p.is_file() {
            Ok(p)
        } else {
            Err(Error::MissingArtifact {
                stage: stage.name().into(),
                path: p,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// Artifact IO

pub fn write_jsonl<'a, T: Serialize + 'a>(
    path: &Path,
    rows: impl IntoIterator<Item = &'a T>,
) -> Result<()> {
    let mut out = Vec::new();
    for r in rows {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Backend(e.to_string()))?;
        out.push(b'\n');
    }
    write_bytes(path, &out)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        rows.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            context: format!("{}:{}", path.display(), n + 1),
            message: e.to_string(),
        })?);
    }
    Ok(rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = serde_json::to_vec_pretty(value).map_err(|e| Error::Backend(e.to_string()))?;
    out.push(b'\n');
    write_bytes(path, &out)
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        context: path.display().to_string(),
        message: e.to_string(),
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Maps `f` over `items` on all cores, keeping input order.
fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U> + Sync,
{
    if items.is_empty() {
        return Ok(Vec::new());
    }
    let threads = thread::available_parallelism()
        .map_or(1, |n| n.get())
        .min(items.len());
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    thread::scope(|s| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| s.spawn(move || c.iter().map(f).collect::<Result<Vec<U>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(h.join().expect("worker panicked")?);
        }
        Ok(out)
    })
}

fn by_id(dialogs: &[Dialog]) -> BTreeMap<&str, &Dialog> {
    dialogs.iter().map(|d| (d.dialog_id.as_str(), d)).collect()
}

fn lookup<'a>(index: &BTreeMap<&str, &'a Dialog>, id: &str, what: &str) -> Result<&'a Dialog> {
    index
        .get(id)
        .copied()
        .ok_or_else(|| Error::Validation(format!("{what} refers to unknown dialog {id}")))
}

/// Digest of the sorted test-side dialog ids.
pub fn split_digest(split: &Split) -> String {
    rng::digest(split.test_dialog_ids.iter().map(String::as_str))
}

// ---------------------------------------------------------------------------
// Stage records

/// Per-turn reference and generation written by eval-qg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QgSample {
    pub dialog_id: String,
    pub k: usize,
    pub reference: String,
    pub generated: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemplateCheckpoint {
    pub backend: GeneratorKind,
    pub template: String,
}

// ---------------------------------------------------------------------------
// Stages

/// Runs one stage after checking its prerequisites; returns a one-line
/// summary.
pub fn run_stage(stage: Stage, cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let wd = Workdir::new(&cfg.workdir);
    for p in stage.prerequisites(cfg) {
        wd.require(p)?;
    }
    match stage {
        Stage::Split => stage_split(cfg, &wd),
        Stage::TrainQg => stage_train_qg(cfg, &wd),
        Stage::EvalQg => stage_eval_qg(cfg, &wd),
        Stage::Mine => stage_mine(cfg, &wd),
        Stage::Generate => stage_generate(cfg, &wd),
        Stage::Select => stage_select(cfg, &wd),
        Stage::TrainQa => stage_train_qa(cfg, &wd),
        Stage::Evaluate => stage_evaluate(cfg, &wd),
        Stage::Report => stage_report(cfg, &wd),
    }
}

/// All nine stages in order.
pub fn run_all(cfg: &PipelineConfig) -> Result<Vec<String>> {
    Stage::ALL
        .into_iter()
        .map(|s| run_stage(s, cfg).map(|msg| format!("{s}: {msg}")))
        .collect()
}

fn stage_split(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_dev)?;
    let split = split_dev_test(&dialogs, cfg.seed)?;
    let (dev, test) = split.side_counts(&dialogs);
    write_json(&wd.path(Stage::Split, "split.json"), &split)?;
    Ok(format!(
        "{} dev dialogs ({dev} questions), {} test dialogs ({test} questions)",
        split.dev_dialog_ids.len(),
        split.test_dialog_ids.len()
    ))
}

fn load_split(wd: &Workdir) -> Result<Split> {
    read_json(&wd.path(Stage::Split, "split.json"))
}

fn new_generator(cfg: &PipelineConfig) -> Box<dyn GeneratorBackend> {
    match cfg.qg.backend {
        GeneratorKind::Neural => Box::new(NeuralGenerator::new(cfg.qg.model)),
        GeneratorKind::Template => Box::new(TemplateGenerator::new(cfg.qg.template.clone())),
    }
}

fn load_generator(cfg: &PipelineConfig, wd: &Workdir) -> Result<Box<dyn GeneratorBackend>> {
    let path = wd.path(Stage::TrainQg, "generator.json");
    match cfg.qg.backend {
        GeneratorKind::Neural => {
            let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            Ok(Box::new(NeuralGenerator::from_json(&json)?))
        }
        GeneratorKind::Template => {
            let ck: TemplateCheckpoint = read_json(&path)?;
            if ck.backend != GeneratorKind::Template {
                return Err(Error::Validation(format!(
                    "{} holds a {:?} generator but the config asks for template",
                    path.display(),
                    ck.backend
                )));
            }
            Ok(Box::new(TemplateGenerator::new(ck.template)))
        }
    }
}

fn stage_train_qg(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_train)?;
    let path = wd.path(Stage::TrainQg, "generator.json");
    let log = match cfg.qg.backend {
        GeneratorKind::Neural => {
            let mut g = NeuralGenerator::new(cfg.qg.model);
            let log = train_cqg(&mut g, &dialogs, &cfg.qg.train)?;
            write_bytes(&path, g.to_json()?.as_bytes())?;
            log
        }
        GeneratorKind::Template => {
            let mut g = new_generator(cfg);
            let log = train_cqg(g.as_mut(), &dialogs, &cfg.qg.train)?;
            write_json(
                &path,
                &TemplateCheckpoint {
                    backend: GeneratorKind::Template,
                    template: cfg.qg.template.clone(),
                },
            )?;
            log
        }
    };
    write_json(&wd.path(Stage::TrainQg, "train_log.json"), &log)?;
    Ok(format!(
        "{} pairs, loss {:.4} -> {:.4}",
        log.pairs, log.loss_before, log.loss_after
    ))
}

/// Training log of the question generator, if train-qg has run.
pub fn read_qg_log(wd: &Workdir) -> Result<QgTrainLog> {
    read_json(&wd.path(Stage::TrainQg, "train_log.json"))
}

fn stage_eval_qg(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dev = load_corpus(&cfg.corpus_dev)?;
    let split = load_split(wd)?;
    let dialogs: Vec<Dialog> = split.select(&dev, false).into_iter().cloned().collect();
    let generator = load_generator(cfg, wd)?;
    let pairs = training_pairs(&dialogs, cfg.qg.train.input_budget)?;
    let mut keys = Vec::with_capacity(pairs.len());
    for d in &dialogs {
        for (k, t) in d.turns.iter().enumerate() {
            keys.push((d.dialog_id.clone(), k, t.question.clone()));
        }
    }
    let limit = match cfg.eval.qg_max_turns {
        0 => pairs.len(),
        n => n.min(pairs.len()),
    };
    let jobs: Vec<_> = keys.into_iter().zip(pairs).take(limit).collect();
    let decode = cfg.qg.decode;
    let samples = par_map(&jobs, |((dialog_id, k, reference), pair)| {
        Ok(QgSample {
            dialog_id: dialog_id.clone(),
            k: *k,
            reference: reference.clone(),
            generated: generator.generate(&pair.input, &decode)?,
        })
    })?;
    let refs: Vec<&str> = samples.iter().map(|s| s.reference.as_str()).collect();
    let hyps: Vec<&str> = samples.iter().map(|s| s.generated.as_str()).collect();
    let metrics = qg_metrics(&refs, &hyps)?;
    write_jsonl(&wd.path(Stage::EvalQg, "samples.jsonl"), &samples)?;
    write_json(&wd.path(Stage::EvalQg, "metrics.json"), &metrics)?;
    Ok(format!(
        "{} turns, BLEU-1 {:.4}, BLEU-4 {:.4}, ROUGE-L {:.4}",
        samples.len(),
        metrics.bleu1,
        metrics.bleu4,
        metrics.rouge_l
    ))
}

pub fn read_qg_metrics(wd: &Workdir) -> Result<QgMetrics> {
    read_json(&wd.path(Stage::EvalQg, "metrics.json"))
}

/// Slots that can feed some later turn: `0 .. len - 1`.
fn usable_slots(d: &Dialog) -> std::ops::Range<usize> {
    0..d.turns.len().saturating_sub(1)
}

fn stage_mine(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_train)?;
    let tagger = HeuristicTagger::default();
    let rows = par_map(&dialogs, |d| {
        let mut rows = Vec::new();
        for slot in usable_slots(d) {
            for c in mine_candidates(d, slot, &tagger, cfg.max_candidates)? {
                rows.push(CandidateRecord::new(&d.dialog_id, &c));
            }
        }
        Ok(rows)
    })?;
    let rows: Vec<CandidateRecord> = rows.into_iter().flatten().collect();
    write_jsonl(&wd.path(Stage::Mine, "candidates.jsonl"), &rows)?;
    Ok(format!(
        "{} candidates from {} dialogs",
        rows.len(),
        dialogs.len()
    ))
}

fn stage_generate(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_train)?;
    let index = by_id(&dialogs);
    let records: Vec<CandidateRecord> = read_jsonl(&wd.path(Stage::Mine, "candidates.jsonl"))?;
    let mut grouped: BTreeMap<&str, BTreeMap<usize, Vec<CandidateAnswer>>> = BTreeMap::new();
    for r in &records {
        lookup(&index, &r.dialog_id, "candidate")?;
        grouped
            .entry(r.dialog_id.as_str())
            .or_default()
            .entry(r.slot)
            .or_default()
            .push(r.candidate());
    }
    let generator = load_generator(cfg, wd)?;
    let jobs: Vec<_> = grouped.into_iter().collect();
    let rows = par_map(&jobs, |(id, slots)| {
        let d = index[id];
        let mut rows = Vec::new();
        for (&slot, candidates) in slots {
            if slot + 1 >= d.turns.len() {
                return Err(Error::Validation(format!(
                    "candidate slot {slot} out of range for dialog {id}"
                )));
            }
            let qs = generate_slot_questions(
                generator.as_ref(),
                d,
                slot,
                candidates,
                &cfg.qg.decode,
                cfg.qg.train.input_budget,
            )?;
            rows.extend(qs.iter().map(|q| SyntheticRecord::new(id, q)));
        }
        Ok(rows)
    })?;
    let rows: Vec<SyntheticRecord> = rows.into_iter().flatten().collect();
    write_jsonl(&wd.path(Stage::Generate, "synthetic.jsonl"), &rows)?;
    Ok(format!("{} synthetic questions", rows.len()))
}

fn make_encoder(cfg: &PipelineConfig) -> Result<Box<dyn SentenceEncoder>> {
    Ok(match cfg.encoder.backend {
        EncoderKind::Hashing => Box::new(HashingEncoder::new(cfg.encoder.dim)),
        EncoderKind::Table => {
            let path = cfg.encoder.path.as_ref().ok_or_else(|| {
                Error::Config("encoder.backend = table needs encoder.path".into())
            })?;
            Box::new(TableEncoder::load(path)?)
        }
    })
}

fn stage_select(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_train)?;
    let index = by_id(&dialogs);
    let records: Vec<SyntheticRecord> = read_jsonl(&wd.path(Stage::Generate, "synthetic.jsonl"))?;
    let mut grouped: BTreeMap<&str, Vec<SyntheticQuestion>> = BTreeMap::new();
    for r in &records {
        let d = lookup(&index, &r.dialog_id, "synthetic question")?;
        grouped
            .entry(r.dialog_id.as_str())
            .or_default()
            .push(r.question(&d.document)?);
    }
    let encoder = make_encoder(cfg)?;
    let selections = par_map(&dialogs, |d| {
        let cached = CachedEncoder::new(encoder.as_ref());
        let synthetic = grouped
            .get(d.dialog_id.as_str())
            .map_or(&[][..], Vec::as_slice);
        (cfg.train.tau.max(1)..d.turns.len())
            .map(|k| select_for_turn(d, k, synthetic, &cfg.train.selection, &cached))
            .collect::<Result<Vec<_>>>()
    })?;
    let selections: Vec<TurnSelection> = selections.into_iter().flatten().collect();
    let augmented: Vec<AugmentedRecord> = selections.iter().map(AugmentedRecord::from).collect();
    write_jsonl(&wd.path(Stage::Select, "augmented.jsonl"), &augmented)?;
    write_jsonl(&wd.path(Stage::Select, "selections.jsonl"), &selections)?;
    let picked: usize = selections.iter().map(|s| s.selected.len()).sum();
    Ok(format!(
        "{} turns augmented with {picked} synthetic questions",
        selections.len()
    ))
}

fn stage_train_qa(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dialogs = load_corpus(&cfg.corpus_train)?;
    let mut augment = AugmentationMap::new();
    if cfg.train.augmenting() {
        let rows: Vec<TurnSelection> = read_jsonl(&wd.path(Stage::Select, "selections.jsonl"))?;
        for s in rows {
            augment.insert(
                (s.dialog_id, s.k),
                TurnAugmentation {
                    pool: s.pool,
                    history: s.history,
                },
            );
        }
    }
    let mut reader = LinearSpanReader::new(cfg.reader.features, cfg.seed, cfg.reader.init_scale);
    let log = train_qa(&mut reader, &dialogs, &augment, &cfg.train)?;
    write_json(&wd.path(Stage::TrainQa, "reader.json"), &reader)?;
    write_jsonl(&wd.path(Stage::TrainQa, "train_log.jsonl"), &log.epochs)?;
    write_jsonl(&wd.path(Stage::TrainQa, "steps.jsonl"), &log.steps)?;
    let last = log
        .epochs
        .last()
        .ok_or_else(|| Error::InvalidArgument("train.epochs must be at least 1".into()))?;
    Ok(format!(
        "{} epochs, final l_ce {:.4}, l_cons {:.4} ({} augmented turns)",
        log.epochs.len(),
        last.mean_l_ce,
        last.mean_l_cons,
        last.augmented
    ))
}

/// Epoch summaries written by train-qa.
pub fn read_train_log(wd: &Workdir) -> Result<Vec<crate::qa::train::EpochLog>> {
    read_jsonl(&wd.path(Stage::TrainQa, "train_log.jsonl"))
}

fn stage_evaluate(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let dev = load_corpus(&cfg.corpus_dev)?;
    let split = load_split(wd)?;
    let test: Vec<&Dialog> = split.select(&dev, true);
    if test.len() != split.test_dialog_ids.len() {
        return Err(Error::Validation(format!(
            "split lists {} test dialogs but {} are in {}",
            split.test_dialog_ids.len(),
            test.len(),
            cfg.corpus_dev.display()
        )));
    }
    let reader: LinearSpanReader = read_json(&wd.path(Stage::TrainQa, "reader.json"))?;
    let reader = LinearSpanReader::with_weights(reader.features, reader.weights)?;
    let out = par_map(&test, |d| {
        let mut rows = Vec::with_capacity(d.turns.len());
        for (k, turn) in d.turns.iter().enumerate() {
            let (p, _) = predict(&reader, d, k, &cfg.train)?;
            let result = TurnResult {
                dialog_id: d.dialog_id.clone(),
                k,
                model_f1: token_f1(&p.span_text, &turn.reference_texts()),
                human_f1: turn.human_f1,
            };
            rows.push((p, result));
        }
        Ok(rows)
    })?;
    let (predictions, results): (Vec<Prediction>, Vec<TurnResult>) =
        out.into_iter().flatten().unzip();
    write_jsonl(&wd.path(Stage::Evaluate, "predictions.jsonl"), &predictions)?;
    write_jsonl(&wd.path(Stage::Evaluate, "turn_results.jsonl"), &results)?;
    Ok(format!("{} test questions scored", results.len()))
}

fn stage_report(cfg: &PipelineConfig, wd: &Workdir) -> Result<String> {
    let results: Vec<TurnResult> = read_jsonl(&wd.path(Stage::Evaluate, "turn_results.jsonl"))?;
    let split = load_split(wd)?;
    let report = Report::from_results(&results, split_digest(&split));
    write_json(&wd.path(Stage::Report, "report.json"), &report)?;
    if cfg.eval.per_turn_csv {
        write_bytes(
            &wd.path(Stage::Report, "per_turn.csv"),
            report.per_turn_csv().as_bytes(),
        )?;
    }
    Ok(format!(
        "F1 {:.2}, HEQ-Q {:.2}, HEQ-D {:.2} over {} questions",
        report.f1, report.heq_q, report.heq_d, report.questions
    ))
}

pub fn read_report(path: &Path) -> Result<Report> {
    read_json(path)
}

// ---------------------------------------------------------------------------
// Comparing runs

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnDelta {
    pub k: usize,
    pub f1_a: Option<f64>,
    pub f1_b: Option<f64>,
    /// `b - a` when both runs have the bucket.
    pub delta: Option<f64>,
}

/// Differences `b - a` between two reports on the same test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunComparison {
    pub f1: f64,
    pub heq_q: f64,
    pub heq_d: f64,
    pub per_turn: Vec<TurnDelta>,
}

pub fn compare_runs(a: &Report, b: &Report) -> Result<RunComparison> {
    if a.split_digest != b.split_digest {
        return Err(Error::Validation(format!(
            "reports use different test splits ({} vs {})",
            a.split_digest, b.split_digest
        )));
    }
    let mut buckets: BTreeMap<usize, (Option<f64>, Option<f64>)> = BTreeMap::new();
    for t in &a.per_turn {
        buckets.entry(t.k).or_default().0 = Some(t.f1);
    }
    for t in &b.per_turn {
        buckets.entry(t.k).or_default().1 = Some(t.f1);
    }
    Ok(RunComparison {
        f1: b.f1 - a.f1,
        heq_q: b.heq_q - a.heq_q,
        heq_d: b.heq_d - a.heq_d,
        per_turn: buckets
            .into_iter()
            .map(|(k, (f1_a, f1_b))| TurnDelta {
                k,
                f1_a,
                f1_b,
                delta: f1_a.zip(f1_b).map(|(x, y)| y - x),
            })
            .collect(),
    })
}

impl fmt::Display for RunComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "metric   delta")?;
        writeln!(f, "F1       {:+.2}", self.f1)?;
        writeln!(f, "HEQ-Q    {:+.2}", self.heq_q)?;
        writeln!(f, "HEQ-D    {:+.2}", self.heq_d)?;
        writeln!(f, "k  f1_a    f1_b    delta")?;
        let cell = |v: Option<f64>, signed: bool| match (v, signed) {
            (Some(x), true) => format!("{x:+.2}"),
            (Some(x), false) => format!("{x:.2}"),
            (None, _) => "-".into(),
        };
        for t in &self.per_turn {
            writeln!(
                f,
                "{:<2} {:<7} {:<7} {}",
                t.k,
                cell(t.f1_a, false),
                cell(t.f1_b, false),
                cell(t.delta, true)
            )?;
        }
        Ok(())
    }
}

/// Writes a toy corpus pair plus a config that runs the whole pipeline on it
/// with the template generator and hashing encoder.
pub fn write_toy_setup(dir: &Path, dialogs: usize, seed: u64) -> Result<PathBuf> {
    let train = crate::toy::toy_corpus(dialogs, seed);
    let dev: Vec<Dialog> = crate::toy::toy_corpus(dialogs, seed.wrapping_add(1))
        .into_iter()
        .map(|mut d| {
            d.dialog_id = format!("dev_{}", d.dialog_id);
            d.document.doc_id = d.dialog_id.clone();
            d
        })
        .collect();
    write_json(
        &dir.join("train.json"),
        &crate::corpus::to_quac_json(&train),
    )?;
    write_json(&dir.join("dev.json"), &crate::corpus::to_quac_json(&dev))?;
    let cfg_path = dir.join("toy.conf");
    let text = format!(
        "# toy corpus run\ncorpus.train = train.json\ncorpus.dev = dev.json\nworkdir = work\n\
         seed = {seed}\nqg.backend = template\nencoder.backend = hashing\n"
    );
    write_bytes(&cfg_path, text.as_bytes())?;
    Ok(cfg_path)
}
