use std::fs;
use std::path::Path;
use std::process::Command;

use cotah::config::{GeneratorKind, PipelineConfig};
use cotah::pipeline::{compare_runs, read_report, run_all, run_stage, write_toy_setup, Stage};
use cotah::Error;

fn toy(dir: &Path, dialogs: usize) -> PipelineConfig {
    let path = write_toy_setup(dir, dialogs, 1000).unwrap();
    PipelineConfig::load(&path).unwrap()
}

#[test]
fn neural_backend_smoke_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 6);
    cfg.qg.backend = GeneratorKind::Neural;
    cfg.qg.train.epochs = 1;
    cfg.qg.model.hidden = 8;
    cfg.train.epochs = 1;
    let lines = run_all(&cfg).unwrap();
    assert_eq!(lines.len(), 9);
    let report = read_report(&cfg.workdir.join("report/report.json")).unwrap();
    assert!(report.questions > 0);
    assert!(cfg.workdir.join("report/per_turn.csv").is_file());
    assert!(cfg.workdir.join("eval-qg/metrics.json").is_file());
}

#[test]
fn stages_refuse_to_run_without_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), 4);
    let err = run_stage(Stage::Select, &cfg).unwrap_err();
    assert!(matches!(err, Error::MissingArtifact { .. }));
    assert!(
        err.to_string().starts_with("generate artifacts missing"),
        "{err}"
    );
    assert!(run_stage(Stage::Evaluate, &cfg)
        .unwrap_err()
        .to_string()
        .starts_with("split artifacts missing"));
    assert!(run_stage(Stage::Report, &cfg)
        .unwrap_err()
        .to_string()
        .starts_with("evaluate artifacts missing"));
}

#[test]
fn rerunning_select_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), 8);
    for s in [
        Stage::Split,
        Stage::TrainQg,
        Stage::Mine,
        Stage::Generate,
        Stage::Select,
    ] {
        run_stage(s, &cfg).unwrap();
    }
    let path = cfg.workdir.join("select/augmented.jsonl");
    let first = fs::read(&path).unwrap();
    assert!(!first.is_empty());
    run_stage(Stage::Select, &cfg).unwrap();
    assert_eq!(first, fs::read(&path).unwrap());
}

#[test]
fn baseline_skips_the_selector() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = toy(dir.path(), 6);
    cfg.train.selection.s = 0;
    for s in [Stage::Split, Stage::TrainQa, Stage::Evaluate, Stage::Report] {
        run_stage(s, &cfg).unwrap();
    }
    let log = fs::read_to_string(cfg.workdir.join("train-qa/train_log.jsonl")).unwrap();
    assert!(log.contains("\"augmented\":0"), "{log}");
}

#[test]
fn comparing_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = toy(dir.path(), 6);
    run_all(&cfg).unwrap();
    let a = read_report(&cfg.workdir.join("report/report.json")).unwrap();
    let same = compare_runs(&a, &a).unwrap();
    assert_eq!((same.f1, same.heq_q, same.heq_d), (0.0, 0.0, 0.0));
    assert!(same.per_turn.iter().all(|t| t.delta == Some(0.0)));

    let mut other = a.clone();
    other.split_digest = "different".into();
    assert!(compare_runs(&a, &other).unwrap_err().is_validation());
}

#[test]
fn cli_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_cotah");
    let out = Command::new(bin)
        .args(["toy", "--out"])
        .arg(dir.path())
        .args(["--dialogs", "5"])
        .output()
        .unwrap();
    assert!(out.status.success());
    let conf = dir.path().join("toy.conf");

    let out = Command::new(bin)
        .arg("select")
        .arg("--config")
        .arg(&conf)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("generate artifacts missing"));

    let bad = dir.path().join("bad.conf");
    fs::write(
        &bad,
        "corpus.train = train.json\ncorpus.dev = dev.json\nselection.q = 3\n",
    )
    .unwrap();
    let out = Command::new(bin)
        .arg("split")
        .arg("--config")
        .arg(&bad)
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    let work = dir.path().join("elsewhere");
    let out = Command::new(bin)
        .arg("all")
        .arg("--config")
        .arg(&conf)
        .args(["--seed", "7", "--workdir"])
        .arg(&work)
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(work.join("report/report.json").is_file());
    let split = fs::read_to_string(work.join("split/split.json")).unwrap();
    assert!(split.contains("\"seed\": 7"));
}
