mod common;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;

use common::*;
use viscomp_expserve::{ExpError, ExperimentConfig};

fn rater(cfg: &ExperimentConfig) -> Rater {
    Rater {
        strengths: planted(cfg, 3),
        accuracy: 0.85,
        fail_checks: false,
    }
}

fn cfg() -> ExperimentConfig {
    let mut c = config(25, 120, 40, 2, 17);
    c.snapshot_every = 0;
    c
}

fn uninterrupted(cfg: &ExperimentConfig) -> (viscomp_expserve::Experiment, String) {
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), cfg);
    let r = rater(cfg);
    while script_step(&mut e, &r) {}
    let export = export_text(&e);
    (e.state().clone(), export)
}

fn export_text(e: &viscomp_expserve::Engine) -> String {
    e.state()
        .export(true)
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect()
}

fn log_lines(dir: &Path) -> Vec<String> {
    std::fs::read_to_string(dir.join("events.jsonl"))
        .unwrap()
        .lines()
        .map(str::to_string)
        .collect()
}

#[test]
fn replay_matches_live_state() {
    let cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    let r = rater(&cfg);
    for _ in 0..150 {
        script_step(&mut e, &r);
    }
    let live = e.state().clone();
    let seq = e.seq();
    drop(e);
    let back = open(dir.path(), &cfg);
    assert_eq!(back.seq(), seq);
    assert!(back.state() == &live);
    assert_eq!(log_lines(dir.path()).len() as u64, seq);
}

#[test]
fn rejected_commands_are_not_logged() {
    let cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    let t = start(&mut e, "r").trial.unwrap();
    assert!(choose(&mut e, &t, "nobody").is_err());
    assert_eq!(e.seq(), 1);
    assert_eq!(log_lines(dir.path()).len(), 1);
}

#[test]
fn torn_tail_is_dropped() {
    let cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    let r = rater(&cfg);
    for _ in 0..30 {
        script_step(&mut e, &r);
    }
    let live = e.state().clone();
    drop(e);
    let mut f = OpenOptions::new().append(true).open(dir.path().join("events.jsonl")).unwrap();
    f.write_all(br#"{"seq":31,"at":"2023-11-14T22:13:51Z","cmd":{"type":"cho"#).unwrap();
    drop(f);
    let mut back = open(dir.path(), &cfg);
    assert!(back.state() == &live);
    assert_eq!(back.seq(), 30);
    // The truncated file accepts new appends cleanly.
    script_step(&mut back, &r);
    drop(back);
    let lines = log_lines(dir.path());
    assert_eq!(lines.len(), 31);
    assert!(lines.iter().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn corrupt_middle_line_is_an_error() {
    let cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    let r = rater(&cfg);
    for _ in 0..10 {
        script_step(&mut e, &r);
    }
    drop(e);
    let mut lines = log_lines(dir.path());
    lines[4] = "{not json".into();
    std::fs::write(dir.path().join("events.jsonl"), lines.join("\n") + "\n").unwrap();
    let err = viscomp_expserve::Engine::open(dir.path(), &cfg, Box::new(viscomp_expserve::LogicalClock::default()));
    match err {
        Err(ExpError::Storage(msg)) => assert!(msg.contains(":5:"), "{msg}"),
        Err(other) => panic!("{other:?}"),
        Ok(_) => panic!("opened a corrupt log"),
    }
}

#[test]
fn snapshot_plus_tail_equals_full_replay() {
    let mut cfg = cfg();
    cfg.snapshot_every = 25;
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    let r = rater(&cfg);
    for _ in 0..90 {
        script_step(&mut e, &r);
    }
    let live = e.state().clone();
    drop(e);
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("snapshot.json")).unwrap()).unwrap();
    assert_eq!(snap["seq"], 75);
    let from_snapshot = open(dir.path(), &cfg);
    assert!(from_snapshot.state() == &live);
    drop(from_snapshot);
    std::fs::remove_file(dir.path().join("snapshot.json")).unwrap();
    let from_log = open(dir.path(), &cfg);
    assert!(from_log.state() == &live);
}

#[test]
fn snapshot_cadence_may_change_between_runs() {
    let mut cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    let mut e = open(dir.path(), &cfg);
    script_step(&mut e, &rater(&cfg));
    drop(e);
    cfg.snapshot_every = 7;
    cfg.image_dir = Some("elsewhere".into());
    assert!(viscomp_expserve::Engine::open(dir.path(), &cfg, Box::new(viscomp_expserve::LogicalClock::default())).is_ok());
}

#[test]
fn different_experiment_is_refused() {
    let cfg = cfg();
    let dir = tempfile::tempdir().unwrap();
    drop(open(dir.path(), &cfg));
    let mut other = cfg.clone();
    other.seed += 1;
    let res = viscomp_expserve::Engine::open(dir.path(), &other, Box::new(viscomp_expserve::LogicalClock::default()));
    assert!(matches!(res, Err(ExpError::Config(_))));
}

#[test]
fn crash_mid_session_resumes_to_identical_export() {
    let cfg = cfg();
    let (full_state, full_export) = uninterrupted(&cfg);
    let r = rater(&cfg);
    for crash_at in [1, 17, 63, 141] {
        let dir = tempfile::tempdir().unwrap();
        let mut e = open(dir.path(), &cfg);
        for _ in 0..crash_at {
            script_step(&mut e, &r);
        }
        // Dropped without a final snapshot, as after a kill.
        drop(e);
        let mut e = open(dir.path(), &cfg);
        assert_eq!(e.seq(), crash_at);
        while script_step(&mut e, &r) {}
        assert_eq!(export_text(&e), full_export, "crash after {crash_at}");
        assert!(e.state() == &full_state);
    }
}
