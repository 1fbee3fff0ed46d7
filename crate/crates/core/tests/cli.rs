mod common;

use common::*;
use scenebench::config::Config;
use scenebench::consistency::TransitionRuleSet;
use scenebench::metrics::BenchmarkReport;
use scenebench::reward::RewardBreakdown;
use scenebench::schema::{Clip, PredictionClip, RoadScene};

#[test]
fn generated_file_validates() {
    let dir = tempfile::tempdir().unwrap();
    let gen = run(&["gen", "--count", "50", "--out", "g.jsonl", "--seed", "3"], dir.path());
    assert!(gen.status.success(), "{}", stderr(&gen));
    let out = run(&["validate", "--input", "g.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", stderr(&out));
    assert_eq!(stdout(&out).lines().count(), 50);
}

#[test]
fn validate_reports_violations_with_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let bad = clip("bad", [3, 3, 1, 3, 3].map(|n| attrs(n, 1, RoadScene::Urban)));
    write_lines(dir.path(), "bad.jsonl", &[bad]);
    let out = run(&["validate", "--input", "bad.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    let report: serde_json::Value = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(report["pass"], false);
    assert_eq!(report["transition_violations"].as_array().unwrap().len(), 2);
}

#[test]
fn malformed_input_exits_two_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let good = serde_json::to_string(&clip("ok", [attrs(3, 1, RoadScene::Urban); 3])).unwrap();
    std::fs::write(dir.path().join("g.jsonl"), format!("{good}\n{{\"clip_id\": \n")).unwrap();
    let out = run(&["validate", "--input", "g.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("g.jsonl:2:"), "{}", stderr(&out));
}

#[test]
fn unknown_flags_and_missing_files_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["gen", "--out", "x", "--bogus"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"], dir.path()).status.code(), Some(2));
    assert_eq!(run(&["validate", "--input", "missing.jsonl"], dir.path()).status.code(), Some(2));
    std::fs::write(dir.path().join("c.toml"), "[reward]\nlambda = 3.0\n").unwrap();
    assert_eq!(run(&["dump-rules", "--config", "c.toml"], dir.path()).status.code(), Some(2));
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    run(&["gen", "--count", "40", "--out", "g.jsonl", "--seed", "1"], dir.path());
    let out = run(
        &["eval", "--pred", "g.jsonl", "--gt", "g.jsonl", "--json", "r.json", "--breakdown", "b.txt"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let table = stdout(&out);
    let header = table.lines().next().unwrap();
    let titles = [
        "Lane Count",
        "Ego-lane Index",
        "Lane Change Feasibility",
        "Traffic Condition",
        "Road Scene",
        "Road Topology",
        "Overall",
    ];
    let positions: Vec<usize> = titles.iter().map(|t| header.find(t).unwrap()).collect();
    assert!(positions.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(table.lines().nth(2).unwrap().matches("100.00").count(), 14);

    let report: BenchmarkReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    assert_eq!((report.overall_precision_pct, report.overall_recall_pct), (100.0, 100.0));
    assert_eq!(report.config_hash, Config::default().hash());
    assert!(std::fs::read_to_string(dir.path().join("b.txt")).unwrap().contains("road_scene"));
}

#[test]
fn eval_counts_unanswered_against_recall() {
    let dir = tempfile::tempdir().unwrap();
    run(&["gen", "--count", "30", "--out", "g.jsonl", "--seed", "2"], dir.path());
    std::fs::write(dir.path().join("n.toml"), "[noise.tasks.traffic_condition]\ndrop = 0.5\n").unwrap();
    let c = run(
        &["corrupt", "--input", "g.jsonl", "--out", "p.jsonl", "--config", "n.toml", "--seed", "4"],
        dir.path(),
    );
    assert!(c.status.success(), "{}", stderr(&c));
    run(&["eval", "--pred", "p.jsonl", "--gt", "g.jsonl", "--json", "r.json"], dir.path());
    let report: BenchmarkReport = serde_json::from_str(&std::fs::read_to_string(dir.path().join("r.json")).unwrap()).unwrap();
    let traffic = report.tasks.iter().find(|t| t.task == scenebench::schema::Task::TrafficCondition).unwrap();
    assert_eq!(traffic.precision_pct, 100.0);
    assert!(traffic.recall_pct < 100.0);
}

#[test]
fn reward_on_worked_pair_is_nineteen_twenty_fourths() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = worked_pair();
    write_lines(dir.path(), "p.jsonl", &[pred]);
    write_lines(dir.path(), "g.jsonl", &[gt]);
    let out = run(&["reward", "--pred", "p.jsonl", "--gt", "g.jsonl"], dir.path());
    assert!(out.status.success(), "{}", stderr(&out));
    let b: RewardBreakdown = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(format!("{:.12}", b.r_total), format!("{:.12}", 19.0 / 24.0));
    assert!((b.r_total - 19.0 / 24.0).abs() < 1e-12);
}

#[test]
fn reward_respects_config_and_reports_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let (pred, gt) = worked_pair();
    write_lines(dir.path(), "p.jsonl", &[pred.clone()]);
    write_lines(dir.path(), "g.jsonl", &[gt.clone()]);
    std::fs::write(dir.path().join("c.toml"), "[reward]\nlambda = 1.0\n").unwrap();
    let out = run(&["reward", "--pred", "p.jsonl", "--gt", "g.jsonl", "--config", "c.toml"], dir.path());
    let b: RewardBreakdown = serde_json::from_str(stdout(&out).trim()).unwrap();
    assert_eq!(b.r_temporal, 1.0);

    let mut short = pred;
    short.frames.pop();
    write_lines(dir.path(), "s.jsonl", &[short]);
    let out = run(&["reward", "--pred", "s.jsonl", "--gt", "g.jsonl"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("worked"));
}

#[test]
fn commands_are_deterministic_given_seed() {
    let dir = tempfile::tempdir().unwrap();
    let read = |name: &str| std::fs::read(dir.path().join(name)).unwrap();
    run(&["gen", "--count", "10", "--out", "a.jsonl", "--seed", "9"], dir.path());
    run(&["gen", "--count", "10", "--out", "b.jsonl", "--seed", "9"], dir.path());
    run(&["gen", "--count", "10", "--out", "c.jsonl", "--seed", "10"], dir.path());
    assert_eq!(read("a.jsonl"), read("b.jsonl"));
    assert_ne!(read("a.jsonl"), read("c.jsonl"));
    for out in ["p.jsonl", "q.jsonl"] {
        run(&["corrupt", "--input", "a.jsonl", "--out", out, "--burst", "3", "--seed", "5"], dir.path());
    }
    assert_eq!(read("p.jsonl"), read("q.jsonl"));
    let preds: Vec<PredictionClip> = scenebench::io::read_jsonl(&dir.path().join("p.jsonl")).unwrap();
    let gts: Vec<Clip> = scenebench::io::read_jsonl(&dir.path().join("a.jsonl")).unwrap();
    assert!(preds.iter().zip(&gts).any(|(p, g)| *p != PredictionClip::from(g)));
}

#[test]
fn dump_rules_round_trips_through_config() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["dump-rules"], dir.path());
    assert!(out.status.success());
    let cfg = Config::parse(&stdout(&out)).unwrap();
    assert_eq!(cfg.rule_set().unwrap(), TransitionRuleSet::default());
}

#[test]
fn train_toy_writes_trace() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.toml"), "[trainer]\nclips = 8\neval_every = 10\n").unwrap();
    let out = run(
        &["train-toy", "--out", "trace.jsonl", "--steps", "40", "--seed", "1", "--config", "t.toml"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", stderr(&out));
    let points: Vec<serde_json::Value> = scenebench::io::read_jsonl(&dir.path().join("trace.jsonl")).unwrap();
    let steps: Vec<u64> = points.iter().map(|p| p["step"].as_u64().unwrap()).collect();
    assert_eq!(steps, vec![0, 10, 20, 30, 40]);
}
