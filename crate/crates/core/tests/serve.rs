mod common;

use common::*;
use scenebench::schema::RoadScene;
use serde_json::{json, Value};

fn responses(out: &std::process::Output) -> Vec<Value> {
    stdout(out).lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

#[test]
fn empty_input_terminates_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_with_stdin(&["serve"], dir.path(), "");
    assert!(out.status.success());
    assert!(out.stdout.is_empty());
}

#[test]
fn recovers_after_garbage() {
    let dir = tempfile::tempdir().unwrap();
    let input = "{{{ not json\n{\"op\":\"parse\",\"task\":\"lane_count\",\"text\":\"Three lanes\"}\n";
    let out = run_with_stdin(&["serve"], dir.path(), input);
    let r = responses(&out);
    assert_eq!(r.len(), 2);
    assert_eq!((&r[0]["ok"], &r[0]["error"], &r[0]["line"]), (&json!(false), &json!("parse"), &json!(1)));
    assert_eq!(r[1]["result"]["value"], json!({"task": "lane_count", "value": 3}));
}

#[test]
fn reward_matches_cli_bit_for_bit() {
    let dir = tempfile::tempdir().unwrap();
    run(&["gen", "--count", "25", "--out", "g.jsonl", "--seed", "6"], dir.path());
    run(&["corrupt", "--input", "g.jsonl", "--out", "p.jsonl", "--burst", "2", "--seed", "6"], dir.path());
    let cli = run(&["reward", "--pred", "p.jsonl", "--gt", "g.jsonl"], dir.path());
    assert!(cli.status.success());

    let preds = std::fs::read_to_string(dir.path().join("p.jsonl")).unwrap();
    let gts = std::fs::read_to_string(dir.path().join("g.jsonl")).unwrap();
    let requests: String = preds
        .lines()
        .zip(gts.lines())
        .map(|(p, g)| format!("{{\"op\":\"reward\",\"pred\":{p},\"gt\":{g}}}\n"))
        .collect();
    let served = run_with_stdin(&["serve"], dir.path(), &requests);
    let served = responses(&served);
    let cli_text = stdout(&cli);
    let cli_lines: Vec<&str> = cli_text.lines().collect();
    assert_eq!(served.len(), cli_lines.len());
    for (s, c) in served.iter().zip(cli_lines) {
        assert_eq!(s["ok"], true);
        assert_eq!(serde_json::to_string(&s["result"]).unwrap(), serde_json::to_string(&serde_json::from_str::<Value>(c).unwrap()).unwrap());
    }
}

#[test]
fn one_response_per_line_in_order() {
    let dir = tempfile::tempdir().unwrap();
    let mut input = String::new();
    for i in 0..20 {
        let c = clip(&format!("c{i}"), [attrs(3, 2, RoadScene::Urban); 3]);
        if i % 5 == 3 {
            input.push_str("garbage\n");
        } else if i % 2 == 0 {
            input.push_str(&format!("{}\n", json!({"op": "check", "clip": c})));
        } else {
            let pred = scenebench::schema::PredictionClip::from(&c);
            input.push_str(&format!("{}\n", json!({"op": "reward", "pred": pred, "gt": c})));
        }
    }
    let out = run_with_stdin(&["serve"], dir.path(), &input);
    let r = responses(&out);
    assert_eq!(r.len(), 20);
    for (i, resp) in r.iter().enumerate() {
        if i % 5 == 3 {
            assert_eq!(resp["line"], i + 1);
        } else {
            assert_eq!(resp["result"]["clip_id"], format!("c{i}"));
        }
    }
}

#[test]
fn uses_config_templates() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("t.txt"), "alias road_scene highway = autobahn\n").unwrap();
    std::fs::write(dir.path().join("c.toml"), "templates = \"t.txt\"\n").unwrap();
    let out = run_with_stdin(
        &["serve", "--config", "c.toml"],
        dir.path(),
        "{\"op\":\"parse\",\"task\":\"road_scene\",\"text\":\"on the Autobahn\"}\n",
    );
    assert_eq!(responses(&out)[0]["result"]["value"]["value"], "highway");
}
