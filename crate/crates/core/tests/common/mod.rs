#![allow(dead_code)]

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};

use scenebench::schema::{
    AttributeValue, Clip, Feasibility, FrameAnnotation, LaneChange, PredictionClip, RoadScene, SceneAttributes,
    Topology, TrafficCondition,
};

pub fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_scenebench"))
}

pub fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

pub fn run_with_stdin(args: &[&str], dir: &Path, input: &str) -> Output {
    let mut child = bin()
        .args(args)
        .current_dir(dir)
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .unwrap();
    child.stdin.take().unwrap().write_all(input.as_bytes()).unwrap();
    child.wait_with_output().unwrap()
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

pub fn attrs(lanes: u32, ego: u32, scene: RoadScene) -> SceneAttributes {
    SceneAttributes {
        lane_count: lanes,
        ego_lane_index: ego,
        lane_change: LaneChange {
            left: Feasibility::Infeasible,
            right: Feasibility::Feasible,
        },
        topology: Topology::default(),
        traffic_condition: TrafficCondition::FreeFlow,
        road_scene: scene,
    }
}

pub fn clip(id: &str, frames: impl IntoIterator<Item = SceneAttributes>) -> Clip {
    Clip {
        clip_id: id.into(),
        city: "beijing".into(),
        frames: frames
            .into_iter()
            .enumerate()
            .map(|(i, attributes)| FrameAnnotation {
                frame_id: format!("{id}-f{i}"),
                timestamp_s: i as f64,
                attributes,
            })
            .collect(),
    }
}

/// Every predicted ego index is off by one and the road scene jumps
/// urban <-> highway twice: r_total = 19/24 under the defaults.
pub fn worked_pair() -> (PredictionClip, Clip) {
    use RoadScene::{Highway, Urban};
    let gt = clip("worked", [Urban, Highway, Highway, Urban, Urban].map(|s| attrs(3, 2, s)));
    let mut pred = PredictionClip::from(&gt);
    for f in &mut pred.frames {
        f.set_value(AttributeValue::EgoLaneIndex(1));
    }
    (pred, gt)
}

pub fn write_lines<T: serde::Serialize>(dir: &Path, name: &str, items: &[T]) -> PathBuf {
    let path = dir.join(name);
    let text: String = items
        .iter()
        .map(|i| serde_json::to_string(i).unwrap() + "\n")
        .collect();
    std::fs::write(&path, text).unwrap();
    path
}
