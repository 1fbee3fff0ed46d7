//! Synthetic ground-truth clips sampled from the rule table, and parameterized
//! corruption of clips into imperfect predictions.
//!
//! The generator treats the transition table as a sampler: each frame is drawn
//! uniformly among assignments that pass intra-frame logic and whose
//! transition from the previous frame is valid. Topology flags are the one
//! exception; they are drawn with a low base rate so benchmark labels stay
//! imbalanced.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::consistency::{check_frame_logic, TransitionRuleSet};
use crate::schema::{
    AbsenceReason, AttributeValue, Clip, Feasibility, Field, FrameAnnotation, LaneChange, PredictionClip,
    RoadScene, SceneAttributes, Task, Topology, TrafficCondition, DomainLimits,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SynthError {
    #[error("no valid successor for frame {frame} under the rule table")]
    RuleSetUnsatisfiable { frame: usize },
    #[error("clip length {0} is out of range")]
    BadLength(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorParams {
    pub frames: usize,
    /// Base rate of each topology flag.
    pub topology_rate: f64,
    pub frame_interval_s: f64,
    pub cities: Vec<String>,
}

impl Default for GeneratorParams {
    fn default() -> Self {
        GeneratorParams {
            frames: crate::schema::DEFAULT_CLIP_LEN,
            topology_rate: 0.15,
            frame_interval_s: 1.0,
            cities: ["beijing", "shanghai", "guangzhou", "shenzhen", "hangzhou", "chengdu"]
                .map(String::from)
                .to_vec(),
        }
    }
}

impl GeneratorParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(crate::schema::MIN_CLIP_LEN..=crate::schema::MAX_CLIP_LEN).contains(&self.frames) {
            return Err(format!("frames must lie in [{}, {}]", crate::schema::MIN_CLIP_LEN, crate::schema::MAX_CLIP_LEN));
        }
        if !(0.0..=1.0).contains(&self.topology_rate) {
            return Err(format!("topology_rate must lie in [0, 1], got {}", self.topology_rate));
        }
        if !(self.frame_interval_s.is_finite() && self.frame_interval_s > 0.0) {
            return Err(format!("frame_interval_s must be positive, got {}", self.frame_interval_s));
        }
        if self.cities.is_empty() {
            return Err("cities must not be empty".into());
        }
        Ok(())
    }
}

/// Clip sampler over a fixed rule table and domain.
pub struct ClipSampler<'a> {
    rules: &'a TransitionRuleSet,
    params: GeneratorParams,
    /// Intra-frame valid (lane_count, ego, left, right) tuples.
    lane_states: Vec<[i64; 4]>,
}

impl<'a> ClipSampler<'a> {
    pub fn new(rules: &'a TransitionRuleSet, params: GeneratorParams, limits: &DomainLimits) -> Self {
        let max = i64::from(limits.max_lanes);
        let mut lane_states = Vec::new();
        for lanes in 1..=max {
            for ego in 1..=max {
                for left in 0..2 {
                    for right in 0..2 {
                        let state = [lanes, ego, left, right];
                        if check_frame_logic(&frame_with_lanes(state)).is_empty() {
                            lane_states.push(state);
                        }
                    }
                }
            }
        }
        ClipSampler {
            rules,
            params,
            lane_states,
        }
    }

    pub fn sample(&self, clip_id: String, rng: &mut impl Rng) -> Result<Clip, SynthError> {
        let t = self.params.frames;
        if !(crate::schema::MIN_CLIP_LEN..=crate::schema::MAX_CLIP_LEN).contains(&t) {
            return Err(SynthError::BadLength(t));
        }
        let mut frames: Vec<FrameAnnotation> = Vec::with_capacity(t);
        for i in 0..t {
            let prev = frames.last().map(|f| f.attributes);
            let attributes = self.sample_frame(prev.as_ref(), rng).ok_or(SynthError::RuleSetUnsatisfiable { frame: i })?;
            frames.push(FrameAnnotation {
                frame_id: format!("{clip_id}-f{i}"),
                timestamp_s: i as f64 * self.params.frame_interval_s,
                attributes,
            });
        }
        let city = self.params.cities.choose(rng).cloned().unwrap_or_else(|| "unknown".into());
        Ok(Clip { clip_id, city, frames })
    }

    fn permits(&self, prev: Option<&SceneAttributes>, field: Field, next: i64) -> bool {
        prev.is_none_or(|p| self.rules.permits(field, p.code(field), next))
    }

    fn sample_frame(&self, prev: Option<&SceneAttributes>, rng: &mut impl Rng) -> Option<SceneAttributes> {
        let lane_fields = [
            Field::LaneCount,
            Field::EgoLaneIndex,
            Field::LaneChangeLeft,
            Field::LaneChangeRight,
        ];
        let lanes: Vec<&[i64; 4]> = self
            .lane_states
            .iter()
            .filter(|s| lane_fields.iter().zip(s.iter()).all(|(f, v)| self.permits(prev, *f, *v)))
            .collect();
        let lane = **lanes.choose(rng)?;

        let mut pick = |field: Field, weights: &[f64]| -> Option<i64> {
            let candidates: Vec<(i64, f64)> = (0..weights.len() as i64)
                .filter(|v| self.permits(prev, field, *v))
                .map(|v| (v, weights[v as usize]))
                .filter(|(_, w)| *w > 0.0)
                .collect();
            let total: f64 = candidates.iter().map(|(_, w)| w).sum();
            if candidates.is_empty() {
                return None;
            }
            let mut u = rng.gen::<f64>() * total;
            for (v, w) in &candidates {
                if u < *w {
                    return Some(*v);
                }
                u -= w;
            }
            candidates.last().map(|(v, _)| *v)
        };
        let rate = self.params.topology_rate;
        let flag = [1.0 - rate, rate];
        let junction = pick(Field::Junction, &flag)?;
        let entrance = pick(Field::Entrance, &flag)?;
        let exit = pick(Field::Exit, &flag)?;
        let traffic = pick(Field::TrafficCondition, &[1.0; 3])?;
        let scene = pick(Field::RoadScene, &[1.0; 3])?;

        let mut attrs = frame_with_lanes(lane).attributes;
        attrs.topology = Topology {
            junction: junction == 1,
            entrance: entrance == 1,
            exit: exit == 1,
        };
        attrs.traffic_condition = TrafficCondition::from_code(traffic)?;
        attrs.road_scene = RoadScene::from_code(scene)?;
        Some(attrs)
    }
}

fn frame_with_lanes([lanes, ego, left, right]: [i64; 4]) -> FrameAnnotation {
    FrameAnnotation {
        frame_id: String::new(),
        timestamp_s: 0.0,
        attributes: SceneAttributes {
            lane_count: lanes as u32,
            ego_lane_index: ego as u32,
            lane_change: LaneChange {
                left: Feasibility::from_code(left).expect("binary"),
                right: Feasibility::from_code(right).expect("binary"),
            },
            topology: Topology::default(),
            traffic_condition: TrafficCondition::FreeFlow,
            road_scene: RoadScene::Urban,
        },
    }
}

/// Samples one clip of `frames` frames; deterministic in `seed`.
pub fn sample_clip(rules: &TransitionRuleSet, frames: usize, seed: u64) -> Result<Clip, SynthError> {
    let params = GeneratorParams {
        frames,
        ..GeneratorParams::default()
    };
    let sampler = ClipSampler::new(rules, params, &DomainLimits::default());
    sampler.sample(format!("synth-{seed:016x}"), &mut ChaCha8Rng::seed_from_u64(seed))
}

/// A dataset of `count` clips with ids `synth-00000`, `synth-00001`, ...
pub fn generate_dataset(
    count: usize,
    rules: &TransitionRuleSet,
    params: &GeneratorParams,
    limits: &DomainLimits,
    seed: u64,
) -> Result<Vec<Clip>, SynthError> {
    let sampler = ClipSampler::new(rules, params.clone(), limits);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| sampler.sample(format!("synth-{i:05}"), &mut rng))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// Each frame is corrupted independently.
    #[default]
    Iid,
    /// A contiguous window of frames is corrupted together.
    Burst,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BurstAnchor {
    /// The window covers the last frames of the clip.
    #[default]
    Tail,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaskNoise {
    /// Substitution probability. In burst mode, the probability that the
    /// window is corrupted at all.
    pub substitution: f64,
    /// Per-frame probability that the prediction is dropped.
    pub drop: f64,
    pub mode: DriftMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NoiseModel {
    pub burst_len: usize,
    pub burst_anchor: BurstAnchor,
    pub tasks: BTreeMap<Task, TaskNoise>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            burst_len: 3,
            burst_anchor: BurstAnchor::Tail,
            tasks: BTreeMap::new(),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self) -> Result<(), String> {
        for (task, noise) in &self.tasks {
            for (name, p) in [("substitution", noise.substitution), ("drop", noise.drop)] {
                if !(0.0..=1.0).contains(&p) {
                    return Err(format!("{task}.{name} must lie in [0, 1], got {p}"));
                }
            }
        }
        if self.burst_len == 0 {
            return Err("burst_len must be at least 1".into());
        }
        Ok(())
    }

    pub fn with_task(mut self, task: Task, noise: TaskNoise) -> Self {
        self.tasks.insert(task, noise);
        self
    }

    /// Occlusion over the last `len` frames: lane count and ego index drift
    /// on every occluded frame.
    pub fn occlusion_burst(len: usize) -> Self {
        let burst = TaskNoise {
            substitution: 1.0,
            drop: 0.0,
            mode: DriftMode::Burst,
        };
        NoiseModel {
            burst_len: len,
            ..NoiseModel::default()
        }
        .with_task(Task::LaneCount, burst)
        .with_task(Task::EgoLaneIndex, burst)
    }
}

fn substitute(value: AttributeValue, limits: &DomainLimits, rng: &mut impl Rng) -> AttributeValue {
    let others: Vec<AttributeValue> = AttributeValue::domain(value.task(), limits)
        .into_iter()
        .filter(|v| *v != value)
        .collect();
    *others.choose(rng).expect("every domain has at least two values")
}

pub fn corrupt(clip: &Clip, noise: &NoiseModel, seed: u64) -> PredictionClip {
    corrupt_with(clip, noise, &DomainLimits::default(), seed)
}

/// Applies the noise model to a ground-truth clip; deterministic in `seed`.
pub fn corrupt_with(clip: &Clip, noise: &NoiseModel, limits: &DomainLimits, seed: u64) -> PredictionClip {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pred = PredictionClip::from(clip);
    let t = clip.frames.len();
    for (task, tn) in &noise.tasks {
        let substituted: Vec<bool> = match tn.mode {
            DriftMode::Iid => (0..t).map(|_| rng.gen::<f64>() < tn.substitution).collect(),
            DriftMode::Burst => {
                let len = noise.burst_len.min(t);
                let start = match noise.burst_anchor {
                    BurstAnchor::Tail => t - len,
                    BurstAnchor::Random => rng.gen_range(0..=t - len),
                };
                let hit = rng.gen::<f64>() < tn.substitution;
                (0..t).map(|i| hit && (start..start + len).contains(&i)).collect()
            }
        };
        for (i, frame) in pred.frames.iter_mut().enumerate() {
            if rng.gen::<f64>() < tn.drop {
                frame.set_absent(*task, AbsenceReason::NotAnswered);
            } else if substituted[i] {
                let truth = clip.frames[i].attributes.get(*task);
                frame.set_value(substitute(truth, limits, &mut rng));
            }
        }
    }
    pred
}
