//! Clip, frame and attribute data model.
//!
//! A ground-truth [`FrameAnnotation`] always carries all six task attributes.
//! A [`PredictionFrame`] may leave any task unanswered, with a reason code, so
//! that parse failures can be told apart from questions the model skipped.
//!
//! Both frame kinds serialize to the same flat record layout, one field per
//! scalar channel ([`Field`]).

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_MAX_LANES: u32 = 8;
pub const DEFAULT_CLIP_LEN: usize = 5;
pub const MIN_CLIP_LEN: usize = 2;
pub const MAX_CLIP_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("frame {frame_id}: missing attribute {task}")]
    MissingAttribute { frame_id: String, task: Task },
    #[error("frame {frame_id}: attribute {task} is only partially present")]
    PartialAttribute { frame_id: String, task: Task },
    #[error("frame {frame_id}: attribute {task} is both answered and marked absent")]
    ConflictingAbsence { frame_id: String, task: Task },
    #[error("clip has no frames")]
    EmptyClip,
    #[error("unknown {what} '{name}'")]
    UnknownName { what: &'static str, name: String },
}

/// The six benchmark tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    LaneCount,
    EgoLaneIndex,
    LaneChange,
    Topology,
    TrafficCondition,
    RoadScene,
}

impl Task {
    pub const ALL: [Task; 6] = [
        Task::LaneCount,
        Task::EgoLaneIndex,
        Task::LaneChange,
        Task::Topology,
        Task::TrafficCondition,
        Task::RoadScene,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Task::LaneCount => "lane_count",
            Task::EgoLaneIndex => "ego_lane_index",
            Task::LaneChange => "lane_change",
            Task::Topology => "topology",
            Task::TrafficCondition => "traffic_condition",
            Task::RoadScene => "road_scene",
        }
    }

    pub fn from_name(name: &str) -> Result<Task, SchemaError> {
        Task::ALL
            .into_iter()
            .find(|t| t.name() == name)
            .ok_or_else(|| SchemaError::UnknownName {
                what: "task",
                name: name.to_string(),
            })
    }

    /// Scalar channels that make up this task's value.
    pub fn fields(self) -> &'static [Field] {
        match self {
            Task::LaneCount => &[Field::LaneCount],
            Task::EgoLaneIndex => &[Field::EgoLaneIndex],
            Task::LaneChange => &[Field::LaneChangeLeft, Field::LaneChangeRight],
            Task::Topology => &[Field::Junction, Field::Entrance, Field::Exit],
            Task::TrafficCondition => &[Field::TrafficCondition],
            Task::RoadScene => &[Field::RoadScene],
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// One scalar channel of a frame record. Field names match the record keys.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Field {
    LaneCount,
    EgoLaneIndex,
    LaneChangeLeft,
    LaneChangeRight,
    Junction,
    Entrance,
    Exit,
    TrafficCondition,
    RoadScene,
}

impl Field {
    pub const ALL: [Field; 9] = [
        Field::LaneCount,
        Field::EgoLaneIndex,
        Field::LaneChangeLeft,
        Field::LaneChangeRight,
        Field::Junction,
        Field::Entrance,
        Field::Exit,
        Field::TrafficCondition,
        Field::RoadScene,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Field::LaneCount => "lane_count",
            Field::EgoLaneIndex => "ego_lane_index",
            Field::LaneChangeLeft => "lane_change_left",
            Field::LaneChangeRight => "lane_change_right",
            Field::Junction => "junction",
            Field::Entrance => "entrance",
            Field::Exit => "exit",
            Field::TrafficCondition => "traffic_condition",
            Field::RoadScene => "road_scene",
        }
    }

    pub fn from_name(name: &str) -> Result<Field, SchemaError> {
        Field::ALL
            .into_iter()
            .find(|f| f.name() == name)
            .ok_or_else(|| SchemaError::UnknownName {
                what: "field",
                name: name.to_string(),
            })
    }

    pub fn task(self) -> Task {
        match self {
            Field::LaneCount => Task::LaneCount,
            Field::EgoLaneIndex => Task::EgoLaneIndex,
            Field::LaneChangeLeft | Field::LaneChangeRight => Task::LaneChange,
            Field::Junction | Field::Entrance | Field::Exit => Task::Topology,
            Field::TrafficCondition => Task::TrafficCondition,
            Field::RoadScene => Task::RoadScene,
        }
    }

    /// Inclusive numeric range of the channel's encoding.
    pub fn code_range(self, limits: &DomainLimits) -> (i64, i64) {
        match self {
            Field::LaneCount | Field::EgoLaneIndex => (1, i64::from(limits.max_lanes)),
            Field::LaneChangeLeft
            | Field::LaneChangeRight
            | Field::Junction
            | Field::Entrance
            | Field::Exit => (0, 1),
            Field::TrafficCondition | Field::RoadScene => (0, 2),
        }
    }

    /// Ordinal or binary channels, where absolute differences are meaningful.
    pub fn is_ordinal(self) -> bool {
        !matches!(self, Field::RoadScene)
    }

    /// Surface name of an encoded value, as used in rule tables.
    pub fn value_name(self, code: i64) -> String {
        match self {
            Field::LaneCount | Field::EgoLaneIndex => code.to_string(),
            Field::LaneChangeLeft | Field::LaneChangeRight => Feasibility::from_code(code)
                .map(|f| f.name().to_string())
                .unwrap_or_else(|| code.to_string()),
            Field::Junction | Field::Entrance | Field::Exit => match code {
                0 => "false".to_string(),
                1 => "true".to_string(),
                c => c.to_string(),
            },
            Field::TrafficCondition => TrafficCondition::from_code(code)
                .map(|t| t.name().to_string())
                .unwrap_or_else(|| code.to_string()),
            Field::RoadScene => RoadScene::from_code(code)
                .map(|s| s.name().to_string())
                .unwrap_or_else(|| code.to_string()),
        }
    }

    /// Inverse of [`Field::value_name`].
    pub fn code_of_name(self, name: &str) -> Option<i64> {
        match self {
            Field::LaneCount | Field::EgoLaneIndex => name.parse().ok(),
            Field::LaneChangeLeft | Field::LaneChangeRight => {
                Feasibility::from_name(name).map(Feasibility::code)
            }
            Field::Junction | Field::Entrance | Field::Exit => match name {
                "false" => Some(0),
                "true" => Some(1),
                _ => None,
            },
            Field::TrafficCondition => TrafficCondition::from_name(name).map(TrafficCondition::code),
            Field::RoadScene => RoadScene::from_name(name).map(RoadScene::code),
        }
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Feasibility {
    Infeasible,
    Feasible,
}

impl Feasibility {
    pub const ALL: [Feasibility; 2] = [Feasibility::Infeasible, Feasibility::Feasible];

    pub fn code(self) -> i64 {
        self as i64
    }

    pub fn from_code(code: i64) -> Option<Self> {
        Self::ALL.get(usize::try_from(code).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Feasibility::Infeasible => "infeasible",
            Feasibility::Feasible => "feasible",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }

    pub fn is_feasible(self) -> bool {
        self == Feasibility::Feasible
    }
}

/// Ordinal traffic level; the declaration order is the encoding order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrafficCondition {
    FreeFlow,
    Moderate,
    Congestion,
}

impl TrafficCondition {
    pub const ALL: [TrafficCondition; 3] = [
        TrafficCondition::FreeFlow,
        TrafficCondition::Moderate,
        TrafficCondition::Congestion,
    ];

    pub fn code(self) -> i64 {
        self as i64
    }

    pub fn from_code(code: i64) -> Option<Self> {
        Self::ALL.get(usize::try_from(code).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            TrafficCondition::FreeFlow => "free_flow",
            TrafficCondition::Moderate => "moderate",
            TrafficCondition::Congestion => "congestion",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoadScene {
    Urban,
    Suburban,
    Highway,
}

impl RoadScene {
    pub const ALL: [RoadScene; 3] = [RoadScene::Urban, RoadScene::Suburban, RoadScene::Highway];

    /// Categorical code; only used for transition tables, never for distances.
    pub fn code(self) -> i64 {
        self as i64
    }

    pub fn from_code(code: i64) -> Option<Self> {
        Self::ALL.get(usize::try_from(code).ok()?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            RoadScene::Urban => "urban",
            RoadScene::Suburban => "suburban",
            RoadScene::Highway => "highway",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LaneChange {
    pub left: Feasibility,
    pub right: Feasibility,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Topology {
    pub junction: bool,
    pub entrance: bool,
    pub exit: bool,
}

/// A value for exactly one of the six tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "task", content = "value", rename_all = "snake_case")]
pub enum AttributeValue {
    LaneCount(u32),
    EgoLaneIndex(u32),
    LaneChange(LaneChange),
    Topology(Topology),
    TrafficCondition(TrafficCondition),
    RoadScene(RoadScene),
}

impl AttributeValue {
    pub fn task(&self) -> Task {
        match self {
            AttributeValue::LaneCount(_) => Task::LaneCount,
            AttributeValue::EgoLaneIndex(_) => Task::EgoLaneIndex,
            AttributeValue::LaneChange(_) => Task::LaneChange,
            AttributeValue::Topology(_) => Task::Topology,
            AttributeValue::TrafficCondition(_) => Task::TrafficCondition,
            AttributeValue::RoadScene(_) => Task::RoadScene,
        }
    }

    /// Numeric encoding of one channel, or `None` if the field belongs to another task.
    pub fn code(&self, field: Field) -> Option<i64> {
        let code = match (self, field) {
            (AttributeValue::LaneCount(n), Field::LaneCount) => i64::from(*n),
            (AttributeValue::EgoLaneIndex(n), Field::EgoLaneIndex) => i64::from(*n),
            (AttributeValue::LaneChange(lc), Field::LaneChangeLeft) => lc.left.code(),
            (AttributeValue::LaneChange(lc), Field::LaneChangeRight) => lc.right.code(),
            (AttributeValue::Topology(t), Field::Junction) => i64::from(t.junction),
            (AttributeValue::Topology(t), Field::Entrance) => i64::from(t.entrance),
            (AttributeValue::Topology(t), Field::Exit) => i64::from(t.exit),
            (AttributeValue::TrafficCondition(t), Field::TrafficCondition) => t.code(),
            (AttributeValue::RoadScene(s), Field::RoadScene) => s.code(),
            _ => return None,
        };
        Some(code)
    }

    /// Every value of a task's domain, in a fixed order.
    pub fn domain(task: Task, limits: &DomainLimits) -> Vec<AttributeValue> {
        match task {
            Task::LaneCount => (1..=limits.max_lanes).map(AttributeValue::LaneCount).collect(),
            Task::EgoLaneIndex => (1..=limits.max_lanes)
                .map(AttributeValue::EgoLaneIndex)
                .collect(),
            Task::LaneChange => Feasibility::ALL
                .into_iter()
                .flat_map(|left| {
                    Feasibility::ALL
                        .into_iter()
                        .map(move |right| AttributeValue::LaneChange(LaneChange { left, right }))
                })
                .collect(),
            Task::Topology => (0..8u8)
                .map(|bits| {
                    AttributeValue::Topology(Topology {
                        junction: bits & 1 != 0,
                        entrance: bits & 2 != 0,
                        exit: bits & 4 != 0,
                    })
                })
                .collect(),
            Task::TrafficCondition => TrafficCondition::ALL
                .into_iter()
                .map(AttributeValue::TrafficCondition)
                .collect(),
            Task::RoadScene => RoadScene::ALL.into_iter().map(AttributeValue::RoadScene).collect(),
        }
    }
}

/// Configurable domain bounds for count-valued channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainLimits {
    pub max_lanes: u32,
}

impl Default for DomainLimits {
    fn default() -> Self {
        DomainLimits {
            max_lanes: DEFAULT_MAX_LANES,
        }
    }
}

/// The complete attribute set of one ground-truth frame.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SceneAttributes {
    pub lane_count: u32,
    pub ego_lane_index: u32,
    pub lane_change: LaneChange,
    pub topology: Topology,
    pub traffic_condition: TrafficCondition,
    pub road_scene: RoadScene,
}

impl SceneAttributes {
    pub fn get(&self, task: Task) -> AttributeValue {
        match task {
            Task::LaneCount => AttributeValue::LaneCount(self.lane_count),
            Task::EgoLaneIndex => AttributeValue::EgoLaneIndex(self.ego_lane_index),
            Task::LaneChange => AttributeValue::LaneChange(self.lane_change),
            Task::Topology => AttributeValue::Topology(self.topology),
            Task::TrafficCondition => AttributeValue::TrafficCondition(self.traffic_condition),
            Task::RoadScene => AttributeValue::RoadScene(self.road_scene),
        }
    }

    pub fn set(&mut self, value: AttributeValue) {
        match value {
            AttributeValue::LaneCount(n) => self.lane_count = n,
            AttributeValue::EgoLaneIndex(n) => self.ego_lane_index = n,
            AttributeValue::LaneChange(lc) => self.lane_change = lc,
            AttributeValue::Topology(t) => self.topology = t,
            AttributeValue::TrafficCondition(t) => self.traffic_condition = t,
            AttributeValue::RoadScene(s) => self.road_scene = s,
        }
    }

    pub fn code(&self, field: Field) -> i64 {
        self.get(field.task())
            .code(field)
            .expect("field belongs to its own task")
    }
}

/// Why a prediction carries no value for a task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbsenceReason {
    Unparseable,
    NotAnswered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Answer {
    Given(AttributeValue),
    Absent(AbsenceReason),
}

impl Answer {
    pub fn value(&self) -> Option<AttributeValue> {
        match self {
            Answer::Given(v) => Some(*v),
            Answer::Absent(_) => None,
        }
    }
}

/// Read access shared by ground-truth and prediction frames.
pub trait FrameView {
    fn frame_id(&self) -> &str;
    fn timestamp_s(&self) -> f64;
    fn value(&self, task: Task) -> Option<AttributeValue>;

    fn code(&self, field: Field) -> Option<i64> {
        self.value(field.task()).and_then(|v| v.code(field))
    }
}

/// Read access shared by ground-truth and prediction clips.
pub trait ClipView {
    type Frame: FrameView;
    fn clip_id(&self) -> &str;
    fn frames(&self) -> &[Self::Frame];
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameRecord", into = "FrameRecord")]
pub struct FrameAnnotation {
    pub frame_id: String,
    pub timestamp_s: f64,
    pub attributes: SceneAttributes,
}

impl FrameView for FrameAnnotation {
    fn frame_id(&self) -> &str {
        &self.frame_id
    }

    fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }

    fn value(&self, task: Task) -> Option<AttributeValue> {
        Some(self.attributes.get(task))
    }

    fn code(&self, field: Field) -> Option<i64> {
        Some(self.attributes.code(field))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "FrameRecord", into = "FrameRecord")]
pub struct PredictionFrame {
    pub frame_id: String,
    pub timestamp_s: f64,
    answers: [Answer; 6],
}

impl PredictionFrame {
    /// A frame with every task unanswered.
    pub fn empty(frame_id: impl Into<String>, timestamp_s: f64) -> Self {
        PredictionFrame {
            frame_id: frame_id.into(),
            timestamp_s,
            answers: [Answer::Absent(AbsenceReason::NotAnswered); 6],
        }
    }

    pub fn answer(&self, task: Task) -> Answer {
        self.answers[task.index()]
    }

    pub fn set_value(&mut self, value: AttributeValue) {
        self.answers[value.task().index()] = Answer::Given(value);
    }

    pub fn set_absent(&mut self, task: Task, reason: AbsenceReason) {
        self.answers[task.index()] = Answer::Absent(reason);
    }
}

impl FrameView for PredictionFrame {
    fn frame_id(&self) -> &str {
        &self.frame_id
    }

    fn timestamp_s(&self) -> f64 {
        self.timestamp_s
    }

    fn value(&self, task: Task) -> Option<AttributeValue> {
        self.answers[task.index()].value()
    }
}

impl From<&FrameAnnotation> for PredictionFrame {
    fn from(frame: &FrameAnnotation) -> Self {
        let mut pred = PredictionFrame::empty(frame.frame_id.clone(), frame.timestamp_s);
        for task in Task::ALL {
            pred.set_value(frame.attributes.get(task));
        }
        pred
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Clip {
    pub clip_id: String,
    pub city: String,
    pub frames: Vec<FrameAnnotation>,
}

impl ClipView for Clip {
    type Frame = FrameAnnotation;

    fn clip_id(&self) -> &str {
        &self.clip_id
    }

    fn frames(&self) -> &[FrameAnnotation] {
        &self.frames
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionClip {
    pub clip_id: String,
    pub city: String,
    pub frames: Vec<PredictionFrame>,
}

impl ClipView for PredictionClip {
    type Frame = PredictionFrame;

    fn clip_id(&self) -> &str {
        &self.clip_id
    }

    fn frames(&self) -> &[PredictionFrame] {
        &self.frames
    }
}

impl From<&Clip> for PredictionClip {
    fn from(clip: &Clip) -> Self {
        PredictionClip {
            clip_id: clip.clip_id.clone(),
            city: clip.city.clone(),
            frames: clip.frames.iter().map(PredictionFrame::from).collect(),
        }
    }
}

/// Per-frame numeric encodings of one channel across a clip.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSeries {
    pub field: Field,
    pub values: Vec<i64>,
}

/// Encodes one channel of a clip in frame order.
pub fn encode_series<C: ClipView>(clip: &C, field: Field) -> Result<AttributeSeries, SchemaError> {
    let frames = clip.frames();
    if frames.is_empty() {
        return Err(SchemaError::EmptyClip);
    }
    let values = frames
        .iter()
        .map(|f| {
            f.code(field).ok_or_else(|| SchemaError::MissingAttribute {
                frame_id: f.frame_id().to_string(),
                task: field.task(),
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AttributeSeries { field, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StructuralViolation {
    DomainViolation { field: Field, value: i64 },
    ClipLength { len: usize },
    NonIncreasingTimestamp { frame_id: String },
}

impl fmt::Display for StructuralViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StructuralViolation::DomainViolation { field, value } => {
                write!(f, "DomainViolation({field}={value})")
            }
            StructuralViolation::ClipLength { len } => write!(f, "ClipLength({len})"),
            StructuralViolation::NonIncreasingTimestamp { frame_id } => {
                write!(f, "NonIncreasingTimestamp({frame_id})")
            }
        }
    }
}

pub fn validate_frame(frame: &FrameAnnotation) -> Vec<StructuralViolation> {
    validate_frame_with(frame, &DomainLimits::default())
}

/// Domain checks over every channel present in the frame.
pub fn validate_frame_with<F: FrameView>(frame: &F, limits: &DomainLimits) -> Vec<StructuralViolation> {
    Field::ALL
        .into_iter()
        .filter_map(|field| {
            let value = frame.code(field)?;
            let (lo, hi) = field.code_range(limits);
            (value < lo || value > hi).then_some(StructuralViolation::DomainViolation { field, value })
        })
        .collect()
}

/// Clip-level checks: length bounds and strictly increasing timestamps.
pub fn validate_clip_structure<C: ClipView>(clip: &C) -> Vec<StructuralViolation> {
    let frames = clip.frames();
    let mut out = Vec::new();
    if !(MIN_CLIP_LEN..=MAX_CLIP_LEN).contains(&frames.len()) {
        out.push(StructuralViolation::ClipLength { len: frames.len() });
    }
    for pair in frames.windows(2) {
        if pair[1].timestamp_s() <= pair[0].timestamp_s() {
            out.push(StructuralViolation::NonIncreasingTimestamp {
                frame_id: pair[1].frame_id().to_string(),
            });
        }
    }
    out
}

/// Flat on-disk layout shared by ground-truth and prediction frames.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FrameRecord {
    frame_id: String,
    timestamp_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ego_lane_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_change_left: Option<Feasibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lane_change_right: Option<Feasibility>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    junction: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    entrance: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    exit: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    traffic_condition: Option<TrafficCondition>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    road_scene: Option<RoadScene>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    absent: BTreeMap<Task, AbsenceReason>,
}

impl FrameRecord {
    fn from_values(frame_id: String, timestamp_s: f64, values: impl Iterator<Item = AttributeValue>) -> Self {
        let mut rec = FrameRecord {
            frame_id,
            timestamp_s,
            lane_count: None,
            ego_lane_index: None,
            lane_change_left: None,
            lane_change_right: None,
            junction: None,
            entrance: None,
            exit: None,
            traffic_condition: None,
            road_scene: None,
            absent: BTreeMap::new(),
        };
        for value in values {
            match value {
                AttributeValue::LaneCount(n) => rec.lane_count = Some(n),
                AttributeValue::EgoLaneIndex(n) => rec.ego_lane_index = Some(n),
                AttributeValue::LaneChange(lc) => {
                    rec.lane_change_left = Some(lc.left);
                    rec.lane_change_right = Some(lc.right);
                }
                AttributeValue::Topology(t) => {
                    rec.junction = Some(t.junction);
                    rec.entrance = Some(t.entrance);
                    rec.exit = Some(t.exit);
                }
                AttributeValue::TrafficCondition(t) => rec.traffic_condition = Some(t),
                AttributeValue::RoadScene(s) => rec.road_scene = Some(s),
            }
        }
        rec
    }

    /// Value of a task if all of its channels are present; `Err` on partial presence.
    fn value(&self, task: Task) -> Result<Option<AttributeValue>, SchemaError> {
        let partial = || SchemaError::PartialAttribute {
            frame_id: self.frame_id.clone(),
            task,
        };
        let value = match task {
            Task::LaneCount => self.lane_count.map(AttributeValue::LaneCount),
            Task::EgoLaneIndex => self.ego_lane_index.map(AttributeValue::EgoLaneIndex),
            Task::LaneChange => match (self.lane_change_left, self.lane_change_right) {
                (Some(left), Some(right)) => Some(AttributeValue::LaneChange(LaneChange { left, right })),
                (None, None) => None,
                _ => return Err(partial()),
            },
            Task::Topology => match (self.junction, self.entrance, self.exit) {
                (Some(junction), Some(entrance), Some(exit)) => Some(AttributeValue::Topology(Topology {
                    junction,
                    entrance,
                    exit,
                })),
                (None, None, None) => None,
                _ => return Err(partial()),
            },
            Task::TrafficCondition => self.traffic_condition.map(AttributeValue::TrafficCondition),
            Task::RoadScene => self.road_scene.map(AttributeValue::RoadScene),
        };
        Ok(value)
    }
}

impl TryFrom<FrameRecord> for PredictionFrame {
    type Error = SchemaError;

    fn try_from(rec: FrameRecord) -> Result<Self, SchemaError> {
        let mut frame = PredictionFrame::empty(rec.frame_id.clone(), rec.timestamp_s);
        for task in Task::ALL {
            match (rec.value(task)?, rec.absent.get(&task)) {
                (Some(_), Some(_)) => {
                    return Err(SchemaError::ConflictingAbsence {
                        frame_id: rec.frame_id.clone(),
                        task,
                    })
                }
                (Some(v), None) => frame.set_value(v),
                (None, Some(reason)) => frame.set_absent(task, *reason),
                (None, None) => frame.set_absent(task, AbsenceReason::NotAnswered),
            }
        }
        Ok(frame)
    }
}

impl From<PredictionFrame> for FrameRecord {
    fn from(frame: PredictionFrame) -> Self {
        let mut rec = FrameRecord::from_values(
            frame.frame_id,
            frame.timestamp_s,
            frame.answers.iter().filter_map(Answer::value),
        );
        for (task, answer) in Task::ALL.into_iter().zip(frame.answers) {
            // not_answered is the implied default for a missing field
            if let Answer::Absent(AbsenceReason::Unparseable) = answer {
                rec.absent.insert(task, AbsenceReason::Unparseable);
            }
        }
        rec
    }
}

impl TryFrom<FrameRecord> for FrameAnnotation {
    type Error = SchemaError;

    fn try_from(rec: FrameRecord) -> Result<Self, SchemaError> {
        let missing = |task| SchemaError::MissingAttribute {
            frame_id: rec.frame_id.clone(),
            task,
        };
        if let Some(task) = rec.absent.keys().next() {
            return Err(missing(*task));
        }
        let get = |task: Task| rec.value(task)?.ok_or_else(|| missing(task));
        let attributes = SceneAttributes {
            lane_count: match get(Task::LaneCount)? {
                AttributeValue::LaneCount(n) => n,
                _ => unreachable!(),
            },
            ego_lane_index: match get(Task::EgoLaneIndex)? {
                AttributeValue::EgoLaneIndex(n) => n,
                _ => unreachable!(),
            },
            lane_change: match get(Task::LaneChange)? {
                AttributeValue::LaneChange(lc) => lc,
                _ => unreachable!(),
            },
            topology: match get(Task::Topology)? {
                AttributeValue::Topology(t) => t,
                _ => unreachable!(),
            },
            traffic_condition: match get(Task::TrafficCondition)? {
                AttributeValue::TrafficCondition(t) => t,
                _ => unreachable!(),
            },
            road_scene: match get(Task::RoadScene)? {
                AttributeValue::RoadScene(s) => s,
                _ => unreachable!(),
            },
        };
        Ok(FrameAnnotation {
            frame_id: rec.frame_id,
            timestamp_s: rec.timestamp_s,
            attributes,
        })
    }
}

impl From<FrameAnnotation> for FrameRecord {
    fn from(frame: FrameAnnotation) -> Self {
        let attrs = frame.attributes;
        FrameRecord::from_values(
            frame.frame_id,
            frame.timestamp_s,
            Task::ALL.into_iter().map(|t| attrs.get(t)),
        )
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;
    use proptest::prelude::*;

    pub fn attrs(lane_count: u32, ego: u32) -> SceneAttributes {
        SceneAttributes {
            lane_count,
            ego_lane_index: ego,
            lane_change: LaneChange {
                left: Feasibility::Feasible,
                right: Feasibility::Feasible,
            },
            topology: Topology::default(),
            traffic_condition: TrafficCondition::FreeFlow,
            road_scene: RoadScene::Urban,
        }
    }

    pub fn frame(i: usize, attributes: SceneAttributes) -> FrameAnnotation {
        FrameAnnotation {
            frame_id: format!("f{i}"),
            timestamp_s: i as f64,
            attributes,
        }
    }

    pub fn clip_of(attrs: impl IntoIterator<Item = SceneAttributes>) -> Clip {
        Clip {
            clip_id: "c0".into(),
            city: "beijing".into(),
            frames: attrs.into_iter().enumerate().map(|(i, a)| frame(i, a)).collect(),
        }
    }

    /// Any in-domain attribute set, logically consistent or not.
    pub fn arb_attrs() -> impl Strategy<Value = SceneAttributes> {
        (1u32..=8, 1u32..=8, 0i64..2, 0i64..2, 0i64..3, 0i64..3, any::<[bool; 3]>()).prop_map(
            |(lanes, ego, l, r, t, s, topo)| {
                let mut a = attrs(lanes, ego);
                a.lane_change.left = Feasibility::from_code(l).unwrap();
                a.lane_change.right = Feasibility::from_code(r).unwrap();
                a.traffic_condition = TrafficCondition::from_code(t).unwrap();
                a.road_scene = RoadScene::from_code(s).unwrap();
                a.topology = Topology {
                    junction: topo[0],
                    entrance: topo[1],
                    exit: topo[2],
                };
                a
            },
        )
    }

    pub fn arb_clip(len: std::ops::Range<usize>) -> impl Strategy<Value = Clip> {
        prop::collection::vec(arb_attrs(), len).prop_map(clip_of)
    }

    /// A ground-truth clip and a prediction whose every answer is either
    /// copied, replaced by an arbitrary value, or missing.
    pub fn arb_pair(len: std::ops::Range<usize>) -> impl Strategy<Value = (PredictionClip, Clip)> {
        arb_clip(len).prop_flat_map(|gt| {
            let n = gt.frames.len();
            let edits = prop::collection::vec((prop::array::uniform6(0u8..3), arb_attrs()), n);
            (Just(gt), edits).prop_map(|(gt, edits)| {
                let mut pred = PredictionClip::from(&gt);
                for (frame, (choice, alt)) in pred.frames.iter_mut().zip(edits) {
                    for task in Task::ALL {
                        match choice[task.index()] {
                            0 => {}
                            1 => frame.set_value(alt.get(task)),
                            _ => frame.set_absent(task, AbsenceReason::NotAnswered),
                        }
                    }
                }
                (pred, gt)
            })
        })
    }
}
