//! Cross-task logic within a frame and the pairwise transition validity check
//! between consecutive frames.
//!
//! The transition check is a declarative table with one entry per channel:
//! either a maximum ordinal step, an explicit table of allowed value pairs, or
//! no restriction. Self-transitions are always valid.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    validate_clip_structure, validate_frame_with, ClipView, DomainLimits, Field, FrameView, StructuralViolation, Task,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RuleError {
    #[error("unknown field '{0}' in rule table")]
    UnknownField(String),
    #[error("rule for {0}: max_step and allowed are mutually exclusive")]
    Conflicting(Field),
    #[error("rule for {0}: max_step is meaningless for a categorical field")]
    MaxStepOnCategorical(Field),
    #[error("rule for {field}: unknown value '{value}'")]
    UnknownValue { field: Field, value: String },
}

/// Named intra-frame constraints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FrameRule {
    EgoExceedsLanes,
    LeftmostLeftChange,
    RightmostRightChange,
}

impl FrameRule {
    pub fn name(self) -> &'static str {
        match self {
            FrameRule::EgoExceedsLanes => "EGO_EXCEEDS_LANES",
            FrameRule::LeftmostLeftChange => "LEFTMOST_LEFT_CHANGE",
            FrameRule::RightmostRightChange => "RIGHTMOST_RIGHT_CHANGE",
        }
    }
}

impl fmt::Display for FrameRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Intra-frame logic. Rules whose inputs are missing from a prediction are skipped.
pub fn check_frame_logic<F: FrameView>(frame: &F) -> Vec<FrameRule> {
    let lanes = frame.code(Field::LaneCount);
    let ego = frame.code(Field::EgoLaneIndex);
    let left = frame.code(Field::LaneChangeLeft);
    let right = frame.code(Field::LaneChangeRight);
    let mut out = Vec::new();
    if let (Some(lanes), Some(ego)) = (lanes, ego) {
        if ego > lanes {
            out.push(FrameRule::EgoExceedsLanes);
        }
    }
    if let (Some(ego), Some(1)) = (ego, left) {
        if ego == 1 {
            out.push(FrameRule::LeftmostLeftChange);
        }
    }
    if let (Some(lanes), Some(ego), Some(1)) = (lanes, ego, right) {
        if ego == lanes {
            out.push(FrameRule::RightmostRightChange);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rule {
    Unrestricted,
    MaxStep(u32),
    Allowed { pairs: BTreeSet<(i64, i64)>, directed: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldRule {
    pub enabled: bool,
    pub rule: Rule,
}

impl FieldRule {
    fn permits(&self, prev: i64, next: i64) -> bool {
        if !self.enabled || prev == next {
            return true;
        }
        match &self.rule {
            Rule::Unrestricted => true,
            Rule::MaxStep(step) => prev.abs_diff(next) <= u64::from(*step),
            Rule::Allowed { pairs, directed } => {
                pairs.contains(&(prev, next)) || (!directed && pairs.contains(&(next, prev)))
            }
        }
    }
}

/// The transition validity table: exactly one rule per channel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionRuleSet {
    rules: [FieldRule; 9],
}

impl Default for TransitionRuleSet {
    fn default() -> Self {
        let unrestricted = FieldRule {
            enabled: true,
            rule: Rule::Unrestricted,
        };
        let mut rules: [FieldRule; 9] = std::array::from_fn(|_| unrestricted.clone());
        for field in [Field::LaneCount, Field::EgoLaneIndex, Field::TrafficCondition] {
            rules[field.index()].rule = Rule::MaxStep(1);
        }
        rules[Field::RoadScene.index()].rule = Rule::Allowed {
            // urban <-> suburban, suburban <-> highway
            pairs: [(0, 1), (1, 2)].into_iter().collect(),
            directed: false,
        };
        TransitionRuleSet { rules }
    }
}

impl TransitionRuleSet {
    pub fn rule(&self, field: Field) -> &FieldRule {
        &self.rules[field.index()]
    }

    pub fn set_rule(&mut self, field: Field, rule: Rule) {
        self.rules[field.index()].rule = rule;
    }

    pub fn set_enabled(&mut self, field: Field, enabled: bool) {
        self.rules[field.index()].enabled = enabled;
    }

    pub fn enabled_fields(&self) -> impl Iterator<Item = Field> + '_ {
        Field::ALL.into_iter().filter(|f| self.rule(*f).enabled)
    }

    /// The default table with every channel except `field` disabled.
    pub fn only(field: Field) -> Self {
        let mut rules = TransitionRuleSet::default();
        for f in Field::ALL {
            rules.set_enabled(f, f == field);
        }
        rules
    }

    /// Evaluates the validity predicate for one channel.
    pub fn permits(&self, field: Field, prev: i64, next: i64) -> bool {
        self.rule(field).permits(prev, next)
    }

    pub fn to_config(&self) -> RuleTableConfig {
        Field::ALL
            .into_iter()
            .map(|field| {
                let r = self.rule(field);
                let mut spec = RuleSpec {
                    enabled: r.enabled,
                    ..RuleSpec::default()
                };
                match &r.rule {
                    Rule::Unrestricted => {}
                    Rule::MaxStep(s) => spec.max_step = Some(*s),
                    Rule::Allowed { pairs, directed } => {
                        spec.allowed = Some(
                            pairs
                                .iter()
                                .map(|(a, b)| [field.value_name(*a), field.value_name(*b)])
                                .collect(),
                        );
                        spec.directed = *directed;
                    }
                }
                (field.name().to_string(), spec)
            })
            .collect()
    }

    /// Builds a table from its declarative form. Channels not mentioned keep
    /// their default rule.
    pub fn from_config(config: &RuleTableConfig) -> Result<Self, RuleError> {
        let mut rules = TransitionRuleSet::default();
        for (name, spec) in config {
            let field = Field::from_name(name).map_err(|_| RuleError::UnknownField(name.clone()))?;
            let rule = match (&spec.max_step, &spec.allowed) {
                (Some(_), Some(_)) => return Err(RuleError::Conflicting(field)),
                (Some(_), None) if !field.is_ordinal() => {
                    return Err(RuleError::MaxStepOnCategorical(field))
                }
                (Some(step), None) => Rule::MaxStep(*step),
                (None, Some(pairs)) => {
                    let code = |value: &String| {
                        field.code_of_name(value).ok_or_else(|| RuleError::UnknownValue {
                            field,
                            value: value.clone(),
                        })
                    };
                    let pairs = pairs
                        .iter()
                        .map(|[a, b]| Ok((code(a)?, code(b)?)))
                        .collect::<Result<_, RuleError>>()?;
                    Rule::Allowed {
                        pairs,
                        directed: spec.directed,
                    }
                }
                (None, None) => Rule::Unrestricted,
            };
            rules.rules[field.index()] = FieldRule {
                enabled: spec.enabled,
                rule,
            };
        }
        Ok(rules)
    }
}

/// Declarative rule table keyed by record field name.
pub type RuleTableConfig = BTreeMap<String, RuleSpec>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    #[serde(default = "enabled_by_default")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_step: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed: Option<Vec<[String; 2]>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub directed: bool,
}

fn enabled_by_default() -> bool {
    true
}

impl Default for RuleSpec {
    fn default() -> Self {
        RuleSpec {
            enabled: true,
            max_step: None,
            allowed: None,
            directed: false,
        }
    }
}

/// Per-channel validity of the transition `prev -> next`.
///
/// Disabled channels report `true`. An enabled channel with a missing value on
/// either side reports `false`, since the transition cannot be established.
pub fn check_transition<A: FrameView, B: FrameView>(
    prev: &A,
    next: &B,
    rules: &TransitionRuleSet,
) -> BTreeMap<Field, bool> {
    Field::ALL
        .into_iter()
        .map(|field| {
            let ok = if !rules.rule(field).enabled {
                true
            } else {
                match (prev.code(field), next.code(field)) {
                    (Some(a), Some(b)) => rules.permits(field, a, b),
                    _ => false,
                }
            };
            (field, ok)
        })
        .collect()
}

/// True when every enabled channel permits the transition.
pub fn transition_valid<A: FrameView, B: FrameView>(prev: &A, next: &B, rules: &TransitionRuleSet) -> bool {
    rules.enabled_fields().all(|field| match (prev.code(field), next.code(field)) {
        (Some(a), Some(b)) => rules.permits(field, a, b),
        _ => false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameViolation {
    pub frame_id: String,
    pub rule: FrameRule,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransitionViolation {
    pub from_frame: String,
    pub to_frame: String,
    pub field: Field,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub clip_id: String,
    pub intra_frame_violations: Vec<FrameViolation>,
    pub transition_violations: Vec<TransitionViolation>,
    pub pass: bool,
}

impl ConsistencyReport {
    pub fn violation_count(&self) -> usize {
        self.intra_frame_violations.len() + self.transition_violations.len()
    }
}

pub fn check_clip<C: ClipView>(clip: &C, rules: &TransitionRuleSet) -> ConsistencyReport {
    let frames = clip.frames();
    let intra_frame_violations: Vec<_> = frames
        .iter()
        .flat_map(|f| {
            check_frame_logic(f).into_iter().map(|rule| FrameViolation {
                frame_id: f.frame_id().to_string(),
                rule,
            })
        })
        .collect();
    let transition_violations: Vec<_> = frames
        .windows(2)
        .flat_map(|pair| {
            check_transition(&pair[0], &pair[1], rules)
                .into_iter()
                .filter(|(_, ok)| !ok)
                .map(|(field, _)| TransitionViolation {
                    from_frame: pair[0].frame_id().to_string(),
                    to_frame: pair[1].frame_id().to_string(),
                    field,
                })
        })
        .collect();
    let pass = intra_frame_violations.is_empty() && transition_violations.is_empty();
    ConsistencyReport {
        clip_id: clip.clip_id().to_string(),
        intra_frame_violations,
        transition_violations,
        pass,
    }
}

/// Structural checks plus the consistency checks, as run by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipValidation {
    pub clip_id: String,
    pub structural: Vec<StructuralViolation>,
    pub intra_frame_violations: Vec<FrameViolation>,
    pub transition_violations: Vec<TransitionViolation>,
    pub pass: bool,
}

pub fn validate_clip<C: ClipView>(clip: &C, rules: &TransitionRuleSet, limits: &DomainLimits) -> ClipValidation {
    let mut structural = validate_clip_structure(clip);
    for frame in clip.frames() {
        structural.extend(validate_frame_with(frame, limits));
    }
    let report = check_clip(clip, rules);
    ClipValidation {
        clip_id: report.clip_id,
        pass: report.pass && structural.is_empty(),
        structural,
        intra_frame_violations: report.intra_frame_violations,
        transition_violations: report.transition_violations,
    }
}

/// Tasks whose channels are all unrestricted or disabled.
pub fn unconstrained_tasks(rules: &TransitionRuleSet) -> Vec<Task> {
    Task::ALL
        .into_iter()
        .filter(|t| {
            t.fields()
                .iter()
                .all(|f| !rules.rule(*f).enabled || rules.rule(*f).rule == Rule::Unrestricted)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::test_support::*;
    use crate::schema::{Feasibility, RoadScene};
    use proptest::prelude::*;

    #[test]
    fn ego_beyond_lane_count() {
        assert_eq!(check_frame_logic(&frame(0, attrs(3, 4))), vec![FrameRule::EgoExceedsLanes]);
    }

    #[test]
    fn leftmost_with_left_change() {
        let mut a = attrs(3, 1);
        a.lane_change.right = Feasibility::Feasible;
        assert_eq!(check_frame_logic(&frame(0, a)), vec![FrameRule::LeftmostLeftChange]);
    }

    #[test]
    fn rightmost_with_right_change() {
        let mut a = attrs(3, 3);
        a.lane_change.left = Feasibility::Infeasible;
        assert_eq!(check_frame_logic(&frame(0, a)), vec![FrameRule::RightmostRightChange]);
        a.lane_change.right = Feasibility::Infeasible;
        assert!(check_frame_logic(&frame(0, a)).is_empty());
    }

    #[test]
    fn interior_lane_passes() {
        assert!(check_frame_logic(&frame(0, attrs(3, 2))).is_empty());
    }

    #[test]
    fn rule_names() {
        assert_eq!(
            serde_json::to_string(&FrameRule::EgoExceedsLanes).unwrap(),
            "\"EGO_EXCEEDS_LANES\""
        );
    }

    #[test]
    fn feasible_to_infeasible_is_valid() {
        let rules = TransitionRuleSet::default();
        let a = attrs(3, 2);
        let mut b = a;
        b.lane_change.left = Feasibility::Infeasible;
        let out = check_transition(&frame(0, a), &frame(1, b), &rules);
        assert!(out[&Field::LaneChangeLeft]);
        assert!(out.values().all(|v| *v));
    }

    #[test]
    fn lane_jump_of_two_is_invalid() {
        let rules = TransitionRuleSet::default();
        let out = check_transition(&frame(0, attrs(3, 2)), &frame(1, attrs(5, 2)), &rules);
        assert!(!out[&Field::LaneCount]);
        assert_eq!(out.values().filter(|v| !**v).count(), 1);
    }

    #[test]
    fn road_scene_table() {
        let rules = TransitionRuleSet::default();
        let code = RoadScene::code;
        assert!(rules.permits(Field::RoadScene, code(RoadScene::Urban), code(RoadScene::Urban)));
        assert!(rules.permits(Field::RoadScene, code(RoadScene::Urban), code(RoadScene::Suburban)));
        assert!(rules.permits(Field::RoadScene, code(RoadScene::Highway), code(RoadScene::Suburban)));
        assert!(!rules.permits(Field::RoadScene, code(RoadScene::Urban), code(RoadScene::Highway)));
        assert!(!rules.permits(Field::RoadScene, code(RoadScene::Highway), code(RoadScene::Urban)));
    }

    #[test]
    fn directed_table() {
        let mut rules = TransitionRuleSet::default();
        rules.set_rule(
            Field::LaneChangeLeft,
            Rule::Allowed {
                pairs: [(1, 0)].into_iter().collect(),
                directed: true,
            },
        );
        assert!(rules.permits(Field::LaneChangeLeft, 1, 0));
        assert!(!rules.permits(Field::LaneChangeLeft, 0, 1));
    }

    #[test]
    fn single_fault_clip() {
        let rules = TransitionRuleSet::default();
        let mut clip = clip_of([attrs(3, 2); 5]);
        assert!(check_clip(&clip, &rules).pass);
        clip.frames[2].attributes.ego_lane_index = 4;
        clip.frames[2].attributes.lane_count = 3;
        // ego 2 -> 4 -> 2 also breaches ego max_step, so isolate intra-frame logic
        let report = check_clip(&clip, &TransitionRuleSet::only(Field::LaneCount));
        assert!(!report.pass);
        assert_eq!(report.intra_frame_violations.len(), 1);
        assert!(report.transition_violations.is_empty());
    }

    #[test]
    fn lane_dip_gives_two_violations() {
        let rules = TransitionRuleSet::default();
        let clip = clip_of([3, 3, 1, 3, 3].map(|n| attrs(n, 1)));
        let report = check_clip(&clip, &rules);
        let lane: Vec<_> = report
            .transition_violations
            .iter()
            .filter(|v| v.field == Field::LaneCount)
            .map(|v| (v.from_frame.as_str(), v.to_frame.as_str()))
            .collect();
        assert_eq!(lane, vec![("f1", "f2"), ("f2", "f3")]);
        assert_eq!(report.transition_violations.len(), 2);
    }

    #[test]
    fn missing_prediction_value_fails_enabled_channel() {
        use crate::schema::{AbsenceReason, PredictionFrame};
        let rules = TransitionRuleSet::default();
        let a = PredictionFrame::from(&frame(0, attrs(3, 2)));
        let mut b = a.clone();
        b.set_absent(Task::RoadScene, AbsenceReason::NotAnswered);
        let out = check_transition(&a, &b, &rules);
        assert!(!out[&Field::RoadScene]);
        assert!(!transition_valid(&a, &b, &rules));
        let mut lenient = rules.clone();
        lenient.set_enabled(Field::RoadScene, false);
        assert!(transition_valid(&a, &b, &lenient));
    }

    #[test]
    fn config_round_trip_and_errors() {
        let rules = TransitionRuleSet::default();
        let cfg = rules.to_config();
        assert_eq!(cfg["lane_count"].max_step, Some(1));
        assert_eq!(
            cfg["road_scene"].allowed.as_ref().unwrap(),
            &vec![
                ["urban".to_string(), "suburban".to_string()],
                ["suburban".to_string(), "highway".to_string()]
            ]
        );
        assert_eq!(TransitionRuleSet::from_config(&cfg).unwrap(), rules);

        let mut bad = RuleTableConfig::new();
        bad.insert(
            "road_scene".into(),
            RuleSpec {
                max_step: Some(1),
                ..RuleSpec::default()
            },
        );
        assert_eq!(
            TransitionRuleSet::from_config(&bad),
            Err(RuleError::MaxStepOnCategorical(Field::RoadScene))
        );
        let mut unknown = RuleTableConfig::new();
        unknown.insert("lanes".into(), RuleSpec::default());
        assert!(matches!(
            TransitionRuleSet::from_config(&unknown),
            Err(RuleError::UnknownField(_))
        ));
        let mut bad_value = RuleTableConfig::new();
        bad_value.insert(
            "traffic_condition".into(),
            RuleSpec {
                allowed: Some(vec![["free_flow".into(), "gridlock".into()]]),
                ..RuleSpec::default()
            },
        );
        assert!(matches!(
            TransitionRuleSet::from_config(&bad_value),
            Err(RuleError::UnknownValue { .. })
        ));
    }

    #[test]
    fn unconstrained_tasks_under_default() {
        assert_eq!(
            unconstrained_tasks(&TransitionRuleSet::default()),
            vec![Task::LaneChange, Task::Topology]
        );
    }

    proptest! {
        #[test]
        fn self_transition_always_valid(a in arb_attrs()) {
            let f = frame(0, a);
            let out = check_transition(&f, &f, &TransitionRuleSet::default());
            prop_assert!(out.values().all(|v| *v));
        }

        #[test]
        fn disabling_never_adds_violations(
            frames in proptest::collection::vec(arb_attrs(), 2..8),
            disabled in proptest::sample::subsequence(Field::ALL.to_vec(), 0..=9),
        ) {
            let clip = clip_of(frames);
            let full = TransitionRuleSet::default();
            let mut reduced = full.clone();
            for f in &disabled {
                reduced.set_enabled(*f, false);
            }
            prop_assert!(check_clip(&clip, &reduced).violation_count() <= check_clip(&clip, &full).violation_count());
        }

        #[test]
        fn clip_count_is_sum_of_parts(frames in proptest::collection::vec(arb_attrs(), 1..8)) {
            let clip = clip_of(frames);
            let rules = TransitionRuleSet::default();
            let frame_part: usize = clip.frames.iter().map(|f| check_frame_logic(f).len()).sum();
            let pair_part: usize = clip
                .frames
                .windows(2)
                .map(|p| check_transition(&p[0], &p[1], &rules).values().filter(|v| !**v).count())
                .sum();
            let report = check_clip(&clip, &rules);
            prop_assert_eq!(report.violation_count(), frame_part + pair_part);
            prop_assert_eq!(report.pass, frame_part + pair_part == 0);
        }
    }
}
