//! Hierarchical frame reward, temporal smoothness and plausibility, and the
//! composite clip reward fed to policy optimization.
//!
//! ```text
//! r_frame^t  = alpha * r_sce + beta * r_rel + gamma * r_sem
//! r_smooth   = 1 - 1/(T-1) * sum_t |y_t - y_{t-1}|
//! r_plausible = 1/(T-1) * sum_t 1[V(y_t, y_{t+1})]
//! r_temporal = lambda * r_smooth + (1 - lambda) * r_plausible
//! r_total    = lambda_frame * mean_t r_frame^t + lambda_temporal * r_temporal
//! ```
//!
//! Temporal terms look at predictions only. Ground truth enters through the
//! frame reward.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{Layer, RewardConfig, SmoothnessMode};
use crate::consistency::{check_frame_logic, transition_valid, TransitionRuleSet};
use crate::schema::{AttributeSeries, AttributeValue, ClipView, DomainLimits, Field, FrameView, Task};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum RewardError {
    #[error("series of length {len} is too short; need at least 2 frames")]
    SeriesTooShort { len: usize },
    #[error("prediction has {pred} frames but ground truth has {gt}")]
    ClipLengthMismatch { pred: usize, gt: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameReward {
    pub r_sce: f64,
    pub r_rel: f64,
    pub r_sem: f64,
    pub r_frame: f64,
}

/// Score of one predicted task value against ground truth.
///
/// Exact match scores 1 and a missing prediction scores 0. With ordinal
/// partial credit, count and ordinal tasks score `max(0, 1 - |d| / range)`.
pub fn match_score(pred: Option<AttributeValue>, gt: AttributeValue, partial_credit: bool, limits: &DomainLimits) -> f64 {
    let Some(pred) = pred else { return 0.0 };
    if pred == gt {
        return 1.0;
    }
    let ordinal_field = match gt.task() {
        Task::LaneCount => Field::LaneCount,
        Task::EgoLaneIndex => Field::EgoLaneIndex,
        Task::TrafficCondition => Field::TrafficCondition,
        _ => return 0.0,
    };
    if !partial_credit {
        return 0.0;
    }
    match (pred.code(ordinal_field), gt.code(ordinal_field)) {
        (Some(p), Some(g)) => {
            let (lo, hi) = ordinal_field.code_range(limits);
            let range = (hi - lo).max(1) as f64;
            (1.0 - (p - g).abs() as f64 / range).max(0.0)
        }
        _ => 0.0,
    }
}

pub fn frame_reward<P: FrameView, G: FrameView>(pred: &P, gt: &G, cfg: &RewardConfig) -> FrameReward {
    frame_reward_with(pred, gt, cfg, &DomainLimits::default())
}

pub fn frame_reward_with<P: FrameView, G: FrameView>(
    pred: &P,
    gt: &G,
    cfg: &RewardConfig,
    limits: &DomainLimits,
) -> FrameReward {
    let layer = |layer: Layer| {
        let scores: Vec<f64> = cfg
            .tasks_in(layer)
            .map(|task| {
                let truth = gt.value(task).expect("ground truth frames are complete");
                match_score(pred.value(task), truth, cfg.ordinal_partial_credit, limits)
            })
            .collect();
        if scores.is_empty() {
            0.0
        } else {
            scores.iter().sum::<f64>() / scores.len() as f64
        }
    };
    let r_sce = layer(Layer::Scene);
    let r_rel = layer(Layer::Relational);
    let r_sem = layer(Layer::Semantic);
    FrameReward {
        r_sce,
        r_rel,
        r_sem,
        r_frame: cfg.alpha * r_sce + cfg.beta * r_rel + cfg.gamma * r_sem,
    }
}

fn clamp_mode(value: f64, mode: SmoothnessMode) -> f64 {
    match mode {
        SmoothnessMode::Raw => value,
        SmoothnessMode::RawClamped => value.clamp(0.0, 1.0),
    }
}

/// Smoothness of one complete series.
pub fn smoothness_reward(series: &AttributeSeries, mode: SmoothnessMode) -> Result<f64, RewardError> {
    let values: Vec<Option<i64>> = series.values.iter().copied().map(Some).collect();
    smoothness_of(&values, mode)
}

/// Smoothness over a series that may have gaps. A pair with a missing
/// endpoint contributes one unit of variation.
pub fn smoothness_of(values: &[Option<i64>], mode: SmoothnessMode) -> Result<f64, RewardError> {
    if values.len() < 2 {
        return Err(RewardError::SeriesTooShort { len: values.len() });
    }
    let variation: f64 = values
        .windows(2)
        .map(|w| match (w[0], w[1]) {
            (Some(a), Some(b)) => (b - a).abs() as f64,
            _ => 1.0,
        })
        .sum();
    let raw = 1.0 - variation / (values.len() - 1) as f64;
    Ok(clamp_mode(raw, mode))
}

pub fn plausibility_reward<C: ClipView>(clip: &C, rules: &TransitionRuleSet) -> Result<f64, RewardError> {
    plausibility_with(clip, rules, false)
}

/// Fraction of consecutive pairs accepted by the rule table. With
/// `include_frame_logic`, both frames of a pair must also pass intra-frame logic.
pub fn plausibility_with<C: ClipView>(
    clip: &C,
    rules: &TransitionRuleSet,
    include_frame_logic: bool,
) -> Result<f64, RewardError> {
    let frames = clip.frames();
    if frames.len() < 2 {
        return Err(RewardError::SeriesTooShort { len: frames.len() });
    }
    let logic_ok: Vec<bool> = frames
        .iter()
        .map(|f| !include_frame_logic || check_frame_logic(f).is_empty())
        .collect();
    let valid = frames
        .windows(2)
        .enumerate()
        .filter(|(i, pair)| logic_ok[*i] && logic_ok[i + 1] && transition_valid(&pair[0], &pair[1], rules))
        .count();
    Ok(valid as f64 / (frames.len() - 1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalReward {
    pub r_smooth: f64,
    pub r_plausible: f64,
    pub r_temporal: f64,
    /// Smoothness per configured channel.
    pub smoothness: BTreeMap<Field, f64>,
    /// Fraction of valid pairs per enabled channel.
    pub plausibility: BTreeMap<Field, f64>,
}

pub fn temporal_reward<C: ClipView>(
    clip: &C,
    cfg: &RewardConfig,
    rules: &TransitionRuleSet,
) -> Result<TemporalReward, RewardError> {
    let frames = clip.frames();
    if frames.len() < 2 {
        return Err(RewardError::SeriesTooShort { len: frames.len() });
    }
    let mut smoothness = BTreeMap::new();
    for field in &cfg.smoothness_attributes {
        let values: Vec<Option<i64>> = frames.iter().map(|f| f.code(*field)).collect();
        smoothness.insert(*field, smoothness_of(&values, cfg.smoothness_mode)?);
    }
    let r_smooth = if cfg.smoothness_attributes.is_empty() {
        1.0
    } else {
        cfg.smoothness_attributes.iter().map(|f| smoothness[f]).sum::<f64>()
            / cfg.smoothness_attributes.len() as f64
    };
    let pairs = (frames.len() - 1) as f64;
    let plausibility = rules
        .enabled_fields()
        .map(|field| {
            let ok = frames
                .windows(2)
                .filter(|w| match (w[0].code(field), w[1].code(field)) {
                    (Some(a), Some(b)) => rules.permits(field, a, b),
                    _ => false,
                })
                .count();
            (field, ok as f64 / pairs)
        })
        .collect();
    let r_plausible = plausibility_with(clip, rules, cfg.plausibility_includes_frame_logic)?;
    let r_temporal = cfg.lambda * r_smooth + (1.0 - cfg.lambda) * r_plausible;
    Ok(TemporalReward {
        r_smooth,
        r_plausible,
        r_temporal,
        smoothness,
        plausibility,
    })
}

/// Every intermediate term of the composite clip reward.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub clip_id: String,
    pub frames: Vec<FrameReward>,
    pub mean_frame: f64,
    pub r_smooth: f64,
    pub r_plausible: f64,
    pub r_temporal: f64,
    pub r_total: f64,
    pub smoothness: BTreeMap<Field, f64>,
    pub plausibility: BTreeMap<Field, f64>,
}

impl RewardBreakdown {
    /// Recomputes the composite from the stored components.
    pub fn recompose(&self, cfg: &RewardConfig) -> f64 {
        let mean = self.frames.iter().map(|f| f.r_frame).sum::<f64>() / self.frames.len() as f64;
        let temporal = cfg.lambda * self.r_smooth + (1.0 - cfg.lambda) * self.r_plausible;
        cfg.lambda_frame * mean + cfg.lambda_temporal * temporal
    }
}

pub fn hrrp_t_reward<P: ClipView, G: ClipView>(
    pred: &P,
    gt: &G,
    cfg: &RewardConfig,
    rules: &TransitionRuleSet,
) -> Result<RewardBreakdown, RewardError> {
    hrrp_t_reward_with(pred, gt, cfg, rules, &DomainLimits::default())
}

pub fn hrrp_t_reward_with<P: ClipView, G: ClipView>(
    pred: &P,
    gt: &G,
    cfg: &RewardConfig,
    rules: &TransitionRuleSet,
    limits: &DomainLimits,
) -> Result<RewardBreakdown, RewardError> {
    let (pf, gf) = (pred.frames(), gt.frames());
    if pf.len() != gf.len() {
        return Err(RewardError::ClipLengthMismatch {
            pred: pf.len(),
            gt: gf.len(),
        });
    }
    let frames: Vec<FrameReward> = pf
        .iter()
        .zip(gf)
        .map(|(p, g)| frame_reward_with(p, g, cfg, limits))
        .collect();
    let temporal = temporal_reward(pred, cfg, rules)?;
    let mean_frame = frames.iter().map(|f| f.r_frame).sum::<f64>() / frames.len() as f64;
    let r_total = cfg.lambda_frame * mean_frame + cfg.lambda_temporal * temporal.r_temporal;
    Ok(RewardBreakdown {
        clip_id: pred.clip_id().to_string(),
        frames,
        mean_frame,
        r_smooth: temporal.r_smooth,
        r_plausible: temporal.r_plausible,
        r_temporal: temporal.r_temporal,
        r_total,
        smoothness: temporal.smoothness,
        plausibility: temporal.plausibility,
    })
}
