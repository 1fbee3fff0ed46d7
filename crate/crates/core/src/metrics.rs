//! Per-task confusion matrices, precision/recall and benchmark reports.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{Clip, ClipView, DomainLimits, FrameView, PredictionClip, Task};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", rename_all = "snake_case")]
pub enum MetricsError {
    #[error("clip '{clip_id}' has no counterpart")]
    UnmatchedClip { clip_id: String },
    #[error("clip '{clip_id}': {pred} predicted frames for {gt} ground-truth frames")]
    FrameCountMismatch { clip_id: String, pred: usize, gt: usize },
    #[error("ground truth in clip '{clip_id}' is outside the {task} domain")]
    TruthOutOfDomain { clip_id: String, task: Task },
    #[error("confusion matrix for {task} has no scored decisions")]
    EmptyMatrix { task: Task },
    #[error("report is missing {task}")]
    MissingTask { task: Task },
    #[error("cannot merge {left} and {right} matrices")]
    Incompatible { left: Task, right: Task },
}

/// Benchmark report column order.
pub const REPORT_ORDER: [Task; 6] = [
    Task::LaneCount,
    Task::EgoLaneIndex,
    Task::LaneChange,
    Task::TrafficCondition,
    Task::RoadScene,
    Task::Topology,
];

pub fn column_title(task: Task) -> &'static str {
    match task {
        Task::LaneCount => "Lane Count",
        Task::EgoLaneIndex => "Ego-lane Index",
        Task::LaneChange => "Lane Change Feasibility",
        Task::TrafficCondition => "Traffic Condition",
        Task::RoadScene => "Road Scene",
        Task::Topology => "Road Topology",
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

/// Rows are truth, columns are prediction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub task: Task,
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    /// Missing predictions, indexed by true class.
    pub unanswered: Vec<u64>,
}

impl ConfusionMatrix {
    /// Classes of one decision. Lane change and topology decompose into
    /// binary decisions that share a label set.
    pub fn new(task: Task, limits: &DomainLimits) -> Self {
        let field = task.fields()[0];
        let (lo, hi) = field.code_range(limits);
        let labels: Vec<String> = (lo..=hi).map(|c| field.value_name(c)).collect();
        let n = labels.len();
        ConfusionMatrix {
            task,
            labels,
            counts: vec![vec![0; n]; n],
            unanswered: vec![0; n],
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum::<u64>() + self.unanswered.iter().sum::<u64>()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<(), MetricsError> {
        if self.task != other.task || self.labels != other.labels {
            return Err(MetricsError::Incompatible {
                left: self.task,
                right: other.task,
            });
        }
        for (row, o) in self.counts.iter_mut().zip(&other.counts) {
            for (c, x) in row.iter_mut().zip(o) {
                *c += x;
            }
        }
        for (u, x) in self.unanswered.iter_mut().zip(&other.unanswered) {
            *u += x;
        }
        Ok(())
    }

    pub fn class_stats(&self) -> Vec<ClassStats> {
        let n = self.labels.len();
        (0..n)
            .map(|c| {
                let tp = self.counts[c][c];
                let fp = (0..n).filter(|&r| r != c).map(|r| self.counts[r][c]).sum::<u64>();
                let fn_ = (0..n).filter(|&p| p != c).map(|p| self.counts[c][p]).sum::<u64>();
                let unanswered = self.unanswered[c];
                ClassStats {
                    label: self.labels[c].clone(),
                    tp,
                    fp,
                    fn_,
                    unanswered,
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fn_ + unanswered),
                }
            })
            .collect()
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub label: String,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub unanswered: u64,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
}

/// Adds one task's decisions from matched clip pairs. Clips pair by id and
/// frames by position.
pub fn accumulate_into(
    cm: &mut ConfusionMatrix,
    preds: &[PredictionClip],
    gts: &[Clip],
    limits: &DomainLimits,
) -> Result<(), MetricsError> {
    let task = cm.task;
    let by_id: BTreeMap<&str, &PredictionClip> = preds.iter().map(|p| (p.clip_id(), p)).collect();
    if let Some(extra) = preds
        .iter()
        .find(|p| !gts.iter().any(|g| g.clip_id == p.clip_id))
    {
        return Err(MetricsError::UnmatchedClip {
            clip_id: extra.clip_id.clone(),
        });
    }
    for gt in gts {
        let pred = by_id.get(gt.clip_id()).ok_or_else(|| MetricsError::UnmatchedClip {
            clip_id: gt.clip_id.clone(),
        })?;
        if pred.frames.len() != gt.frames.len() {
            return Err(MetricsError::FrameCountMismatch {
                clip_id: gt.clip_id.clone(),
                pred: pred.frames.len(),
                gt: gt.frames.len(),
            });
        }
        for (p, g) in pred.frames.iter().zip(&gt.frames) {
            for &field in task.fields() {
                let (lo, hi) = field.code_range(limits);
                let index = |code: i64| (lo..=hi).contains(&code).then(|| (code - lo) as usize);
                let truth = g.code(field).and_then(index).ok_or_else(|| MetricsError::TruthOutOfDomain {
                    clip_id: gt.clip_id.clone(),
                    task,
                })?;
                // an out-of-domain prediction asserts no class, like a missing one
                match p.code(field).and_then(index) {
                    Some(guess) => cm.counts[truth][guess] += 1,
                    None => cm.unanswered[truth] += 1,
                }
            }
        }
    }
    Ok(())
}

pub fn accumulate(
    preds: &[PredictionClip],
    gts: &[Clip],
    task: Task,
    limits: &DomainLimits,
) -> Result<ConfusionMatrix, MetricsError> {
    let mut cm = ConfusionMatrix::new(task, limits);
    accumulate_into(&mut cm, preds, gts, limits)?;
    Ok(cm)
}

/// Macro average skips classes whose denominator is zero. Precision is 0
/// when no class was ever predicted.
pub fn precision_recall(cm: &ConfusionMatrix) -> Result<(f64, f64), MetricsError> {
    precision_recall_with(cm, Averaging::Macro)
}

pub fn precision_recall_with(cm: &ConfusionMatrix, averaging: Averaging) -> Result<(f64, f64), MetricsError> {
    if cm.total() == 0 {
        return Err(MetricsError::EmptyMatrix { task: cm.task });
    }
    let stats = cm.class_stats();
    let mean = |xs: Vec<f64>| {
        if xs.is_empty() {
            0.0
        } else {
            xs.iter().sum::<f64>() / xs.len() as f64
        }
    };
    Ok(match averaging {
        Averaging::Macro => (
            mean(stats.iter().filter_map(|s| s.precision).collect()),
            mean(stats.iter().filter_map(|s| s.recall).collect()),
        ),
        Averaging::Micro => {
            let tp: u64 = stats.iter().map(|s| s.tp).sum();
            let predicted: u64 = cm.counts.iter().flatten().sum();
            (ratio(tp, predicted).unwrap_or(0.0), ratio(tp, cm.total()).unwrap_or(0.0))
        }
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub model: String,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskScore {
    pub task: Task,
    pub precision_pct: f64,
    pub recall_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub model: String,
    pub config_hash: String,
    pub averaging: Averaging,
    pub notes: Vec<String>,
    /// In report column order.
    pub tasks: Vec<TaskScore>,
    pub overall_precision_pct: f64,
    pub overall_recall_pct: f64,
}

pub const MISSING_PREDICTION_NOTE: &str =
    "missing or unparseable predictions count against recall only, never as false positives";

fn pct(x: f64) -> f64 {
    (x * 10_000.0).round() / 100.0
}

pub fn build_report(
    runs: &BTreeMap<Task, ConfusionMatrix>,
    meta: &ReportMeta,
    averaging: Averaging,
) -> Result<BenchmarkReport, MetricsError> {
    let mut tasks = Vec::with_capacity(6);
    let (mut p_sum, mut r_sum) = (0.0, 0.0);
    for task in REPORT_ORDER {
        let cm = runs.get(&task).ok_or(MetricsError::MissingTask { task })?;
        let (p, r) = precision_recall_with(cm, averaging)?;
        p_sum += p;
        r_sum += r;
        tasks.push(TaskScore {
            task,
            precision_pct: pct(p),
            recall_pct: pct(r),
        });
    }
    Ok(BenchmarkReport {
        model: meta.model.clone(),
        config_hash: meta.config_hash.clone(),
        averaging,
        notes: vec![MISSING_PREDICTION_NOTE.to_string()],
        tasks,
        overall_precision_pct: pct(p_sum / 6.0),
        overall_recall_pct: pct(r_sum / 6.0),
    })
}

/// All six matrices for a prediction set.
pub fn confusion_matrices(
    preds: &[PredictionClip],
    gts: &[Clip],
    limits: &DomainLimits,
) -> Result<BTreeMap<Task, ConfusionMatrix>, MetricsError> {
    Task::ALL
        .into_iter()
        .map(|t| Ok((t, accumulate(preds, gts, t, limits)?)))
        .collect()
}

pub fn evaluate(
    preds: &[PredictionClip],
    gts: &[Clip],
    limits: &DomainLimits,
    meta: &ReportMeta,
    averaging: Averaging,
) -> Result<BenchmarkReport, MetricsError> {
    build_report(&confusion_matrices(preds, gts, limits)?, meta, averaging)
}

impl BenchmarkReport {
    /// Aligned text table with one column group per task heading.
    pub fn to_table(&self) -> String {
        let model_w = self.model.len().max("Model".len());
        let cells: Vec<(&str, f64, f64)> = self
            .tasks
            .iter()
            .map(|t| (column_title(t.task), t.precision_pct, t.recall_pct))
            .chain([("Overall", self.overall_precision_pct, self.overall_recall_pct)])
            .collect();
        let widths: Vec<usize> = cells.iter().map(|(h, _, _)| h.len().max(15)).collect();
        let mut out = String::new();
        let _ = write!(out, "{:<model_w$}", "Model");
        for ((h, _, _), w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {h:^w$}");
        }
        out.push('\n');
        let _ = write!(out, "{:<model_w$}", "");
        for w in &widths {
            let _ = write!(out, " | {:^w$}", format!("{:>7} {:>7}", "P", "R"));
        }
        out.push('\n');
        let _ = write!(out, "{:<model_w$}", self.model);
        for ((_, p, r), w) in cells.iter().zip(&widths) {
            let _ = write!(out, " | {:^w$}", format!("{p:>7.2} {r:>7.2}"));
        }
        out.push('\n');
        out
    }
}

/// Per-class counts and ratios, one line per class.
pub fn breakdown_table(runs: &BTreeMap<Task, ConfusionMatrix>) -> String {
    let mut out = format!(
        "{:<18} {:<12} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9}\n",
        "task", "class", "tp", "fp", "fn", "unanswered", "P", "R"
    );
    let show = |x: Option<f64>| x.map_or_else(|| "-".to_string(), |v| format!("{:.2}", v * 100.0));
    for task in REPORT_ORDER {
        let Some(cm) = runs.get(&task) else { continue };
        for s in cm.class_stats() {
            let _ = writeln!(
                out,
                "{:<18} {:<12} {:>8} {:>8} {:>8} {:>10} {:>9} {:>9}",
                task.name(),
                s.label,
                s.tp,
                s.fp,
                s.fn_,
                s.unanswered,
                show(s.precision),
                show(s.recall)
            );
        }
    }
    out
}
