//! Line-delimited request/response protocol over any reader and writer.
//!
//! Each input line is one JSON request and produces exactly one output line:
//!
//! ```text
//! {"op": "reward", "pred": <prediction clip>, "gt": <clip>}
//! {"op": "check", "clip": <clip>}
//! {"op": "parse", "task": "lane_count", "text": "there are three lanes"}
//! ```
//!
//! Responses are `{"ok": true, "result": ...}` or
//! `{"ok": false, "error": <code>, "message": ..., "line": N}`.

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::{Config, ConfigError};
use crate::consistency::{validate_clip, ClipValidation, TransitionRuleSet};
use crate::qa::{QaError, QaTemplates};
use crate::reward::{hrrp_t_reward_with, RewardBreakdown, RewardError};
use crate::schema::{AttributeValue, Clip, PredictionClip, Task};

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case", deny_unknown_fields)]
pub enum Request {
    Reward { pred: PredictionClip, gt: Clip },
    Check { clip: Clip },
    Parse { task: Task, text: String },
}

#[derive(Debug, Clone, Serialize)]
pub struct ParseResult {
    pub value: AttributeValue,
}

/// Everything a request needs, built once from the config.
#[derive(Debug, Clone)]
pub struct Engine {
    pub config: Config,
    pub rules: TransitionRuleSet,
    pub templates: QaTemplates,
}

impl Engine {
    pub fn new(config: Config) -> Result<Engine, ConfigError> {
        let rules = config.rule_set()?;
        let templates = match &config.templates {
            Some(path) => QaTemplates::load(path.as_ref(), config.domain),
            None => QaTemplates::from_table("", config.domain),
        }
        .map_err(|e| ConfigError::Templates(e.to_string()))?;
        Ok(Engine {
            config,
            rules,
            templates,
        })
    }

    pub fn reward(&self, pred: &PredictionClip, gt: &Clip) -> Result<RewardBreakdown, RewardError> {
        hrrp_t_reward_with(pred, gt, &self.config.reward, &self.rules, &self.config.domain)
    }

    pub fn check(&self, clip: &Clip) -> ClipValidation {
        validate_clip(clip, &self.rules, &self.config.domain)
    }

    pub fn parse(&self, task: Task, text: &str) -> Result<AttributeValue, QaError> {
        self.templates.parse_answer(text, task)
    }

    /// Response for one input line; `line` is 1-based.
    pub fn handle_line(&self, text: &str, line: usize) -> Value {
        let request: Request = match serde_json::from_str(text) {
            Ok(r) => r,
            Err(e) => return failure("parse", e.to_string(), line),
        };
        let result = match request {
            Request::Reward { pred, gt } => match self.reward(&pred, &gt) {
                Ok(b) => serde_json::to_value(b),
                Err(e) => return failure(reward_code(&e), e.to_string(), line),
            },
            Request::Check { clip } => serde_json::to_value(self.check(&clip)),
            Request::Parse { task, text } => match self.parse(task, &text) {
                Ok(value) => serde_json::to_value(ParseResult { value }),
                Err(e) => return failure(qa_code(&e), e.to_string(), line),
            },
        };
        match result {
            Ok(result) => json!({"ok": true, "result": result}),
            Err(e) => failure("internal", e.to_string(), line),
        }
    }
}

fn failure(code: &str, message: String, line: usize) -> Value {
    json!({"ok": false, "error": code, "message": message, "line": line})
}

fn reward_code(e: &RewardError) -> &'static str {
    match e {
        RewardError::SeriesTooShort { .. } => "series_too_short",
        RewardError::ClipLengthMismatch { .. } => "clip_length_mismatch",
    }
}

fn qa_code(e: &QaError) -> &'static str {
    match e {
        QaError::Unparseable(_) => "unparseable",
        QaError::Ambiguous(_) => "ambiguous",
        QaError::Table { .. } => "templates",
    }
}

/// Answers requests until end of input. Blank lines still get a response so
/// output lines stay aligned with input lines.
pub fn serve(engine: &Engine, input: impl BufRead, mut output: impl Write) -> std::io::Result<()> {
    for (i, line) in input.lines().enumerate() {
        let response = match line {
            Ok(text) => engine.handle_line(&text, i + 1),
            Err(e) => failure("parse", e.to_string(), i + 1),
        };
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
    }
    Ok(())
}
