//! Question/answer templates for the six tasks.
//!
//! Rendering is deterministic and injective over each task's domain. Parsing
//! tokenizes the answer, matches alias phrases longest-first, and binds the
//! matched symbols into a single attribute value. Two distinct candidate
//! values are reported as ambiguous rather than guessed.
//!
//! Tables are plain text, one directive per line:
//!
//! ```text
//! # comment
//! question traffic_condition = Is the traffic free flow, moderate, or congestion?
//! answer   traffic_condition = The traffic condition is {value}.
//! word     free_flow = free flow
//! alias    traffic_condition congestion = congested | traffic jam
//! ```
//!
//! Lines in a user table extend or override the compiled-in defaults.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{
    AttributeValue, DomainLimits, Feasibility, LaneChange, RoadScene, Task, Topology, TrafficCondition,
};

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "code", content = "text", rename_all = "snake_case")]
pub enum QaError {
    #[error("no answer found in '{0}'")]
    Unparseable(String),
    #[error("answer '{0}' matches more than one value")]
    Ambiguous(String),
    #[error("template table line {line}: {message}")]
    Table { line: usize, message: String },
}

const NUMBER_WORDS: [&str; 13] = [
    "zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
];
const ORDINAL_WORDS: [&str; 13] = [
    "zeroth", "first", "second", "third", "fourth", "fifth", "sixth", "seventh", "eighth", "ninth", "tenth",
    "eleventh", "twelfth",
];

pub const DEFAULT_TABLE: &str = r#"
question lane_count = How many lanes are visible?
question ego_lane_index = Which lane (from the left, starting at 1) is the ego vehicle in?
question lane_change = Can the ego vehicle change to the left lane, and to the right lane?
question topology = Does the scene contain a junction, an entrance ramp, or an exit ramp?
question traffic_condition = Is the traffic free flow, moderate, or congestion?
question road_scene = Is the scene urban, suburban, or highway?

answer lane_count = There are {value} lanes.
answer ego_lane_index = The ego vehicle is in lane {value} from the left.
answer lane_change = Left lane change: {left}. Right lane change: {right}.
answer topology = Junction: {junction}. Entrance: {entrance}. Exit: {exit}.
answer traffic_condition = The traffic condition is {value}.
answer road_scene = The road scene is {value}.

word feasible = feasible
word infeasible = infeasible
word true = yes
word false = no
word free_flow = free flow
word moderate = moderate
word congestion = congestion
word urban = urban
word suburban = suburban
word highway = highway

alias ego_lane_index 1 = leftmost

alias lane_change left = left
alias lane_change right = right
alias lane_change both = both | either
alias lane_change feasible = feasible | possible | allowed | permitted | yes | can
alias lane_change infeasible = infeasible | not feasible | impossible | not possible | not allowed | not permitted | prohibited | no | cannot | can not | can t

alias topology junction = junction | intersection | crossroads
alias topology entrance = entrance | entrance ramp | on ramp | entry
alias topology exit = exit | exit ramp | off ramp
alias topology true = yes | present | true | exists
alias topology false = no | absent | false | none | not present

alias traffic_condition free_flow = free flow | free flowing | smooth | light
alias traffic_condition moderate = moderate | medium | slow
alias traffic_condition congestion = congestion | congested | heavy | jam | jammed | traffic jam

alias road_scene urban = urban | city | downtown
alias road_scene suburban = suburban | suburb | suburbs
alias road_scene highway = highway | expressway | freeway | motorway
"#;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Side {
    Left,
    Right,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Flag {
    Junction,
    Entrance,
    Exit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Symbol {
    Number(u32),
    Side(Side),
    Feasibility(Feasibility),
    Flag(Flag),
    Bool(bool),
    Traffic(TrafficCondition),
    Scene(RoadScene),
}

impl Symbol {
    fn for_key(task: Task, key: &str) -> Option<Symbol> {
        Some(match task {
            Task::LaneCount | Task::EgoLaneIndex => Symbol::Number(key.parse().ok()?),
            Task::LaneChange => match key {
                "left" => Symbol::Side(Side::Left),
                "right" => Symbol::Side(Side::Right),
                "both" => Symbol::Side(Side::Both),
                other => Symbol::Feasibility(Feasibility::from_name(other)?),
            },
            Task::Topology => match key {
                "junction" => Symbol::Flag(Flag::Junction),
                "entrance" => Symbol::Flag(Flag::Entrance),
                "exit" => Symbol::Flag(Flag::Exit),
                "true" => Symbol::Bool(true),
                "false" => Symbol::Bool(false),
                _ => return None,
            },
            Task::TrafficCondition => Symbol::Traffic(TrafficCondition::from_name(key)?),
            Task::RoadScene => Symbol::Scene(RoadScene::from_name(key)?),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Word(String),
    Boundary,
}

fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut word = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            word.push(ch);
            continue;
        }
        if !word.is_empty() {
            out.push(Token::Word(std::mem::take(&mut word)));
        }
        if matches!(ch, '.' | ',' | ';' | '!' | '?' | '\n') {
            out.push(Token::Boundary);
        }
    }
    if !word.is_empty() {
        out.push(Token::Word(word));
    }
    out
}

fn phrase_tokens(phrase: &str) -> Vec<String> {
    tokenize(phrase)
        .into_iter()
        .filter_map(|t| match t {
            Token::Word(w) => Some(w),
            Token::Boundary => None,
        })
        .collect()
}

/// Digits, digit ordinals ("2nd"), number words and ordinal words.
fn number_token(word: &str) -> Option<u32> {
    if let Ok(n) = word.parse::<u32>() {
        return Some(n);
    }
    let digits: String = word.chars().take_while(char::is_ascii_digit).collect();
    if !digits.is_empty() && matches!(&word[digits.len()..], "st" | "nd" | "rd" | "th") {
        return digits.parse().ok();
    }
    NUMBER_WORDS
        .iter()
        .position(|w| *w == word)
        .or_else(|| ORDINAL_WORDS.iter().position(|w| *w == word))
        .map(|n| n as u32)
}

#[derive(Debug, Clone, PartialEq)]
pub struct QaTemplates {
    questions: BTreeMap<Task, String>,
    answers: BTreeMap<Task, String>,
    words: BTreeMap<String, String>,
    /// Per task: alias phrases (tokenized) with the symbol they denote.
    aliases: BTreeMap<Task, Vec<(Vec<String>, Symbol)>>,
    limits: DomainLimits,
}

impl Default for QaTemplates {
    fn default() -> Self {
        let mut t = QaTemplates {
            questions: BTreeMap::new(),
            answers: BTreeMap::new(),
            words: BTreeMap::new(),
            aliases: BTreeMap::new(),
            limits: DomainLimits::default(),
        };
        t.apply(DEFAULT_TABLE).expect("compiled-in table is well formed");
        t
    }
}

impl QaTemplates {
    /// Defaults extended by `table`, checked for injectivity and round-trip.
    pub fn from_table(table: &str, limits: DomainLimits) -> Result<Self, QaError> {
        let mut t = QaTemplates {
            limits,
            ..QaTemplates::default()
        };
        t.apply(table)?;
        t.check()?;
        Ok(t)
    }

    pub fn load(path: &Path, limits: DomainLimits) -> Result<Self, QaError> {
        let text = std::fs::read_to_string(path).map_err(|e| QaError::Table {
            line: 0,
            message: format!("cannot read {}: {e}", path.display()),
        })?;
        QaTemplates::from_table(&text, limits)
    }

    pub fn limits(&self) -> DomainLimits {
        self.limits
    }

    fn apply(&mut self, table: &str) -> Result<(), QaError> {
        for (i, raw) in table.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| QaError::Table { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (head, body) = line
                .split_once('=')
                .ok_or_else(|| err("expected '<directive> ... = <text>'".into()))?;
            let body = body.trim().to_string();
            let mut parts = head.split_whitespace();
            let directive = parts.next().unwrap_or_default();
            let task = |name: Option<&str>| {
                let name = name.ok_or_else(|| err("missing task name".into()))?;
                Task::from_name(name).map_err(|e| err(e.to_string()))
            };
            match directive {
                "question" => {
                    let t = task(parts.next())?;
                    self.questions.insert(t, body);
                }
                "answer" => {
                    let t = task(parts.next())?;
                    self.answers.insert(t, body);
                }
                "word" => {
                    let key = parts.next().ok_or_else(|| err("missing word key".into()))?;
                    self.words.insert(key.to_string(), body);
                }
                "alias" => {
                    let t = task(parts.next())?;
                    let key = parts.next().ok_or_else(|| err("missing alias value".into()))?;
                    let symbol = Symbol::for_key(t, key)
                        .ok_or_else(|| err(format!("'{key}' is not a value of {t}")))?;
                    let list = self.aliases.entry(t).or_default();
                    for phrase in body.split('|') {
                        let tokens = phrase_tokens(phrase);
                        if tokens.is_empty() {
                            return Err(err("empty alias phrase".into()));
                        }
                        list.retain(|(p, _)| *p != tokens);
                        list.push((tokens, symbol));
                    }
                    // longest phrase first so "not feasible" wins over "feasible"
                    list.sort_by_key(|(p, _)| std::cmp::Reverse(p.len()));
                }
                other => return Err(err(format!("unknown directive '{other}'"))),
            }
            if parts.next().is_some() {
                return Err(err("unexpected extra words before '='".into()));
            }
        }
        Ok(())
    }

    /// Every domain value must render to a distinct string that parses back to itself.
    fn check(&self) -> Result<(), QaError> {
        let err = |message: String| QaError::Table { line: 0, message };
        for task in Task::ALL {
            let mut seen = BTreeSet::new();
            for value in AttributeValue::domain(task, &self.limits) {
                let text = self.render_answer(&value);
                if !seen.insert(text.clone()) {
                    return Err(err(format!("two {task} values render as '{text}'")));
                }
                match self.parse_answer(&text, task) {
                    Ok(v) if v == value => {}
                    other => return Err(err(format!("'{text}' does not parse back ({other:?})"))),
                }
            }
        }
        Ok(())
    }

    pub fn render_question(&self, task: Task) -> &str {
        self.questions.get(&task).map(String::as_str).unwrap_or_default()
    }

    fn word<'a>(&'a self, key: &'a str) -> &'a str {
        self.words.get(key).map(String::as_str).unwrap_or(key)
    }

    pub fn render_answer(&self, value: &AttributeValue) -> String {
        let template = self.answers.get(&value.task()).map(String::as_str).unwrap_or("{value}");
        let bool_key = |b: bool| if b { "true" } else { "false" };
        match value {
            AttributeValue::LaneCount(n) | AttributeValue::EgoLaneIndex(n) => {
                template.replace("{value}", &n.to_string())
            }
            AttributeValue::LaneChange(lc) => template
                .replace("{left}", self.word(lc.left.name()))
                .replace("{right}", self.word(lc.right.name())),
            AttributeValue::Topology(t) => template
                .replace("{junction}", self.word(bool_key(t.junction)))
                .replace("{entrance}", self.word(bool_key(t.entrance)))
                .replace("{exit}", self.word(bool_key(t.exit))),
            AttributeValue::TrafficCondition(t) => template.replace("{value}", self.word(t.name())),
            AttributeValue::RoadScene(s) => template.replace("{value}", self.word(s.name())),
        }
    }

    /// Alternative surface forms accepted for one placeholder value; the first
    /// entry is the canonical form.
    pub fn surface_forms(&self, task: Task, key: &str) -> Vec<String> {
        let mut forms = vec![self.word(key).to_string()];
        if matches!(task, Task::LaneCount | Task::EgoLaneIndex) {
            if let Ok(n) = key.parse::<usize>() {
                forms.extend(NUMBER_WORDS.get(n).map(|w| w.to_string()));
                if task == Task::EgoLaneIndex {
                    forms.extend(ORDINAL_WORDS.get(n).map(|w| w.to_string()));
                    let suffix = match n % 10 {
                        1 if n % 100 != 11 => "st",
                        2 if n % 100 != 12 => "nd",
                        3 if n % 100 != 13 => "rd",
                        _ => "th",
                    };
                    forms.push(format!("{n}{suffix}"));
                }
            }
        }
        if let Some(symbol) = Symbol::for_key(task, key) {
            for (phrase, s) in self.aliases.get(&task).into_iter().flatten() {
                if *s == symbol {
                    let text = phrase.join(" ");
                    if !forms.contains(&text) {
                        forms.push(text);
                    }
                }
            }
        }
        forms
    }

    /// Renders `value` with each placeholder replaced by a form chosen by `pick`
    /// from [`QaTemplates::surface_forms`].
    pub fn render_with(&self, value: &AttributeValue, mut pick: impl FnMut(&[String]) -> String) -> String {
        let task = value.task();
        let template = self.answers.get(&task).map(String::as_str).unwrap_or("{value}");
        let mut form = |key: &str| pick(&self.surface_forms(task, key));
        let bool_key = |b: bool| if b { "true" } else { "false" };
        match value {
            AttributeValue::LaneCount(n) | AttributeValue::EgoLaneIndex(n) => {
                template.replace("{value}", &form(&n.to_string()))
            }
            AttributeValue::LaneChange(lc) => {
                let left = form(lc.left.name());
                let right = form(lc.right.name());
                template.replace("{left}", &left).replace("{right}", &right)
            }
            AttributeValue::Topology(t) => {
                let j = form(bool_key(t.junction));
                let en = form(bool_key(t.entrance));
                let ex = form(bool_key(t.exit));
                template
                    .replace("{junction}", &j)
                    .replace("{entrance}", &en)
                    .replace("{exit}", &ex)
            }
            AttributeValue::TrafficCondition(t) => template.replace("{value}", &form(t.name())),
            AttributeValue::RoadScene(s) => template.replace("{value}", &form(s.name())),
        }
    }

    /// Symbols per clause.
    fn scan(&self, text: &str, task: Task) -> Vec<Vec<Symbol>> {
        let tokens = tokenize(text);
        let aliases = self.aliases.get(&task).map(Vec::as_slice).unwrap_or_default();
        let numeric = matches!(task, Task::LaneCount | Task::EgoLaneIndex);
        let mut clauses = vec![Vec::new()];
        let mut i = 0;
        while i < tokens.len() {
            let word = match &tokens[i] {
                Token::Boundary => {
                    clauses.push(Vec::new());
                    i += 1;
                    continue;
                }
                Token::Word(w) => w,
            };
            let hit = aliases.iter().find(|(phrase, _)| {
                phrase.len() <= tokens.len() - i
                    && phrase
                        .iter()
                        .zip(&tokens[i..])
                        .all(|(p, t)| matches!(t, Token::Word(w) if w == p))
            });
            let clause = clauses.last_mut().expect("never empty");
            if let Some((phrase, symbol)) = hit {
                clause.push(*symbol);
                i += phrase.len();
                continue;
            }
            if numeric {
                if let Some(n) = number_token(word) {
                    clause.push(Symbol::Number(n));
                }
            }
            i += 1;
        }
        clauses
    }

    pub fn parse_answer(&self, text: &str, task: Task) -> Result<AttributeValue, QaError> {
        let clauses = self.scan(text, task);
        let unparseable = || QaError::Unparseable(text.to_string());
        let ambiguous = || QaError::Ambiguous(text.to_string());
        let single = |values: BTreeSet<AttributeValue>| match values.len() {
            0 => Err(unparseable()),
            1 => Ok(values.into_iter().next().expect("one element")),
            _ => Err(ambiguous()),
        };
        let symbols = clauses.iter().flatten();
        match task {
            Task::LaneCount | Task::EgoLaneIndex => {
                let max = self.limits.max_lanes;
                single(
                    symbols
                        .filter_map(|s| match s {
                            Symbol::Number(n) if (1..=max).contains(n) => Some(if task == Task::LaneCount {
                                AttributeValue::LaneCount(*n)
                            } else {
                                AttributeValue::EgoLaneIndex(*n)
                            }),
                            _ => None,
                        })
                        .collect(),
                )
            }
            Task::TrafficCondition => single(
                symbols
                    .filter_map(|s| match s {
                        Symbol::Traffic(t) => Some(AttributeValue::TrafficCondition(*t)),
                        _ => None,
                    })
                    .collect(),
            ),
            Task::RoadScene => single(
                symbols
                    .filter_map(|s| match s {
                        Symbol::Scene(r) => Some(AttributeValue::RoadScene(*r)),
                        _ => None,
                    })
                    .collect(),
            ),
            Task::LaneChange => {
                let bound = bind(&clauses, |s| match s {
                    Symbol::Side(Side::Both) => Some(Binding::Labels(vec![Side::Left, Side::Right])),
                    Symbol::Side(side) => Some(Binding::Labels(vec![*side])),
                    Symbol::Feasibility(f) => Some(Binding::Value(*f)),
                    _ => None,
                })
                .ok_or_else(ambiguous)?;
                match (bound.get(&Side::Left), bound.get(&Side::Right)) {
                    (Some(left), Some(right)) => Ok(AttributeValue::LaneChange(LaneChange {
                        left: *left,
                        right: *right,
                    })),
                    _ => Err(unparseable()),
                }
            }
            Task::Topology => {
                let bound = bind(&clauses, |s| match s {
                    Symbol::Flag(f) => Some(Binding::Labels(vec![*f])),
                    Symbol::Bool(b) => Some(Binding::Value(*b)),
                    _ => None,
                })
                .ok_or_else(ambiguous)?;
                match (
                    bound.get(&Flag::Junction),
                    bound.get(&Flag::Entrance),
                    bound.get(&Flag::Exit),
                ) {
                    (Some(j), Some(en), Some(ex)) => Ok(AttributeValue::Topology(Topology {
                        junction: *j,
                        entrance: *en,
                        exit: *ex,
                    })),
                    _ => Err(unparseable()),
                }
            }
        }
    }
}

enum Binding<L, V> {
    Labels(Vec<L>),
    Value(V),
}

/// Binds values to labels clause by clause. A value attaches to the labels
/// seen since the previous value; with none pending it reuses the last bound
/// group, or waits for the next label. Returns `None` on a conflicting binding.
fn bind<L: Ord + Copy, V: PartialEq + Copy>(
    clauses: &[Vec<Symbol>],
    classify: impl Fn(&Symbol) -> Option<Binding<L, V>>,
) -> Option<BTreeMap<L, V>> {
    let mut out: BTreeMap<L, V> = BTreeMap::new();
    let assign = |labels: &[L], value: V, out: &mut BTreeMap<L, V>| -> Option<()> {
        for l in labels {
            match out.get(l) {
                Some(v) if *v != value => return None,
                _ => {
                    out.insert(*l, value);
                }
            }
        }
        Some(())
    };
    for clause in clauses {
        let mut pending: Vec<L> = Vec::new();
        let mut last_group: Vec<L> = Vec::new();
        let mut waiting: Option<V> = None;
        for symbol in clause {
            match classify(symbol) {
                Some(Binding::Labels(labels)) => {
                    if let Some(v) = waiting.take() {
                        assign(&labels, v, &mut out)?;
                        last_group = labels;
                    } else {
                        pending.extend(labels);
                    }
                }
                Some(Binding::Value(v)) => {
                    if !pending.is_empty() {
                        assign(&pending, v, &mut out)?;
                        last_group = std::mem::take(&mut pending);
                    } else if !last_group.is_empty() {
                        assign(&last_group, v, &mut out)?;
                    } else if waiting.is_some_and(|w| w != v) {
                        return None;
                    } else {
                        waiting = Some(v);
                    }
                }
                None => {}
            }
        }
    }
    Some(out)
}

pub fn render_question(task: Task) -> String {
    QaTemplates::default().render_question(task).to_string()
}

pub fn render_answer(value: &AttributeValue) -> String {
    QaTemplates::default().render_answer(value)
}

pub fn parse_answer(text: &str, task: Task) -> Result<AttributeValue, QaError> {
    QaTemplates::default().parse_answer(text, task)
}
