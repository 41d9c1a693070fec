//! Symbolic QA agents.
//!
//! An agent's valid-input language is its set of question templates. A
//! question is answered only if it matches one of them exactly (after
//! lowercasing and whitespace normalization) and, for knowledge agents, the
//! matched relation is assigned to that agent in the current world.

use std::fmt;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::answer::{format_number, Answer};
use crate::error::ConfigError;
use crate::rng::rng_for;
use crate::world::{KbSchema, World};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Text,
    Table,
    Kb,
    Math,
}

impl fmt::Display for Modality {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Modality::Text => "text",
            Modality::Table => "table",
            Modality::Kb => "kb",
            Modality::Math => "math",
        })
    }
}

impl std::str::FromStr for Modality {
    type Err = ConfigError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "text" => Ok(Modality::Text),
            "table" => Ok(Modality::Table),
            "kb" => Ok(Modality::Kb),
            "math" => Ok(Modality::Math),
            other => Err(ConfigError::Other(format!("unknown modality `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    /// Slot is the subject; answers are objects.
    Forward,
    /// Slot is the object; answers are subjects.
    Reverse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerShape {
    Single,
    List,
}

/// Slot marker used in template patterns.
pub const SLOT: &str = "__";

pub fn normalize_question(q: &str) -> String {
    q.split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
        .to_lowercase()
}

fn compile(pattern: &str, slots: usize, slot_re: &str) -> Result<Regex, ConfigError> {
    let norm = normalize_question(pattern);
    let parts: Vec<&str> = norm.split(SLOT).collect();
    if parts.len() != slots + 1 {
        return Err(ConfigError::SlotCount {
            pattern: pattern.into(),
            expected: slots,
        });
    }
    let body = parts
        .iter()
        .map(|p| regex::escape(p))
        .collect::<Vec<_>>()
        .join(slot_re);
    Regex::new(&format!("^{body}$")).map_err(|e| ConfigError::Other(e.to_string()))
}

#[derive(Debug, Clone)]
pub struct QuestionTemplate {
    pub agent: String,
    pub relation: String,
    pub direction: Direction,
    pub answer_shape: AnswerShape,
    /// Phrasings of the same question; each contains one `__` slot.
    pub patterns: Vec<String>,
    pub slot_type: String,
    pub slot_numeric: bool,
    pub answer_numeric: bool,
    compiled: Vec<Regex>,
}

impl QuestionTemplate {
    pub fn new(
        agent: &str,
        schema: &KbSchema,
        relation: &str,
        direction: Direction,
        patterns: Vec<String>,
    ) -> Result<Self, ConfigError> {
        let rel = schema
            .relation(relation)
            .ok_or_else(|| ConfigError::UnknownRelation(relation.into()))?;
        let (slot_type, answer_type) = match direction {
            Direction::Forward => (&rel.subject, &rel.object),
            Direction::Reverse => (&rel.object, &rel.subject),
        };
        let is_num = |t: &str| schema.entity_type(t).is_some_and(|t| t.is_numeric());
        let answer_shape = if direction == Direction::Forward && rel.is_functional() {
            AnswerShape::Single
        } else {
            AnswerShape::List
        };
        let compiled = patterns
            .iter()
            .map(|p| compile(p, 1, r"(\S+)"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            agent: agent.into(),
            relation: relation.into(),
            direction,
            answer_shape,
            patterns,
            slot_numeric: is_num(slot_type),
            slot_type: slot_type.clone(),
            answer_numeric: is_num(answer_type),
            compiled,
        })
    }

    /// Slot value if the normalized question matches one of the patterns.
    pub fn match_slot(&self, normalized: &str) -> Option<String> {
        self.compiled
            .iter()
            .find_map(|re| re.captures(normalized).map(|c| c[1].to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MathOp {
    /// `a > b`
    Greater,
    /// `a < b`
    Smaller,
    /// `|a - b|`
    Difference,
    Sum,
    /// Largest number of a list.
    Max,
    Min,
    /// Whether a value is a member of a list.
    PartOf,
    Count,
}

impl MathOp {
    pub fn arity(self) -> usize {
        match self {
            MathOp::Greater | MathOp::Smaller | MathOp::Difference | MathOp::Sum | MathOp::PartOf => 2,
            MathOp::Max | MathOp::Min | MathOp::Count => 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct MathTemplate {
    pub op: MathOp,
    pub patterns: Vec<String>,
    compiled: Vec<Regex>,
}

impl MathTemplate {
    pub fn new(op: MathOp, patterns: Vec<String>) -> Result<Self, ConfigError> {
        let compiled = patterns
            .iter()
            .map(|p| compile(p, op.arity(), "(.+?)"))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            op,
            patterns,
            compiled,
        })
    }

    fn match_args(&self, normalized: &str) -> Option<Vec<String>> {
        self.compiled.iter().find_map(|re| {
            re.captures(normalized).map(|c| {
                c.iter()
                    .skip(1)
                    .map(|m| m.map_or(String::new(), |m| m.as_str().trim().to_string()))
                    .collect()
            })
        })
    }
}

#[derive(Debug, Clone)]
pub struct AgentSpec {
    pub id: String,
    pub modality: Modality,
    pub templates: Vec<QuestionTemplate>,
    pub math: Vec<MathTemplate>,
}

impl AgentSpec {
    /// Every pattern this agent accepts, knowledge and math alike.
    pub fn patterns(&self) -> impl Iterator<Item = &str> {
        self.templates
            .iter()
            .flat_map(|t| t.patterns.iter())
            .chain(self.math.iter().flat_map(|m| m.patterns.iter()))
            .map(String::as_str)
    }

    /// Reject pattern pairs where a grounded instance of one matches the other.
    pub fn check_unambiguous(&self) -> Vec<ConfigError> {
        const PROBE: &str = "qqprobeqq";
        let mut errs = Vec::new();
        let mut all: Vec<(&str, &Regex)> = Vec::new();
        for t in &self.templates {
            all.extend(t.patterns.iter().map(String::as_str).zip(t.compiled.iter()));
        }
        for m in &self.math {
            all.extend(m.patterns.iter().map(String::as_str).zip(m.compiled.iter()));
        }
        let grounded: Vec<String> = all
            .iter()
            .map(|(p, _)| normalize_question(&p.replace(SLOT, PROBE)))
            .collect();
        for (i, (p1, re1)) in all.iter().enumerate() {
            for (j, (p2, re2)) in all.iter().enumerate().skip(i + 1) {
                if re2.is_match(&grounded[i]) || re1.is_match(&grounded[j]) {
                    errs.push(ConfigError::AmbiguousTemplates {
                        agent: self.id.clone(),
                        first: p1.to_string(),
                        second: p2.to_string(),
                    });
                }
            }
        }
        errs
    }
}

/// Why an agent declined to answer.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum Refusal {
    #[error("question is outside the agent's language")]
    NoMatch,
    #[error("relation `{0}` is answered by another agent in this world")]
    WrongAgent(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("agent call budget exhausted")]
    BudgetExhausted,
}

/// An answer plus the ids (indices into `world.facts`) of the facts it used.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentReply {
    pub answer: Answer,
    pub facts: Vec<usize>,
}

impl AgentReply {
    fn pure(answer: Answer) -> Self {
        Self {
            answer,
            facts: Vec::new(),
        }
    }
}

/// Anything that answers `(agent id, question)` pairs.
pub trait Answerer: Sync {
    fn ask(&self, agent: &str, question: &str) -> Result<AgentReply, Refusal>;
}

/// All agents of a recipe.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    agents: IndexMap<String, AgentSpec>,
}

impl Registry {
    pub fn new(agents: Vec<AgentSpec>) -> Self {
        Self {
            agents: agents.into_iter().map(|a| (a.id.clone(), a)).collect(),
        }
    }

    pub fn get(&self, id: &str) -> Option<&AgentSpec> {
        self.agents.get(id)
    }

    pub fn agents(&self) -> impl Iterator<Item = &AgentSpec> {
        self.agents.values()
    }

    /// Number of distinct (agent, pattern) pairs across all agents.
    pub fn template_count(&self) -> usize {
        self.agents.values().map(|a| a.patterns().count()).sum()
    }

    /// Knowledge template (of any agent) matching a question, used to find
    /// which relation a question is about.
    pub fn match_relation(&self, question: &str) -> Option<&QuestionTemplate> {
        let q = normalize_question(question);
        self.agents
            .values()
            .flat_map(|a| a.templates.iter())
            .find(|t| t.match_slot(&q).is_some())
    }

    /// Introspection dump: agent id to accepted patterns.
    pub fn dump(&self) -> IndexMap<String, Vec<String>> {
        self.agents
            .values()
            .map(|a| (a.id.clone(), a.patterns().map(String::from).collect()))
            .collect()
    }

    pub fn bind<'a>(&'a self, world: &'a World) -> WorldAgents<'a> {
        WorldAgents {
            registry: self,
            world,
        }
    }
}

/// A registry bound to one world.
#[derive(Clone, Copy)]
pub struct WorldAgents<'a> {
    pub registry: &'a Registry,
    pub world: &'a World,
}

impl Answerer for WorldAgents<'_> {
    fn ask(&self, agent: &str, question: &str) -> Result<AgentReply, Refusal> {
        let spec = self
            .registry
            .get(agent)
            .ok_or_else(|| Refusal::UnknownAgent(agent.into()))?;
        ask(spec, self.world, question)
    }
}

fn numbers_equal(a: &str, b: &str) -> bool {
    match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) => x == y,
        _ => false,
    }
}

/// Answer a question against the world's facts.
pub fn ask(agent: &AgentSpec, world: &World, question: &str) -> Result<AgentReply, Refusal> {
    if agent.modality == Modality::Math {
        return ask_math(agent, question).map(AgentReply::pure);
    }
    let q = normalize_question(question);
    for t in &agent.templates {
        let Some(slot) = t.match_slot(&q) else {
            continue;
        };
        let slot = if t.slot_numeric {
            match slot.parse::<f64>() {
                Ok(v) if v.is_finite() => format_number(v),
                _ => return Err(Refusal::NoMatch),
            }
        } else if world.has_entity(&t.slot_type, &slot) {
            slot
        } else {
            return Err(Refusal::NoMatch);
        };
        if world.assignment.get(&t.relation).map(String::as_str) != Some(agent.id.as_str()) {
            return Err(Refusal::WrongAgent(t.relation.clone()));
        }
        let mut ids = Vec::new();
        let mut items = Vec::new();
        for (i, f) in world.facts.iter().enumerate() {
            if f.relation != t.relation {
                continue;
            }
            let (key, value) = match t.direction {
                Direction::Forward => (&f.subject, &f.object),
                Direction::Reverse => (&f.object, &f.subject),
            };
            let hit = if t.slot_numeric {
                numbers_equal(key, &slot)
            } else {
                *key == slot
            };
            if hit {
                ids.push(i);
                items.push(if t.answer_numeric {
                    Answer::Number(value.parse().unwrap_or(f64::NAN))
                } else {
                    Answer::Text(value.clone())
                });
            }
        }
        let answer = match t.answer_shape {
            AnswerShape::Single => match items.len() {
                0 => return Err(Refusal::NoMatch),
                _ => items.swap_remove(0),
            },
            AnswerShape::List => Answer::List(items),
        };
        ids.truncate(if t.answer_shape == AnswerShape::Single { 1 } else { ids.len() });
        return Ok(AgentReply { answer, facts: ids });
    }
    Err(Refusal::NoMatch)
}

fn parse_number(s: &str) -> Option<f64> {
    s.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_list(s: &str) -> Vec<String> {
    let s = s.trim();
    let inner = s
        .strip_prefix('[')
        .and_then(|r| r.strip_suffix(']'))
        .unwrap_or(s);
    if inner.trim().is_empty() {
        return Vec::new();
    }
    inner.split(',').map(|x| x.trim().to_string()).collect()
}

fn parse_numbers(s: &str) -> Option<Vec<f64>> {
    parse_list(s).iter().map(|x| parse_number(x)).collect()
}

/// Pure arithmetic over values written in the question.
pub fn ask_math(agent: &AgentSpec, question: &str) -> Result<Answer, Refusal> {
    let q = normalize_question(question);
    for t in &agent.math {
        let Some(args) = t.match_args(&q) else {
            continue;
        };
        let two = || -> Option<(f64, f64)> { Some((parse_number(&args[0])?, parse_number(&args[1])?)) };
        let out = match t.op {
            MathOp::Greater => two().map(|(a, b)| Answer::Bool(a > b)),
            MathOp::Smaller => two().map(|(a, b)| Answer::Bool(a < b)),
            MathOp::Difference => two().map(|(a, b)| Answer::Number((a - b).abs())),
            MathOp::Sum => two().map(|(a, b)| Answer::Number(a + b)),
            MathOp::Max => parse_numbers(&args[0])
                .and_then(|v| v.into_iter().reduce(f64::max))
                .map(Answer::Number),
            MathOp::Min => parse_numbers(&args[0])
                .and_then(|v| v.into_iter().reduce(f64::min))
                .map(Answer::Number),
            MathOp::Count => Some(Answer::Number(parse_list(&args[0]).len() as f64)),
            MathOp::PartOf => {
                let needle = args[0].trim();
                let hay = parse_list(&args[1]);
                Some(Answer::Bool(hay.iter().any(|h| {
                    h == needle || numbers_equal(h, needle)
                })))
            }
        };
        return out.ok_or(Refusal::NoMatch);
    }
    Err(Refusal::NoMatch)
}

/// A grounded valid input with the values that filled its slots.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidInput {
    pub agent: String,
    pub question: String,
    pub pattern: String,
    pub slots: Vec<String>,
}

fn fill(pattern: &str, values: &[String]) -> String {
    let mut out = String::new();
    let mut rest = pattern;
    for v in values {
        match rest.find(SLOT) {
            Some(i) => {
                out.push_str(&rest[..i]);
                out.push_str(v);
                rest = &rest[i + SLOT.len()..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

/// Grounded questions the agent answers in `world`, with their slot values.
pub fn sample_valid_input_records(
    agent: &AgentSpec,
    world: &World,
    seed: u64,
    n: usize,
) -> Vec<ValidInput> {
    let mut rng = rng_for(seed, &[crate::rng::hash_str(&agent.id)]);
    let mut out = Vec::with_capacity(n);
    if agent.modality == Modality::Math {
        if agent.math.is_empty() {
            return out;
        }
        while out.len() < n {
            let t = agent.math.choose(&mut rng).expect("non-empty");
            let pattern = t.patterns.choose(&mut rng).expect("pattern").clone();
            let num = |rng: &mut rand_chacha::ChaCha8Rng| format_number(rng.gen_range(1..100) as f64);
            let list = |rng: &mut rand_chacha::ChaCha8Rng| {
                let k = rng.gen_range(2..=5);
                let v: Vec<String> = (0..k).map(|_| num(rng)).collect();
                format!("[{}]", v.join(", "))
            };
            let slots = match t.op {
                MathOp::Max | MathOp::Min | MathOp::Count => vec![list(&mut rng)],
                MathOp::PartOf => vec![num(&mut rng), list(&mut rng)],
                _ => vec![num(&mut rng), num(&mut rng)],
            };
            let question = fill(&pattern, &slots);
            debug_assert!(ask_math(agent, &question).is_ok());
            out.push(ValidInput {
                agent: agent.id.clone(),
                question,
                pattern,
                slots,
            });
        }
        return out;
    }
    let usable: Vec<&QuestionTemplate> = agent
        .templates
        .iter()
        .filter(|t| world.assignment.get(&t.relation) == Some(&agent.id))
        .filter(|t| world.entities.get(&t.slot_type).is_some_and(|e| !e.is_empty()))
        .collect();
    if usable.is_empty() {
        return out;
    }
    let mut tries = 0;
    while out.len() < n && tries < n * 50 {
        tries += 1;
        let t = usable.choose(&mut rng).expect("non-empty");
        let pattern = t.patterns.choose(&mut rng).expect("pattern").clone();
        let value = world.entities[&t.slot_type]
            .choose(&mut rng)
            .expect("non-empty")
            .clone();
        let question = fill(&pattern, std::slice::from_ref(&value));
        if ask(agent, world, &question).is_ok() {
            out.push(ValidInput {
                agent: agent.id.clone(),
                question,
                pattern,
                slots: vec![value],
            });
        }
    }
    out
}

/// `n` grounded questions the agent answers in `world`.
pub fn sample_valid_inputs(agent: &AgentSpec, world: &World, seed: u64, n: usize) -> Vec<String> {
    sample_valid_input_records(agent, world, seed, n)
        .into_iter()
        .map(|v| v.question)
        .collect()
}
