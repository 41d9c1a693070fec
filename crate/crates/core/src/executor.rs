//! Runs decomposition programs against agents.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::agents::{AgentReply, Answerer, Refusal};
use crate::answer::Answer;
use crate::dsl::{apply_operator, DecompProgram, DecompStep, OpFailure};
use crate::error::ShapeError;

/// `$j` → grounding text.
pub type Grounding = BTreeMap<usize, String>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub index: usize,
    pub agent: String,
    pub operator: String,
    /// Every question sent to the agent, in call order.
    pub questions: Vec<String>,
    pub answer: Answer,
    /// Ids of facts the agent touched while answering, sorted.
    pub facts: Vec<usize>,
    pub calls: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FailureReason {
    Refused { question: String, refusal: String },
    Shape { message: String },
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TraceStatus {
    Success,
    Failed { step: usize, reason: FailureReason },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub steps: Vec<StepTrace>,
    pub final_answer: Option<Answer>,
    pub status: TraceStatus,
    pub calls: usize,
}

impl ExecutionTrace {
    pub fn succeeded(&self) -> bool {
        self.status == TraceStatus::Success
    }

    /// Union of touched fact ids over all steps.
    pub fn touched_facts(&self) -> Vec<usize> {
        self.steps
            .iter()
            .flat_map(|s| s.facts.iter().copied())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }
}

/// A failed step: the calls it consumed and why it failed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepFailure {
    pub calls: usize,
    pub questions: Vec<String>,
    pub reason: FailureReason,
}

/// Execute one step given the answers of earlier steps.
pub fn execute_step(
    step: &DecompStep,
    agents: &dyn Answerer,
    answers: &BTreeMap<usize, Answer>,
) -> Result<StepTrace, StepFailure> {
    let mut questions = Vec::new();
    let mut facts = BTreeSet::new();
    let mut calls = 0;
    let mut ask = |q: &str| -> Result<Answer, Refusal> {
        questions.push(q.to_string());
        calls += 1;
        let AgentReply { answer, facts: f } = agents.ask(&step.agent, q)?;
        facts.extend(f);
        Ok(answer)
    };
    let result = apply_operator(&step.operator, &mut ask, answers, &step.question);
    match result {
        Ok(answer) => Ok(StepTrace {
            index: step.index,
            agent: step.agent.clone(),
            operator: step.operator.to_string(),
            questions,
            answer,
            facts: facts.into_iter().collect(),
            calls,
        }),
        Err(f) => Err(StepFailure {
            calls,
            questions,
            reason: match f {
                OpFailure::Shape(e) => FailureReason::Shape {
                    message: e.to_string(),
                },
                OpFailure::Agent {
                    error: Refusal::BudgetExhausted,
                    ..
                } => FailureReason::BudgetExhausted,
                OpFailure::Agent { question, error } => FailureReason::Refused {
                    question,
                    refusal: error.to_string(),
                },
            },
        }),
    }
}

/// Run a program in order, failing fast at the first step that fails.
/// `grounding` fills any `$j` still present.
pub fn execute(program: &DecompProgram, agents: &dyn Answerer, grounding: &Grounding) -> ExecutionTrace {
    let mut answers = BTreeMap::new();
    let mut steps = Vec::with_capacity(program.len());
    let mut calls = 0;
    for step in &program.steps {
        let grounded = match crate::dsl::substitute_slots(&step.question, grounding) {
            Ok(q) => DecompStep {
                question: q,
                ..step.clone()
            },
            Err(e) => {
                return failed(steps, calls, step.index, FailureReason::Shape {
                    message: e.to_string(),
                })
            }
        };
        match execute_step(&grounded, agents, &answers) {
            Ok(t) => {
                calls += t.calls;
                answers.insert(step.index, t.answer.clone());
                steps.push(t);
            }
            Err(f) => return failed(steps, calls + f.calls, step.index, f.reason),
        }
    }
    ExecutionTrace {
        final_answer: steps.last().map(|s| s.answer.clone()),
        steps,
        status: TraceStatus::Success,
        calls,
    }
}

fn failed(steps: Vec<StepTrace>, calls: usize, step: usize, reason: FailureReason) -> ExecutionTrace {
    ExecutionTrace {
        steps,
        final_answer: None,
        status: TraceStatus::Failed { step, reason },
        calls,
    }
}

/// Flatten a final answer into the multiset-of-strings form used for
/// scoring and dataset files.
pub fn finalize_answer(a: &Answer) -> Result<Vec<String>, ShapeError> {
    match a {
        Answer::List(items) => {
            let mut out = Vec::new();
            for i in items {
                out.extend(finalize_answer(i)?);
            }
            Ok(out)
        }
        Answer::Map(_) => Err(ShapeError::Mismatch {
            op: "finalize".into(),
            expected: "scalar or list",
            found: "map",
        }),
        scalar => Ok(vec![scalar.scalar_text().expect("scalar")]),
    }
}

/// Wraps an [`Answerer`] and counts calls; safe to share across threads.
pub struct CountingAnswerer<'a> {
    pub inner: &'a dyn Answerer,
    count: AtomicU64,
}

impl<'a> CountingAnswerer<'a> {
    pub fn new(inner: &'a dyn Answerer) -> Self {
        Self {
            inner,
            count: AtomicU64::new(0),
        }
    }

    pub fn calls(&self) -> u64 {
        self.count.load(Ordering::Relaxed)
    }
}

impl Answerer for CountingAnswerer<'_> {
    fn ask(&self, agent: &str, question: &str) -> Result<AgentReply, Refusal> {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.ask(agent, question)
    }
}

/// Wraps an [`Answerer`] with a hard cap on calls. Once the cap is reached
/// every further call is refused with [`Refusal::BudgetExhausted`].
pub struct BudgetedAnswerer<'a> {
    inner: &'a dyn Answerer,
    budget: u64,
    used: AtomicU64,
}

impl<'a> BudgetedAnswerer<'a> {
    pub fn new(inner: &'a dyn Answerer, budget: u64) -> Self {
        Self {
            inner,
            budget,
            used: AtomicU64::new(0),
        }
    }

    pub fn used(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    pub fn exhausted(&self) -> bool {
        self.used() >= self.budget
    }
}

impl Answerer for BudgetedAnswerer<'_> {
    fn ask(&self, agent: &str, question: &str) -> Result<AgentReply, Refusal> {
        let prev = self
            .used
            .fetch_update(Ordering::Relaxed, Ordering::Relaxed, |u| (u < self.budget).then_some(u + 1));
        match prev {
            Ok(_) => self.inner.ask(agent, question),
            Err(_) => Err(Refusal::BudgetExhausted),
        }
    }
}
