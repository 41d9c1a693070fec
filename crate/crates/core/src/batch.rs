//! Running programs over dataset files.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::DatasetRecipe;
use crate::dsl::parse_program_for;
use crate::error::Error;
use crate::eval::Prediction;
use crate::executor::{execute, finalize_answer, Grounding, TraceStatus};
use crate::generator::ExampleRecord;

/// A program for one qid: either `program` or the first of `chains`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ProgramRecord {
    pub qid: String,
    #[serde(default)]
    pub program: Option<String>,
    #[serde(default)]
    pub chains: Vec<String>,
}

impl ProgramRecord {
    pub fn source(&self) -> Option<&str> {
        self.program.as_deref().or(self.chains.first().map(String::as_str))
    }
}

/// Programs keyed by qid, plus lines that could not be read.
#[derive(Debug, Clone, Default)]
pub struct ProgramFile {
    pub programs: HashMap<String, String>,
    /// qid (if recoverable) or `line N`, with the reason.
    pub malformed: Vec<(String, String)>,
}

/// Read a programs file leniently: bad lines are recorded, not fatal.
pub fn read_programs(r: impl BufRead) -> Result<ProgramFile, Error> {
    let mut out = ProgramFile::default();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        match serde_json::from_str::<ProgramRecord>(&line) {
            // A record without a program leaves its qid unanswered.
            Ok(p) => {
                if let Some(src) = p.source() {
                    out.programs.insert(p.qid.clone(), src.to_string());
                }
            }
            Err(e) => {
                let qid = serde_json::from_str::<serde_json::Value>(&line)
                    .ok()
                    .and_then(|v| v.get("qid").and_then(|q| q.as_str()).map(String::from))
                    .unwrap_or_else(|| format!("line {}", i + 1));
                out.malformed.push((qid, e.to_string()));
            }
        }
    }
    Ok(out)
}

pub fn read_programs_file(path: impl AsRef<Path>) -> Result<ProgramFile, Error> {
    read_programs(std::io::BufReader::new(std::fs::File::open(path)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Answered,
    Failed,
    Unanswered,
}

/// What happened to one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub qid: String,
    pub theory_id: String,
    pub status: Status,
    pub spans: Vec<String>,
    pub calls: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Outcome {
    pub fn prediction(&self) -> Option<Prediction> {
        (self.status == Status::Answered).then(|| Prediction {
            qid: self.qid.clone(),
            spans: self.spans.clone(),
        })
    }
}

fn grounding_of(r: &ExampleRecord) -> Grounding {
    r.grounding
        .iter()
        .filter_map(|(k, v)| Some((k.strip_prefix('$')?.parse().ok()?, v.clone())))
        .collect()
}

fn run_one(recipe: &DatasetRecipe, r: &ExampleRecord, source: Option<&str>, bad: Option<&str>) -> Outcome {
    let mut out = Outcome {
        qid: r.qid.clone(),
        theory_id: r.theory_id.clone(),
        status: Status::Failed,
        spans: Vec::new(),
        calls: 0,
        error: None,
    };
    let source = match (source, bad) {
        (_, Some(e)) => {
            out.error = Some(e.to_string());
            return out;
        }
        (None, None) => {
            out.status = Status::Unanswered;
            return out;
        }
        (Some(s), None) => s,
    };
    let program = match parse_program_for(source, &recipe.registry) {
        Ok(p) => p,
        Err(e) => {
            out.error = Some(e.to_string());
            return out;
        }
    };
    let world = r.world();
    let trace = execute(&program, &recipe.registry.bind(&world), &grounding_of(r));
    out.calls = trace.calls;
    match (&trace.status, &trace.final_answer) {
        (TraceStatus::Success, Some(a)) => match finalize_answer(a) {
            Ok(spans) => {
                out.status = Status::Answered;
                out.spans = spans;
            }
            Err(e) => out.error = Some(e.to_string()),
        },
        (TraceStatus::Failed { step, reason }, _) => {
            out.error = Some(format!("step {step}: {}", serde_json::to_string(reason).unwrap_or_default()));
        }
        _ => out.error = Some("no final answer".into()),
    }
    out
}

/// Replay each record's gold decomposition.
pub fn replay_gold(recipe: &DatasetRecipe, records: &[ExampleRecord]) -> Vec<Outcome> {
    records
        .par_iter()
        .map(|r| run_one(recipe, r, Some(&r.gold_decomposition), None))
        .collect()
}

/// Run user programs; records without a program are unanswered.
pub fn run_programs(recipe: &DatasetRecipe, records: &[ExampleRecord], programs: &ProgramFile) -> Vec<Outcome> {
    let bad: HashMap<&str, &str> = programs
        .malformed
        .iter()
        .map(|(q, e)| (q.as_str(), e.as_str()))
        .collect();
    records
        .par_iter()
        .map(|r| {
            run_one(
                recipe,
                r,
                programs.programs.get(&r.qid).map(String::as_str),
                bad.get(r.qid.as_str()).copied(),
            )
        })
        .collect()
}

/// Counts of answered, failed and unanswered questions.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunSummary {
    pub questions: usize,
    pub answered: usize,
    pub failed: usize,
    pub unanswered: usize,
    pub calls: usize,
}

pub fn summarize(outcomes: &[Outcome]) -> RunSummary {
    let mut s = RunSummary {
        questions: outcomes.len(),
        ..Default::default()
    };
    for o in outcomes {
        s.calls += o.calls;
        match o.status {
            Status::Answered => s.answered += 1,
            Status::Failed => s.failed += 1,
            Status::Unanswered => s.unanswered += 1,
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lenient_reader_keeps_going() {
        let text = "{\"qid\":\"a\",\"program\":\"x\"}\nnot json\n{\"qid\":\"b\",\"program\":3}\n{\"qid\":\"c\",\"chains\":[\"y\",\"z\"]}\n{\"qid\":\"d\",\"chains\":[]}\n";
        let f = read_programs(text.as_bytes()).unwrap();
        assert_eq!(f.programs.len(), 2);
        assert_eq!(f.programs["c"], "y");
        assert_eq!(f.malformed.len(), 2);
        assert_eq!(f.malformed[0].0, "line 2");
        assert_eq!(f.malformed[1].0, "b");
    }
}
