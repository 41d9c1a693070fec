//! The decomposition language.
//!
//! A program is a sequence of lines
//!
//! ```text
//! #1 = (select) [textqa] "Who is from the country $1?"
//! #2 = (project_values_flat_unique) [tableqa] "Which movies has #1 directed?"
//! ```
//!
//! where `$j` is a grounding slot filled before execution and `#j` refers to
//! the answer of an earlier step. The operator is a base operation, an
//! optional `(#j)` naming the answer to iterate over, and a chain of
//! transformations applied left to right.

mod ops;
mod parse;

use std::collections::BTreeSet;
use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

pub use ops::{apply_operator, apply_transform, substitute_refs, OpFailure};
pub use parse::{parse_operator, parse_program, parse_program_for, ParseError, ParseErrorKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BaseOp {
    Select,
    Project,
    ProjectValues,
    Filter,
    FilterValues,
}

impl BaseOp {
    pub fn name(self) -> &'static str {
        match self {
            BaseOp::Select => "select",
            BaseOp::Project => "project",
            BaseOp::ProjectValues => "projectValues",
            BaseOp::Filter => "filter",
            BaseOp::FilterValues => "filterValues",
        }
    }

    pub fn iterates(self) -> bool {
        self != BaseOp::Select
    }

    /// Whether the iterated answer must be a map (otherwise a list).
    pub fn over_map(self) -> bool {
        matches!(self, BaseOp::ProjectValues | BaseOp::FilterValues)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Transform {
    Flat,
    Unique,
    Keys,
    Values,
}

impl Transform {
    pub fn name(self) -> &'static str {
        match self {
            Transform::Flat => "flat",
            Transform::Unique => "unique",
            Transform::Keys => "keys",
            Transform::Values => "values",
        }
    }
}

/// The shipped combined operators (base plus transform chain).
pub const COMBINED_OPERATORS: &[(BaseOp, &[Transform])] = {
    use BaseOp::*;
    use Transform::*;
    &[
        (Select, &[]),
        (Select, &[Flat]),
        (Select, &[Unique]),
        (Select, &[Keys]),
        (Select, &[Values]),
        (Filter, &[]),
        (Filter, &[Unique]),
        (FilterValues, &[]),
        (FilterValues, &[Keys]),
        (FilterValues, &[Values]),
        (Project, &[]),
        (Project, &[Keys]),
        (Project, &[Values]),
        (Project, &[Values, Flat]),
        (Project, &[Values, Flat, Unique]),
        (Project, &[Values, Unique]),
        (ProjectValues, &[]),
        (ProjectValues, &[Flat]),
        (ProjectValues, &[Flat, Unique]),
        (ProjectValues, &[Values, Flat, Unique]),
    ]
};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct OperatorName {
    pub base: BaseOp,
    pub param: Option<usize>,
    pub transforms: Vec<Transform>,
}

impl OperatorName {
    pub fn new(base: BaseOp, param: Option<usize>, transforms: &[Transform]) -> Self {
        Self {
            base,
            param,
            transforms: transforms.to_vec(),
        }
    }

    pub fn select() -> Self {
        Self::new(BaseOp::Select, None, &[])
    }

    pub fn is_shipped(&self) -> bool {
        COMBINED_OPERATORS
            .iter()
            .any(|(b, t)| *b == self.base && *t == self.transforms.as_slice())
    }
}

impl fmt::Display for OperatorName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.base.name())?;
        if let Some(j) = self.param {
            write!(f, "(#{j})")?;
        }
        for t in &self.transforms {
            write!(f, "_{}", t.name())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecompStep {
    pub index: usize,
    pub operator: OperatorName,
    pub agent: String,
    pub question: String,
}

fn ref_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"#(\d+)").expect("regex"))
}

fn slot_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\$(\d+)").expect("regex"))
}

/// Answer indices referenced by a question, in ascending order.
pub fn answer_refs(question: &str) -> BTreeSet<usize> {
    ref_re()
        .captures_iter(question)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

/// Grounding slots referenced by a question.
pub fn grounding_slots(question: &str) -> BTreeSet<usize> {
    slot_re()
        .captures_iter(question)
        .filter_map(|c| c[1].parse().ok())
        .collect()
}

/// Replace `$j` slots with values; unbound slots are left in place and
/// reported.
pub fn substitute_slots(
    question: &str,
    grounding: &std::collections::BTreeMap<usize, String>,
) -> Result<String, crate::error::ShapeError> {
    let mut missing = None;
    let out = slot_re().replace_all(question, |c: &regex::Captures| {
        let j: usize = c[1].parse().unwrap_or(0);
        match grounding.get(&j) {
            Some(v) => v.clone(),
            None => {
                missing.get_or_insert(j);
                c[0].to_string()
            }
        }
    });
    match missing {
        Some(j) => Err(crate::error::ShapeError::UnboundSlot(j)),
        None => Ok(out.into_owned()),
    }
}

/// Question with `#j` written as `#` and `$j` as `$`: the step's template
/// independent of numbering.
pub fn normalized_template(question: &str) -> String {
    let q = ref_re().replace_all(question, "#");
    slot_re().replace_all(&q, "$").into_owned()
}

impl DecompStep {
    /// The answer index the operator iterates over, if any.
    pub fn iterated_ref(&self) -> Option<usize> {
        if !self.operator.base.iterates() {
            return None;
        }
        self.operator.param.or_else(|| {
            let refs = answer_refs(&self.question);
            (refs.len() == 1).then(|| *refs.iter().next().expect("one ref"))
        })
    }

    /// Key used to compare steps across theories, ignoring numbering and
    /// agent choice.
    pub fn template_key(&self) -> String {
        let mut op = self.operator.clone();
        op.param = None;
        format!("{op} {}", normalized_template(&self.question).to_lowercase())
    }
}

impl fmt::Display for DecompStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let q = self.question.replace('\\', "\\\\").replace('"', "\\\"");
        write!(f, "#{} = ({}) [{}] \"{}\"", self.index, self.operator, self.agent, q)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DecompProgram {
    pub steps: Vec<DecompStep>,
}

impl DecompProgram {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Canonical text: one step per line.
    pub fn render(&self) -> String {
        self.steps
            .iter()
            .map(ToString::to_string)
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn grounding_slots(&self) -> BTreeSet<usize> {
        self.steps
            .iter()
            .flat_map(|s| grounding_slots(&s.question))
            .collect()
    }

    /// Substitute every `$j`.
    pub fn ground(
        &self,
        grounding: &std::collections::BTreeMap<usize, String>,
    ) -> Result<DecompProgram, crate::error::ShapeError> {
        let steps = self
            .steps
            .iter()
            .map(|s| {
                Ok(DecompStep {
                    question: substitute_slots(&s.question, grounding)?,
                    ..s.clone()
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(DecompProgram { steps })
    }
}

impl fmt::Display for DecompProgram {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.render())
    }
}
