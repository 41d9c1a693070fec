//! Structured agent answers.

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::ShapeError;

/// An agent's answer: a scalar, a list (multiset), or an ordered map keyed by
/// the rendered text of the item that produced each entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum Answer {
    Text(String),
    Number(f64),
    Bool(bool),
    List(Vec<Answer>),
    Map(IndexMap<String, Answer>),
}

pub fn format_number(n: f64) -> String {
    if n.fract() == 0.0 && n.abs() < 1e15 {
        format!("{}", n as i64)
    } else {
        format!("{n}")
    }
}

impl Answer {
    pub fn text(s: impl Into<String>) -> Self {
        Answer::Text(s.into())
    }

    pub fn texts<I, S>(items: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Answer::List(items.into_iter().map(|s| Answer::Text(s.into())).collect())
    }

    pub fn shape(&self) -> &'static str {
        match self {
            Answer::Text(_) => "text",
            Answer::Number(_) => "number",
            Answer::Bool(_) => "bool",
            Answer::List(_) => "list",
            Answer::Map(_) => "map",
        }
    }

    pub fn is_scalar(&self) -> bool {
        matches!(self, Answer::Text(_) | Answer::Number(_) | Answer::Bool(_))
    }

    /// Text of a scalar answer; booleans render as yes/no.
    pub fn scalar_text(&self) -> Option<String> {
        match self {
            Answer::Text(s) => Some(s.clone()),
            Answer::Number(n) => Some(format_number(*n)),
            Answer::Bool(b) => Some(if *b { "yes" } else { "no" }.to_string()),
            _ => None,
        }
    }

    /// Text substituted for a whole (non-iterated) answer reference inside a
    /// question. Scalars render verbatim, a flat list renders as `[a, b]`.
    /// Maps and nested lists cannot be spliced into a question.
    pub fn render_in_question(&self) -> Result<String, ShapeError> {
        if let Some(s) = self.scalar_text() {
            return Ok(s);
        }
        match self {
            Answer::List(items) => {
                let parts = items
                    .iter()
                    .map(|a| {
                        a.scalar_text().ok_or(ShapeError::Mismatch {
                            op: "render".into(),
                            expected: "list of scalars",
                            found: "nested list",
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(format!("[{}]", parts.join(", ")))
            }
            other => Err(ShapeError::Mismatch {
                op: "render".into(),
                expected: "scalar or list",
                found: other.shape(),
            }),
        }
    }

    /// Truth value used by `filter`: `Bool(true)` or a yes/true text.
    pub fn is_true(&self) -> bool {
        match self {
            Answer::Bool(b) => *b,
            Answer::Text(s) => matches!(s.trim().to_lowercase().as_str(), "yes" | "true"),
            _ => false,
        }
    }

    pub fn as_list(&self) -> Option<&[Answer]> {
        match self {
            Answer::List(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&IndexMap<String, Answer>> {
        match self {
            Answer::Map(m) => Some(m),
            _ => None,
        }
    }
}
