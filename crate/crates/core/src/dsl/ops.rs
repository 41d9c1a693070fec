use std::collections::BTreeMap;

use indexmap::IndexMap;

use super::{ref_re, BaseOp, OperatorName, Transform};
use crate::answer::Answer;
use crate::error::ShapeError;

/// Why an operator could not produce an answer.
#[derive(Debug, Clone, PartialEq)]
pub enum OpFailure<E> {
    Shape(ShapeError),
    /// An expanded agent call failed.
    Agent { question: String, error: E },
}

impl<E> From<ShapeError> for OpFailure<E> {
    fn from(e: ShapeError) -> Self {
        OpFailure::Shape(e)
    }
}

fn mismatch(op: &str, expected: &'static str, found: &Answer) -> ShapeError {
    ShapeError::Mismatch {
        op: op.into(),
        expected,
        found: found.shape(),
    }
}

fn unique(items: Vec<Answer>) -> Vec<Answer> {
    let mut out: Vec<Answer> = Vec::with_capacity(items.len());
    for a in items {
        if !out.contains(&a) {
            out.push(a);
        }
    }
    out
}

fn flat(items: Vec<Answer>) -> Vec<Answer> {
    let mut out = Vec::new();
    for a in items {
        match a {
            Answer::List(inner) => out.extend(inner),
            other => out.push(other),
        }
    }
    out
}

/// Apply one transformation. `flat` and `unique` on a map act on each value
/// and keep the map.
pub fn apply_transform(t: Transform, a: Answer) -> Result<Answer, ShapeError> {
    match (t, a) {
        (Transform::Flat, Answer::List(items)) => Ok(Answer::List(flat(items))),
        (Transform::Unique, Answer::List(items)) => Ok(Answer::List(unique(items))),
        (Transform::Flat | Transform::Unique, Answer::Map(m)) => Ok(Answer::Map(
            m.into_iter()
                .map(|(k, v)| match v {
                    Answer::List(_) => apply_transform(t, v).map(|v| (k, v)),
                    scalar => Ok((k, scalar)),
                })
                .collect::<Result<_, _>>()?,
        )),
        (Transform::Keys, Answer::Map(m)) => Ok(Answer::List(m.into_keys().map(Answer::Text).collect())),
        (Transform::Values, Answer::Map(m)) => Ok(Answer::List(m.into_values().collect())),
        (t, other) => Err(mismatch(
            t.name(),
            match t {
                Transform::Flat | Transform::Unique => "list or map",
                _ => "map",
            },
            &other,
        )),
    }
}

/// Substitute every `#j` in `question`: the iterated reference (if any) by
/// `item`, all others by their full rendered answer.
pub fn substitute_refs(
    question: &str,
    inputs: &BTreeMap<usize, Answer>,
    iterated: Option<(usize, &str)>,
) -> Result<String, ShapeError> {
    let mut err = None;
    let out = ref_re().replace_all(question, |c: &regex::Captures| {
        let j: usize = c[1].parse().unwrap_or(0);
        if let Some((it, item)) = iterated {
            if it == j {
                return item.to_string();
            }
        }
        match inputs.get(&j).map(Answer::render_in_question) {
            Some(Ok(s)) => s,
            Some(Err(e)) => {
                err.get_or_insert(e);
                String::new()
            }
            None => {
                err.get_or_insert(ShapeError::MissingRef(j));
                String::new()
            }
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(out.into_owned()),
    }
}

fn item_text(item: &Answer) -> Result<String, ShapeError> {
    item.scalar_text().ok_or_else(|| mismatch("iterate", "scalar items", item))
}

fn as_items(v: &Answer) -> Vec<Answer> {
    match v {
        Answer::List(items) => items.clone(),
        scalar => vec![scalar.clone()],
    }
}

/// Execute an operator: expand `question` over the referenced answer, call
/// `ask` for every expanded question, assemble the structured result and
/// apply the transform chain.
pub fn apply_operator<E>(
    op: &OperatorName,
    ask: &mut dyn FnMut(&str) -> Result<Answer, E>,
    inputs: &BTreeMap<usize, Answer>,
    question: &str,
) -> Result<Answer, OpFailure<E>> {
    let mut call = |q: String| -> Result<Answer, OpFailure<E>> {
        ask(&q).map_err(|error| OpFailure::Agent { question: q, error })
    };
    let refs = super::answer_refs(question);
    let target = if op.base.iterates() {
        match op.param {
            Some(j) => Some(j),
            None if refs.len() == 1 => refs.iter().next().copied(),
            None if refs.is_empty() => return Err(ShapeError::NothingToIterate(question.into()).into()),
            None => return Err(ShapeError::AmbiguousIteration(question.into()).into()),
        }
    } else {
        None
    };
    let mut result = match (op.base, target) {
        (BaseOp::Select, _) | (_, None) => call(substitute_refs(question, inputs, None)?)?,
        (base, Some(j)) => {
            let source = inputs.get(&j).ok_or(ShapeError::MissingRef(j))?;
            match base {
                BaseOp::Project => {
                    let items = source
                        .as_list()
                        .ok_or_else(|| mismatch(&op.to_string(), "list", source))?;
                    let mut out = IndexMap::new();
                    for item in items {
                        let key = item_text(item)?;
                        if out.contains_key(&key) {
                            continue;
                        }
                        let a = call(substitute_refs(question, inputs, Some((j, &key)))?)?;
                        out.insert(key, a);
                    }
                    Answer::Map(out)
                }
                BaseOp::Filter => {
                    let items = source
                        .as_list()
                        .ok_or_else(|| mismatch(&op.to_string(), "list", source))?;
                    let mut out = Vec::new();
                    for item in items {
                        let text = item_text(item)?;
                        if call(substitute_refs(question, inputs, Some((j, &text)))?)?.is_true() {
                            out.push(item.clone());
                        }
                    }
                    Answer::List(out)
                }
                BaseOp::ProjectValues | BaseOp::FilterValues => {
                    let map = source
                        .as_map()
                        .ok_or_else(|| mismatch(&op.to_string(), "map", source))?;
                    let drop_empty = base == BaseOp::FilterValues
                        && op.transforms.first() == Some(&Transform::Keys);
                    let mut out = IndexMap::new();
                    for (k, v) in map {
                        let mut vals = Vec::new();
                        for item in as_items(v) {
                            let text = item_text(&item)?;
                            let a = call(substitute_refs(question, inputs, Some((j, &text)))?)?;
                            if base == BaseOp::ProjectValues {
                                vals.push(a);
                            } else if a.is_true() {
                                vals.push(item);
                            }
                        }
                        if !(drop_empty && vals.is_empty()) {
                            out.insert(k.clone(), Answer::List(vals));
                        }
                    }
                    Answer::Map(out)
                }
                BaseOp::Select => unreachable!(),
            }
        }
    };
    for t in &op.transforms {
        result = apply_transform(*t, result)?;
    }
    Ok(result)
}
