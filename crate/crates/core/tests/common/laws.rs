//! Algebraic laws of the decomposition language, shared by the property
//! suite and the acceptance report.

#![allow(dead_code)]

use std::collections::{BTreeMap, HashMap};

use agentqa::dsl::{apply_operator, apply_transform, parse_program, BaseOp, DecompProgram, DecompStep, OperatorName, Transform, COMBINED_OPERATORS};
use agentqa::Answer;
use indexmap::IndexMap;
use proptest::prelude::*;
use proptest::test_runner::TestCaseError;

pub fn word() -> impl Strategy<Value = String> {
    prop::sample::select(vec!["ab", "cd", "ef", "gh", "ij", "kl"]).prop_map(String::from)
}

pub fn text_list() -> impl Strategy<Value = Vec<Answer>> {
    prop::collection::vec(word().prop_map(Answer::Text), 0..8)
}

pub fn nested_list() -> impl Strategy<Value = Vec<Answer>> {
    prop::collection::vec(
        prop_oneof![
            word().prop_map(Answer::Text),
            text_list().prop_map(Answer::List),
        ],
        0..6,
    )
}

pub fn text_map() -> impl Strategy<Value = IndexMap<String, Answer>> {
    prop::collection::vec((word(), text_list()), 0..6)
        .prop_map(|kv| kv.into_iter().map(|(k, v)| (k, Answer::List(v))).collect())
}

/// Deterministic agent: a table from item to answer, plus a predicate.
#[derive(Debug, Clone)]
pub struct Table {
    pub values: HashMap<String, Vec<String>>,
    pub truth: HashMap<String, bool>,
}

pub fn table() -> impl Strategy<Value = Table> {
    let keys = ["ab", "cd", "ef", "gh", "ij", "kl"];
    (
        prop::collection::vec(prop::collection::vec(word(), 0..4), 6),
        prop::collection::vec(any::<bool>(), 6),
    )
        .prop_map(move |(vs, bs)| Table {
            values: keys.iter().map(|k| k.to_string()).zip(vs).collect(),
            truth: keys.iter().map(|k| k.to_string()).zip(bs).collect(),
        })
}

impl Table {
    /// `"rel X"` → list, `"is X"` → bool.
    pub fn ask(&self, q: &str) -> Result<Answer, String> {
        if let Some(x) = q.strip_prefix("rel ") {
            return Ok(Answer::texts(self.values[x].iter()));
        }
        if let Some(x) = q.strip_prefix("is ") {
            return Ok(Answer::Bool(self.truth[x]));
        }
        Err(q.to_string())
    }
}

fn texts(a: &Answer) -> Vec<String> {
    a.as_list().unwrap().iter().map(|x| x.scalar_text().unwrap()).collect()
}

fn run(op: OperatorName, t: &Table, input: Answer, q: &str) -> Answer {
    let inputs: BTreeMap<usize, Answer> = [(1, input)].into_iter().collect();
    apply_operator(&op, &mut |q: &str| t.ask(q), &inputs, q).unwrap()
}

pub fn flat_law(items: Vec<Answer>) -> Result<(), TestCaseError> {
    let expected: usize = items
        .iter()
        .map(|a| match a {
            Answer::List(v) => v.len(),
            _ => 1,
        })
        .sum();
    let once = apply_transform(Transform::Flat, Answer::List(items)).unwrap();
    prop_assert_eq!(once.as_list().unwrap().len(), expected);
    let twice = apply_transform(Transform::Flat, once.clone()).unwrap();
    prop_assert_eq!(twice, once);
    Ok(())
}

pub fn unique_law(items: Vec<Answer>) -> Result<(), TestCaseError> {
    let u = apply_transform(Transform::Unique, Answer::List(items.clone())).unwrap();
    let got = u.as_list().unwrap().to_vec();
    let mut oracle: Vec<Answer> = Vec::new();
    for a in &items {
        if !oracle.contains(a) {
            oracle.push(a.clone());
        }
    }
    prop_assert_eq!(&got, &oracle);
    prop_assert_eq!(apply_transform(Transform::Unique, u.clone()).unwrap(), u);
    Ok(())
}

pub fn keys_values_law(m: IndexMap<String, Answer>) -> Result<(), TestCaseError> {
    let keys = apply_transform(Transform::Keys, Answer::Map(m.clone())).unwrap();
    let values = apply_transform(Transform::Values, Answer::Map(m.clone())).unwrap();
    prop_assert_eq!(texts(&keys), m.keys().cloned().collect::<Vec<_>>());
    prop_assert_eq!(values.as_list().unwrap().to_vec(), m.values().cloned().collect::<Vec<_>>());
    prop_assert!(apply_transform(Transform::Keys, Answer::List(vec![])).is_err());
    Ok(())
}

pub fn project_law(items: Vec<Answer>, t: Table) -> Result<(), TestCaseError> {
    let got = run(OperatorName::new(BaseOp::Project, None, &[]), &t, Answer::List(items.clone()), "rel #1");
    let mut oracle: IndexMap<String, Answer> = IndexMap::new();
    for it in &items {
        let k = it.scalar_text().unwrap();
        if !oracle.contains_key(&k) {
            oracle.insert(k.clone(), Answer::texts(t.values[&k].iter()));
        }
    }
    prop_assert_eq!(got, Answer::Map(oracle));
    Ok(())
}

pub fn filter_law(items: Vec<Answer>, t: Table) -> Result<(), TestCaseError> {
    let got = run(OperatorName::new(BaseOp::Filter, None, &[]), &t, Answer::List(items.clone()), "is #1");
    let mut oracle = Vec::new();
    for it in &items {
        if t.truth[&it.scalar_text().unwrap()] {
            oracle.push(it.clone());
        }
    }
    prop_assert_eq!(got, Answer::List(oracle));
    Ok(())
}

/// The combined operator equals its base followed by its transforms.
pub fn composition_law(items: Vec<Answer>, t: Table) -> Result<(), TestCaseError> {
    use Transform::*;
    let base = run(OperatorName::new(BaseOp::Project, None, &[]), &t, Answer::List(items.clone()), "rel #1");
    for chain in [&[Values, Flat][..], &[Values, Flat, Unique], &[Keys], &[Values, Unique]] {
        let combined = run(OperatorName::new(BaseOp::Project, None, chain), &t, Answer::List(items.clone()), "rel #1");
        let mut stepwise = base.clone();
        for tr in chain {
            stepwise = apply_transform(*tr, stepwise).unwrap();
        }
        prop_assert_eq!(combined, stepwise);
    }
    let pvfu = run(OperatorName::new(BaseOp::Project, None, &[Values, Flat, Unique]), &t, Answer::List(items.clone()), "rel #1");
    let mut oracle: Vec<String> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for it in &items {
        let k = it.scalar_text().unwrap();
        if !seen.insert(k.clone()) {
            continue;
        }
        for v in &t.values[&k] {
            if !oracle.contains(v) {
                oracle.push(v.clone());
            }
        }
    }
    prop_assert_eq!(texts(&pvfu), oracle);
    Ok(())
}

pub fn filter_values_keys_law(m: IndexMap<String, Answer>, t: Table) -> Result<(), TestCaseError> {
    let got = run(OperatorName::new(BaseOp::FilterValues, None, &[Transform::Keys]), &t, Answer::Map(m.clone()), "is #1");
    let mut oracle = Vec::new();
    for (k, v) in &m {
        if v.as_list().unwrap().iter().any(|x| t.truth[&x.scalar_text().unwrap()]) {
            oracle.push(k.clone());
        }
    }
    prop_assert_eq!(texts(&got), oracle);
    Ok(())
}

fn question(words: &[String], refs: &[usize]) -> String {
    let mut q: Vec<String> = words.to_vec();
    for r in refs {
        q.push(format!("#{r}"));
    }
    q.join(" ")
}

/// Random well-formed programs of 1 to 6 steps.
pub fn program() -> impl Strategy<Value = DecompProgram> {
    let qword = prop::sample::select(vec!["who", "is", "$1", "$2", "x\"y", "a\\b", "(p)", "[q]", "ünï"]).prop_map(String::from);
    let step = (
        prop::collection::vec(qword, 1..5),
        prop::sample::select((0..COMBINED_OPERATORS.len()).collect::<Vec<_>>()),
        any::<prop::sample::Index>(),
        any::<prop::sample::Index>(),
        any::<bool>(),
        prop::sample::select(vec!["textqa", "kb qa", "m-1"]),
    );
    prop::collection::vec(step, 1..7).prop_map(|steps| {
        let steps = steps
            .into_iter()
            .enumerate()
            .map(|(i, (words, op, a, b, named, agent))| {
                let index = i + 1;
                let (base, transforms) = COMBINED_OPERATORS[op];
                let (base, transforms) = if index == 1 { (BaseOp::Select, &[][..]) } else { (base, transforms) };
                let mut refs = Vec::new();
                let mut param = None;
                if index > 1 {
                    let j = a.index(index - 1) + 1;
                    refs.push(j);
                    if base.iterates() && named {
                        param = Some(j);
                        refs.push(b.index(index - 1) + 1);
                    }
                }
                DecompStep {
                    index,
                    operator: OperatorName::new(base, param, transforms),
                    agent: agent.to_string(),
                    question: question(&words, &refs),
                }
            })
            .collect();
        DecompProgram { steps }
    })
}

pub fn round_trip_law(p: DecompProgram) -> Result<(), TestCaseError> {
    let text = p.render();
    let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
    prop_assert_eq!(back.render(), text);
    prop_assert_eq!(back, p);
    Ok(())
}

pub fn spans() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(
        prop::collection::vec(prop::sample::select(vec!["the", "ab", "cd", "ef", "Ab", "a"]), 1..3).prop_map(|w| w.join(" ")),
        0..5,
    )
}

/// Best total weight over all permutations, by enumeration.
fn brute_force(w: &[Vec<f64>]) -> f64 {
    fn go(w: &[Vec<f64>], row: usize, used: &mut Vec<bool>) -> f64 {
        if row == w.len() {
            return 0.0;
        }
        let mut best = f64::MIN;
        for j in 0..w.len() {
            if !used[j] {
                used[j] = true;
                best = best.max(w[row][j] + go(w, row + 1, used));
                used[j] = false;
            }
        }
        best
    }
    go(w, 0, &mut vec![false; w.len()])
}

pub fn square() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..6).prop_flat_map(|n| prop::collection::vec(prop::collection::vec(0.0f64..1.0, n), n))
}

pub fn assignment_law(w: Vec<Vec<f64>>) -> Result<(), TestCaseError> {
    let a = agentqa::eval::max_weight_assignment(&w);
    let mut cols = a.clone();
    cols.sort_unstable();
    prop_assert_eq!(cols, (0..w.len()).collect::<Vec<_>>());
    let total: f64 = a.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
    prop_assert!((total - brute_force(&w)).abs() < 1e-9);
    Ok(())
}

pub fn metric_law(pred: Vec<String>, gold: Vec<String>, rot: usize) -> Result<(), TestCaseError> {
    use agentqa::eval::{exact_match, multi_span_f1};
    let f1 = multi_span_f1(&pred, &gold);
    prop_assert!((0.0..=1.0).contains(&f1));
    let mut shuffled = pred.clone();
    if !shuffled.is_empty() {
        let k = rot % shuffled.len();
        shuffled.rotate_left(k);
    }
    prop_assert_eq!(exact_match(&shuffled, &gold), exact_match(&pred, &gold));
    prop_assert!((multi_span_f1(&shuffled, &gold) - f1).abs() < 1e-9);
    prop_assert_eq!(exact_match(&gold, &gold), 1.0);
    prop_assert!((multi_span_f1(&gold, &gold) - 1.0).abs() < 1e-9);
    if exact_match(&pred, &gold) == 1.0 {
        prop_assert!((f1 - 1.0).abs() < 1e-9);
    }
    Ok(())
}
