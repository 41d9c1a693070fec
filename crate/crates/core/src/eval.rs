//! Exact match and multi-span F1.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

/// Lowercase, strip punctuation at the span edges and collapse whitespace.
pub fn normalize_span(s: &str) -> String {
    s.to_lowercase()
        .trim_matches(|c: char| c.is_ascii_punctuation() || c.is_whitespace())
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

fn normalized_sorted(spans: &[String]) -> Vec<String> {
    let mut v: Vec<String> = spans.iter().map(|s| normalize_span(s)).collect();
    v.sort();
    v
}

/// 1.0 iff the normalized spans are equal as multisets.
pub fn exact_match(pred: &[String], gold: &[String]) -> f64 {
    if normalized_sorted(pred) == normalized_sorted(gold) {
        1.0
    } else {
        0.0
    }
}

/// Bag-of-tokens F1 between two single spans.
pub fn token_f1(pred: &str, gold: &str) -> f64 {
    let p = normalize_span(pred);
    let g = normalize_span(gold);
    let pt: Vec<&str> = p.split_whitespace().collect();
    let gt: Vec<&str> = g.split_whitespace().collect();
    if pt.is_empty() || gt.is_empty() {
        return if pt.is_empty() && gt.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, i64> = HashMap::new();
    for t in &gt {
        *counts.entry(t).or_default() += 1;
    }
    let mut common = 0;
    for t in &pt {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                common += 1;
            }
        }
    }
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / pt.len() as f64;
    let recall = common as f64 / gt.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

/// Maximum-weight assignment on a square matrix (Hungarian algorithm,
/// O(n³)). Returns `assignment[row] = column`.
pub fn max_weight_assignment(w: &[Vec<f64>]) -> Vec<usize> {
    let n = w.len();
    if n == 0 {
        return Vec::new();
    }
    // Potentials-based shortest augmenting path on costs -w, 1-indexed.
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = -w[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut out = vec![0; n];
    for j in 1..=n {
        if p[j] > 0 {
            out[p[j] - 1] = j - 1;
        }
    }
    out
}

/// Optimal one-to-one alignment of spans by token F1, summed and divided by
/// the larger span count.
pub fn multi_span_f1(pred: &[String], gold: &[String]) -> f64 {
    let n = pred.len().max(gold.len());
    if n == 0 {
        return 1.0;
    }
    let mut w = vec![vec![0.0; n]; n];
    for (i, p) in pred.iter().enumerate() {
        for (j, g) in gold.iter().enumerate() {
            w[i][j] = token_f1(p, g);
        }
    }
    let a = max_weight_assignment(&w);
    let total: f64 = a.iter().enumerate().map(|(i, &j)| w[i][j]).sum();
    total / n as f64
}

/// A predicted answer for one question.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub qid: String,
    pub spans: Vec<String>,
}

/// The fields of a dataset record that scoring needs.
#[derive(Debug, Clone, Deserialize)]
pub struct GoldRow {
    pub qid: String,
    pub theory_id: String,
    pub answers: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub dataset: String,
    pub theory: String,
    pub n: usize,
    /// Percentages.
    pub em: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// One row per theory, then an `all` row.
    pub rows: Vec<EvalRow>,
    /// Gold qids without a prediction (scored 0).
    pub missing: Vec<String>,
}

impl EvalReport {
    pub fn overall(&self) -> &EvalRow {
        self.rows.last().expect("report has an overall row")
    }
}

impl fmt::Display for EvalReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<8} {:<8} {:>6} {:>7} {:>7}", "dataset", "theory", "n", "EM", "F1")?;
        for r in &self.rows {
            writeln!(f, "{:<8} {:<8} {:>6} {:>7.1} {:>7.1}", r.dataset, r.theory, r.n, r.em, r.f1)?;
        }
        if !self.missing.is_empty() {
            writeln!(f, "missing predictions: {}", self.missing.len())?;
        }
        Ok(())
    }
}

/// Score predictions against gold rows. Predictions for unknown qids are an
/// error; gold rows without a prediction score 0 and are listed as missing.
pub fn evaluate(dataset: &str, gold: &[GoldRow], preds: &[Prediction]) -> Result<EvalReport, Error> {
    let known: HashMap<&str, &GoldRow> = gold.iter().map(|g| (g.qid.as_str(), g)).collect();
    let mut by_qid: HashMap<&str, &Prediction> = HashMap::new();
    for p in preds {
        if !known.contains_key(p.qid.as_str()) {
            return Err(Error::Invalid(format!("prediction for unknown qid `{}`", p.qid)));
        }
        by_qid.insert(&p.qid, p);
    }
    let mut sums: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    let mut missing = Vec::new();
    let (mut em_all, mut f1_all) = (0.0, 0.0);
    for g in gold {
        let (em, f1) = match by_qid.get(g.qid.as_str()) {
            Some(p) => (exact_match(&p.spans, &g.answers), multi_span_f1(&p.spans, &g.answers)),
            None => {
                missing.push(g.qid.clone());
                (0.0, 0.0)
            }
        };
        let s = sums.entry(&g.theory_id).or_default();
        s.0 += 1;
        s.1 += em;
        s.2 += f1;
        em_all += em;
        f1_all += f1;
    }
    let pct = |x: f64, n: usize| if n == 0 { 0.0 } else { 100.0 * x / n as f64 };
    let mut rows: Vec<EvalRow> = sums
        .into_iter()
        .map(|(t, (n, em, f1))| EvalRow {
            dataset: dataset.to_string(),
            theory: t.to_string(),
            n,
            em: pct(em, n),
            f1: pct(f1, n),
        })
        .collect();
    rows.push(EvalRow {
        dataset: dataset.to_string(),
        theory: "all".into(),
        n: gold.len(),
        em: pct(em_all, gold.len()),
        f1: pct(f1_all, gold.len()),
    });
    Ok(EvalReport { rows, missing })
}

/// Score a predictions file against a dataset file (both line-delimited JSON).
pub fn evaluate_file(
    dataset: &str,
    predictions: impl AsRef<std::path::Path>,
    gold: impl AsRef<std::path::Path>,
) -> Result<EvalReport, Error> {
    let preds: Vec<Prediction> = crate::io::read_jsonl_file(predictions)?;
    let gold: Vec<GoldRow> = crate::io::read_jsonl_file(gold)?;
    evaluate(dataset, &gold, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn em_examples() {
        assert_eq!(exact_match(&s(&["b", "a"]), &s(&["a", "b"])), 1.0);
        assert_eq!(exact_match(&s(&["a"]), &s(&["a", "a"])), 0.0);
        assert_eq!(exact_match(&[], &[]), 1.0);
        assert_eq!(exact_match(&s(&[" Alpha. "]), &s(&["alpha"])), 1.0);
    }

    #[test]
    fn f1_examples() {
        assert_eq!(multi_span_f1(&s(&["alpha beta"]), &s(&["alpha beta"])), 1.0);
        let expected = 2.0 * (1.0 * 0.5) / (1.0 + 0.5);
        assert!((multi_span_f1(&s(&["alpha"]), &s(&["alpha beta"])) - expected).abs() < 1e-12);
        assert!((expected - 0.667).abs() < 5e-4);
        assert_eq!(multi_span_f1(&s(&["x"]), &s(&["y"])), 0.0);
        assert_eq!(multi_span_f1(&s(&["a", "b"]), &s(&["a"])), 0.5);
    }

    #[test]
    fn assignment_beats_greedy() {
        // Greedy on row 0 takes column 0 (0.9) and leaves 0.0; optimal is 0.8 + 0.8.
        let w = vec![vec![0.9, 0.8], vec![0.8, 0.0]];
        assert_eq!(max_weight_assignment(&w), vec![1, 0]);
    }

    #[test]
    fn missing_and_unknown() {
        let gold = vec![GoldRow {
            qid: "q1".into(),
            theory_id: "T".into(),
            answers: s(&["a"]),
        }];
        let r = evaluate("E", &gold, &[]).unwrap();
        assert_eq!(r.overall().em, 0.0);
        assert_eq!(r.missing, vec!["q1".to_string()]);
        let bad = Prediction {
            qid: "zz".into(),
            spans: vec![],
        };
        assert!(evaluate("E", &gold, &[bad]).is_err());
    }
}
