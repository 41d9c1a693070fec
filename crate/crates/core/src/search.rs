//! Brute-force distant-supervision search for decomposition chains.
//!
//! Questions are drawn from a fill-in-the-blank pool built from valid agent
//! inputs. At every depth each surviving chain is extended by `f` sampled
//! operations crossed with the `g` pool questions that best overlap the
//! complex question; refused calls prune the branch. Expansion order is a
//! pure function of the seed, and the call budget only truncates it, so
//! anything found under a budget is also found under every larger one.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agents::{sample_valid_input_records, Answerer, ValidInput, SLOT};
use crate::answer::Answer;
use crate::config::DatasetRecipe;
use crate::dsl::{BaseOp, DecompProgram, DecompStep, OperatorName, Transform};
use crate::eval::exact_match;
use crate::executor::{execute_step, finalize_answer, BudgetedAnswerer};
use crate::generator::Example;
use crate::rng::{derive_seed, hash_str, rng_for};
use crate::world::sample_world;

const POOL_TAG: u64 = 0xf17b;
const SAMPLE_TAG: u64 = 0x5a3;

/// A question pattern with `__` blanks and the agent it was asked to.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FitbEntry {
    pub agent: String,
    pub pattern: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitbPool {
    pub entries: Vec<FitbEntry>,
}

/// Blank out the known entity spans of valid inputs; duplicates keep their
/// first position.
pub fn build_fitb_pool(inputs: &[ValidInput]) -> FitbPool {
    let mut seen = HashSet::new();
    let mut entries = Vec::new();
    for v in inputs {
        let mut pattern = String::new();
        let mut rest = v.question.as_str();
        for s in &v.slots {
            match rest.find(s.as_str()) {
                Some(i) => {
                    pattern.push_str(&rest[..i]);
                    pattern.push_str(SLOT);
                    rest = &rest[i + s.len()..];
                }
                None => break,
            }
        }
        pattern.push_str(rest);
        let e = FitbEntry {
            agent: v.agent.clone(),
            pattern,
        };
        if seen.insert(e.clone()) {
            entries.push(e);
        }
    }
    FitbPool { entries }
}

/// Pool from valid inputs sampled over `worlds` independent worlds.
pub fn recipe_pool(recipe: &DatasetRecipe, seed: u64, worlds: usize, per_agent: usize) -> FitbPool {
    let mut inputs = Vec::new();
    for k in 0..worlds {
        let ws = derive_seed(seed, &[POOL_TAG, k as u64]);
        let world = sample_world(&recipe.schema, &recipe.registry, ws).expect("recipe was validated");
        for agent in recipe.registry.agents() {
            inputs.extend(sample_valid_input_records(agent, &world, ws, per_agent));
        }
    }
    build_fitb_pool(&inputs)
}

const STOPWORDS: &[&str] = &[
    "a", "about", "all", "an", "and", "are", "as", "at", "be", "been", "by", "did", "do", "does", "for", "has", "have",
    "how", "in", "is", "it", "its", "of", "on", "or", "that", "the", "their", "this", "to", "was", "were", "what",
    "when", "where", "which", "who", "whom", "whose", "why", "with",
];

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| STOPWORDS.iter().copied().collect())
}

/// Lowercased content tokens; `#j` references stay whole.
pub fn content_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !(c.is_alphanumeric() || c == '#'))
        .filter(|t| !t.is_empty() && !stopwords().contains(t))
        .map(String::from)
        .collect()
}

/// Share of the candidate's content tokens that occur in the complex question.
pub fn overlap_score(candidate: &str, complex: &str) -> f64 {
    let cand = content_tokens(candidate);
    if cand.is_empty() {
        return 0.0;
    }
    let target: HashSet<String> = content_tokens(complex).into_iter().collect();
    cand.iter().filter(|t| target.contains(*t)).count() as f64 / cand.len() as f64
}

/// A grounded question for one agent.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Candidate {
    pub agent: String,
    pub question: String,
}

fn fillings(blanks: usize, fillers: &[String]) -> Vec<Vec<&String>> {
    let mut out: Vec<Vec<&String>> = vec![Vec::new()];
    for _ in 0..blanks {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                fillers.iter().map(move |f| {
                    let mut p = prefix.clone();
                    p.push(f);
                    p
                })
            })
            .collect();
    }
    out
}

/// Expand the pool with the complex question's entities and the available
/// answer references, and return the `g` best by overlap (stable in pool
/// order). When `refs` is non-empty every candidate must use at least one.
pub fn rank_candidates(pool: &FitbPool, complex: &str, entities: &[String], refs: &[usize], g: usize) -> Vec<Candidate> {
    let ref_names: Vec<String> = refs.iter().map(|j| format!("#{j}")).collect();
    let fillers: Vec<String> = entities.iter().chain(&ref_names).cloned().collect();
    let mut scored: Vec<(f64, Candidate)> = Vec::new();
    let mut seen = HashSet::new();
    for e in &pool.entries {
        let parts: Vec<&str> = e.pattern.split(SLOT).collect();
        for fill in fillings(parts.len() - 1, &fillers) {
            if !refs.is_empty() && !fill.iter().any(|f| ref_names.contains(f)) {
                continue;
            }
            let mut q = parts[0].to_string();
            for (f, p) in fill.iter().zip(&parts[1..]) {
                q.push_str(f);
                q.push_str(p);
            }
            let c = Candidate {
                agent: e.agent.clone(),
                question: q,
            };
            if seen.insert(c.clone()) {
                scored.push((overlap_score(&c.question, complex), c));
            }
        }
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    scored.into_iter().take(g).map(|(_, c)| c).collect()
}

/// The operations the search draws from; `filter(#j)` and
/// `filterValues(#j)_keys` are instantiated for every earlier answer.
pub fn operation_list(refs: &[usize]) -> Vec<OperatorName> {
    use BaseOp::*;
    use Transform::*;
    let mut ops = vec![
        OperatorName::new(Select, None, &[]),
        OperatorName::new(Filter, None, &[]),
        OperatorName::new(FilterValues, None, &[Keys]),
    ];
    ops.extend(refs.iter().map(|&j| OperatorName::new(Filter, Some(j), &[])));
    ops.extend(refs.iter().map(|&j| OperatorName::new(FilterValues, Some(j), &[Keys])));
    ops.extend([
        OperatorName::new(Project, None, &[]),
        OperatorName::new(ProjectValues, None, &[]),
        OperatorName::new(ProjectValues, None, &[Flat]),
        OperatorName::new(ProjectValues, None, &[Flat, Unique]),
        OperatorName::new(Project, None, &[Values, Flat]),
        OperatorName::new(Project, None, &[Values, Flat, Unique]),
    ]);
    ops
}

/// Operations whose iteration target can exist given the answers so far.
fn applicable(op: &OperatorName, answers: &BTreeMap<usize, Answer>) -> bool {
    let fits = |a: &Answer| match op.base {
        BaseOp::Select => true,
        BaseOp::Project | BaseOp::Filter => matches!(a, Answer::List(_)),
        BaseOp::ProjectValues | BaseOp::FilterValues => matches!(a, Answer::Map(_)),
    };
    match op.param {
        Some(j) => answers.get(&j).is_some_and(fits),
        None => op.base == BaseOp::Select || answers.values().any(fits),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchParams {
    /// Operations per step.
    pub f: usize,
    /// Questions per step.
    pub g: usize,
    /// Maximum depth.
    pub o: usize,
    pub budget: u64,
    pub seed: u64,
}

impl SearchParams {
    pub fn from_recipe(recipe: &DatasetRecipe) -> Self {
        let s = &recipe.file.search;
        Self {
            f: s.ops_per_step,
            g: s.questions_per_step,
            o: s.max_depth,
            budget: s.budget,
            seed: recipe.file.seed,
        }
    }

    /// Questions tried per step.
    pub fn l(&self) -> usize {
        self.f * self.g
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoundChain {
    pub program: DecompProgram,
    /// Agent calls consumed when the chain's last step completed.
    pub found_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SearchStats {
    pub chains: usize,
    pub calls: u64,
    pub budget_exhausted: bool,
    pub states_expanded: usize,
    /// Chain length → number of chains.
    pub depths: BTreeMap<usize, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub qid: String,
    pub chains: Vec<FoundChain>,
    pub stats: SearchStats,
}

impl SearchResult {
    /// Calls consumed when the first valid chain was completed.
    pub fn first_found(&self) -> Option<u64> {
        self.chains.iter().map(|c| c.found_at).min()
    }
}

struct State {
    steps: Vec<DecompStep>,
    answers: BTreeMap<usize, Answer>,
}

/// Search for chains answering `question` with `gold` against `agents`.
pub fn search_chains(
    qid: &str,
    question: &str,
    entities: &[String],
    gold: &[String],
    pool: &FitbPool,
    agents: &dyn Answerer,
    params: &SearchParams,
) -> SearchResult {
    let budgeted = BudgetedAnswerer::new(agents, params.budget);
    let mut stats = SearchStats::default();
    let mut chains = Vec::new();
    let mut rendered = HashSet::new();
    let mut frontier = vec![State {
        steps: Vec::new(),
        answers: BTreeMap::new(),
    }];
    let qseed = derive_seed(params.seed, &[hash_str(qid)]);
    'depth: for depth in 0..params.o {
        if params.budget == 0 {
            break;
        }
        let refs: Vec<usize> = (1..=depth).collect();
        let questions = rank_candidates(pool, question, entities, &refs, params.g);
        let all_ops = operation_list(&refs);
        let mut next = Vec::new();
        for (n, state) in frontier.iter().enumerate() {
            stats.states_expanded += 1;
            let ops: Vec<OperatorName> = if depth == 0 {
                vec![OperatorName::select()]
            } else {
                let usable: Vec<&OperatorName> = all_ops.iter().filter(|o| applicable(o, &state.answers)).collect();
                let mut rng = rng_for(qseed, &[depth as u64, n as u64]);
                usable
                    .choose_multiple(&mut rng, params.f.min(usable.len()))
                    .map(|o| (*o).clone())
                    .collect()
            };
            for op in &ops {
                for c in &questions {
                    let step = DecompStep {
                        index: depth + 1,
                        operator: op.clone(),
                        agent: c.agent.clone(),
                        question: c.question.clone(),
                    };
                    let Ok(trace) = execute_step(&step, &budgeted, &state.answers) else {
                        if budgeted.exhausted() {
                            stats.budget_exhausted = true;
                            break 'depth;
                        }
                        continue;
                    };
                    let mut steps = state.steps.clone();
                    steps.push(step);
                    let valid = finalize_answer(&trace.answer).is_ok_and(|a| exact_match(&a, gold) == 1.0);
                    if valid {
                        let program = DecompProgram { steps };
                        if rendered.insert(program.render()) {
                            *stats.depths.entry(program.len()).or_default() += 1;
                            chains.push(FoundChain {
                                program,
                                found_at: budgeted.used(),
                            });
                        }
                    } else {
                        let mut answers = state.answers.clone();
                        answers.insert(depth + 1, trace.answer);
                        next.push(State { steps, answers });
                    }
                }
            }
        }
        frontier = next;
        if frontier.is_empty() {
            break;
        }
    }
    stats.calls = budgeted.used();
    stats.chains = chains.len();
    SearchResult {
        qid: qid.to_string(),
        chains,
        stats,
    }
}

/// Search one generated example in its own world.
pub fn search_example(recipe: &DatasetRecipe, example: &Example, pool: &FitbPool, params: &SearchParams) -> SearchResult {
    let world = example.world(recipe);
    let agents = recipe.registry.bind(&world);
    let entities: Vec<String> = example.grounding.values().cloned().collect();
    search_chains(
        &example.qid,
        &example.question,
        &entities,
        &example.answers,
        pool,
        &agents,
        params,
    )
}

/// Indices of a seeded sample of `k` out of `n` items, in increasing order.
pub fn subsample(n: usize, k: usize, seed: u64) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[SAMPLE_TAG]));
    idx.truncate(k.min(n));
    idx.sort_unstable();
    idx
}

/// One row of the cost/coverage table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostPoint {
    pub budget: u64,
    pub total_calls: u64,
    pub questions: usize,
    pub covered: usize,
    pub coverage: f64,
    /// Some search was cut off by this budget.
    pub partial: bool,
}

/// Coverage at each budget, derived from unbounded-order runs made with the
/// largest budget: a run under budget `b` performs exactly the first
/// `min(b, used)` calls of the larger run.
pub fn aggregate_cost_accuracy(results: &[SearchResult], budgets: &[u64]) -> Vec<CostPoint> {
    let budgets: BTreeSet<u64> = budgets.iter().copied().collect();
    budgets
        .into_iter()
        .map(|b| {
            let covered = results.iter().filter(|r| r.first_found().is_some_and(|c| c <= b)).count();
            CostPoint {
                budget: b,
                total_calls: results.iter().map(|r| r.stats.calls.min(b)).sum(),
                questions: results.len(),
                covered,
                coverage: if results.is_empty() {
                    0.0
                } else {
                    covered as f64 / results.len() as f64
                },
                partial: results
                    .iter()
                    .any(|r| r.stats.calls > b || (r.stats.calls == b && r.stats.budget_exhausted)),
            }
        })
        .collect()
}
