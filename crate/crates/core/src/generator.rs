//! Dataset construction from theories.
//!
//! Example `i` is built from theory `i mod T` in a world sampled from a seed
//! derived from `(seed, i, attempt)`; attempts continue until the grounded
//! theory yields a valid example. Examples are built in parallel and kept in
//! index order, so output does not depend on the thread count.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::agents::{normalize_question, Modality, Registry};
use crate::answer::Answer;
use crate::config::{DatasetRecipe, TheorySpec};
use crate::dsl::{DecompProgram, DecompStep};
use crate::error::{ConfigError, Error};
use crate::executor::{execute, finalize_answer, Grounding};
use crate::rng::{derive_seed, rng_for};
use crate::world::{sample_world, verbalize, verbalize_fact, Fact, VerbalizedFact, World};

const SPLIT_TAG: u64 = 0x5b1;
const CG_TAG: u64 = 0xc6;

/// Inclusive bounds on the number of answer spans.
pub const MIN_ANSWERS: usize = 1;
pub const MAX_ANSWERS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
    Cg,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
            Split::Cg => "cg",
        }
    }
}

/// A generated example. The world is not stored: it is a pure function of
/// `world_seed` and is rebuilt by [`Example::world`] when needed.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub qid: String,
    pub index: usize,
    pub split: Split,
    pub theory_id: String,
    pub question: String,
    pub grounding: Grounding,
    /// Sorted alphabetically.
    pub answers: Vec<String>,
    pub world_seed: u64,
    /// Grounded program with every step routed to the world's agent.
    pub gold_program: DecompProgram,
    /// Indices into the world's facts.
    pub gold_fact_ids: Vec<usize>,
    pub kb_facts: usize,
    pub kb_tokens: usize,
}

impl Example {
    pub fn world(&self, recipe: &DatasetRecipe) -> World {
        sample_world(&recipe.schema, &recipe.registry, self.world_seed).expect("recipe was validated")
    }

    pub fn steps(&self) -> usize {
        self.gold_program.len()
    }

    pub fn record(&self, recipe: &DatasetRecipe) -> ExampleRecord {
        let world = self.world(recipe);
        let aux = derive_auxiliary(recipe, &world, &self.gold_program, &self.gold_fact_ids);
        ExampleRecord {
            qid: self.qid.clone(),
            theory_id: self.theory_id.clone(),
            split: self.split,
            question: self.question.clone(),
            answers: self.answers.clone(),
            grounding: self.grounding.iter().map(|(j, v)| (format!("${j}"), v.clone())).collect(),
            contexts: aux.contexts,
            entities: world.entities,
            kb: world.facts,
            assignment: world.assignment,
            gold_decomposition: aux.gold_decomposition,
            gold_facts: aux.gold_facts,
            seed: self.world_seed,
        }
    }
}

/// The on-disk form of an example.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExampleRecord {
    pub qid: String,
    pub theory_id: String,
    pub split: Split,
    pub question: String,
    pub answers: Vec<String>,
    pub grounding: IndexMap<String, String>,
    /// Agent id → verbalized facts it holds.
    pub contexts: IndexMap<String, Vec<String>>,
    /// Entity type → names (numeric types list the values present).
    pub entities: IndexMap<String, Vec<String>>,
    pub kb: Vec<Fact>,
    /// Relation → agent id.
    pub assignment: IndexMap<String, String>,
    pub gold_decomposition: String,
    pub gold_facts: Vec<VerbalizedFact>,
    pub seed: u64,
}

impl ExampleRecord {
    /// The world the record's facts describe.
    pub fn world(&self) -> World {
        World {
            world_id: format!("w{:016x}", self.seed),
            seed: self.seed,
            entities: self.entities.clone(),
            facts: self.kb.clone(),
            assignment: self.assignment.clone(),
        }
    }

    pub fn gold_program(&self) -> Result<DecompProgram, Error> {
        Ok(crate::dsl::parse_program(&self.gold_decomposition)?)
    }
}

pub struct Auxiliary {
    pub gold_decomposition: String,
    pub gold_facts: Vec<VerbalizedFact>,
    pub contexts: IndexMap<String, Vec<String>>,
}

/// Gold decomposition text, verbalized gold facts and the full per-agent
/// contexts of an example.
pub fn derive_auxiliary(recipe: &DatasetRecipe, world: &World, program: &DecompProgram, fact_ids: &[usize]) -> Auxiliary {
    let contexts = verbalize(&recipe.schema, &recipe.registry, world)
        .expect("recipe was validated")
        .into_iter()
        .map(|(a, v)| (a, v.into_iter().map(|f| f.text).collect()))
        .collect();
    let gold_facts = fact_ids
        .iter()
        .map(|&i| verbalize_fact(&recipe.schema, &recipe.registry, world, &world.facts[i]).expect("recipe was validated"))
        .collect();
    Auxiliary {
        gold_decomposition: program.render(),
        gold_facts,
        contexts,
    }
}

/// Whitespace tokens over all agents' contexts.
pub fn context_tokens(recipe: &DatasetRecipe, world: &World) -> usize {
    verbalize(&recipe.schema, &recipe.registry, world)
        .expect("recipe was validated")
        .values()
        .flatten()
        .map(|f| f.text.split_whitespace().count())
        .sum()
}

/// A theory with per-step relation lookups resolved once.
struct Prepared<'a> {
    spec: &'a TheorySpec,
    /// Relation each step asks about; `None` for math steps.
    relations: Vec<Option<String>>,
    siblings: Vec<usize>,
}

fn prepare<'a>(registry: &Registry, theories: &[&'a TheorySpec]) -> Vec<Prepared<'a>> {
    theories
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let relations = t
                .program
                .steps
                .iter()
                .map(|s| {
                    let agent = registry.get(&s.agent).expect("validated");
                    if agent.modality == Modality::Math {
                        None
                    } else {
                        registry.match_relation(&s.question).map(|tpl| tpl.relation.clone())
                    }
                })
                .collect();
            let key = normalize_question(&t.question);
            let siblings = theories
                .iter()
                .enumerate()
                .filter(|(j, o)| *j != i && normalize_question(&o.question) == key)
                .map(|(j, _)| j)
                .collect();
            Prepared {
                spec: t,
                relations,
                siblings,
            }
        })
        .collect()
}

/// Route each knowledge step to the agent its relation is assigned to.
fn retarget(p: &Prepared, world: &World) -> DecompProgram {
    let steps = p
        .spec
        .program
        .steps
        .iter()
        .zip(&p.relations)
        .map(|(s, rel)| match rel.as_ref().and_then(|r| world.assignment.get(r)) {
            Some(agent) => DecompStep {
                agent: agent.clone(),
                ..s.clone()
            },
            None => s.clone(),
        })
        .collect();
    DecompProgram { steps }
}

fn sample_grounding(spec: &TheorySpec, world: &World, rng: &mut impl rand::Rng) -> Option<Grounding> {
    let mut used = HashSet::new();
    let mut g = Grounding::new();
    for (j, ty) in &spec.slot_types {
        let pool: Vec<&String> = world.entities.get(ty)?.iter().filter(|e| !used.contains(*e)).collect();
        let v = (*pool.choose(rng)?).clone();
        used.insert(v.clone());
        g.insert(*j, v);
    }
    Some(g)
}

fn tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(String::from)
        .collect()
}

/// Whether an answer span occurs as a whole-word sequence in the question.
pub fn leaks(question: &str, answer: &str) -> bool {
    let q = tokens(question);
    let a = tokens(answer);
    !a.is_empty() && q.windows(a.len()).any(|w| w == a.as_slice())
}

/// Result of running a theory with a grounding.
struct Run {
    program: DecompProgram,
    answers: Vec<String>,
    facts: Vec<usize>,
    /// Some earlier step already yields the final answer set.
    collapsed: bool,
}

fn sorted_spans(a: &Answer) -> Option<Vec<String>> {
    let mut v = finalize_answer(a).ok()?;
    v.sort();
    Some(v)
}

/// Run a theory with a grounding; `None` unless it produces a valid answer.
fn run(p: &Prepared, world: &World, registry: &Registry, g: &Grounding) -> Option<Run> {
    let program = retarget(p, world).ground(g).ok()?;
    let trace = execute(&program, &registry.bind(world), &Grounding::new());
    let answers = sorted_spans(trace.final_answer.as_ref()?)?;
    if !(MIN_ANSWERS..=MAX_ANSWERS).contains(&answers.len()) {
        return None;
    }
    let last = trace.steps.len().saturating_sub(1);
    let collapsed = trace.steps[..last]
        .iter()
        .any(|s| sorted_spans(&s.answer).as_ref() == Some(&answers));
    Some(Run {
        program,
        answers,
        facts: trace.touched_facts(),
        collapsed,
    })
}

struct Candidate {
    attempt: usize,
    world_seed: u64,
    question: String,
    grounding: Grounding,
    answers: Vec<String>,
    program: DecompProgram,
    facts: Vec<usize>,
}

fn try_attempt(recipe: &DatasetRecipe, prepared: &[Prepared], which: usize, world_seed: u64) -> Option<Candidate> {
    let p = &prepared[which];
    let world = sample_world(&recipe.schema, &recipe.registry, world_seed).ok()?;
    let mut rng = rng_for(world_seed, &[3]);
    let g = sample_grounding(p.spec, &world, &mut rng)?;
    let Run {
        program,
        answers,
        facts,
        collapsed,
    } = run(p, &world, &recipe.registry, &g)?;
    // Every hop must matter: no shorter prefix of the gold program answers it.
    if collapsed {
        return None;
    }
    let question = crate::dsl::substitute_slots(&p.spec.question, &g).ok()?;
    if answers.iter().any(|a| leaks(&question, a)) {
        return None;
    }
    // A question shared by several theories must have one working strategy.
    for &s in &p.siblings {
        let sib = &prepared[s];
        let fits = sib
            .spec
            .slot_types
            .iter()
            .all(|(j, ty)| g.get(j).is_some_and(|v| world.has_entity(ty, v)));
        if fits && run(sib, &world, &recipe.registry, &g).is_some() {
            return None;
        }
    }
    // The gold facts alone must reproduce the answer.
    let restricted = world.restricted(&facts.iter().map(|&i| world.facts[i].clone()).collect::<Vec<_>>());
    let replay = execute(&program, &recipe.registry.bind(&restricted), &Grounding::new());
    let mut replayed = finalize_answer(replay.final_answer.as_ref()?).ok()?;
    replayed.sort();
    if replayed != answers {
        return None;
    }
    Some(Candidate {
        attempt: 0,
        world_seed,
        question,
        grounding: g,
        answers,
        program,
        facts,
    })
}

fn search_from(
    recipe: &DatasetRecipe,
    prepared: &[Prepared],
    which: usize,
    seed: u64,
    seed_path: &[u64],
    start: usize,
    max_attempts: usize,
) -> Option<Candidate> {
    (start..max_attempts).find_map(|attempt| {
        let mut path = seed_path.to_vec();
        path.push(attempt as u64);
        let world_seed = derive_seed(seed, &path);
        try_attempt(recipe, prepared, which, world_seed).map(|c| Candidate { attempt, ..c })
    })
}

/// Seeds and sizes for one generation run.
#[derive(Debug, Clone, Copy)]
pub struct GenParams {
    pub seed: u64,
    pub size: usize,
    pub max_attempts: usize,
}

impl GenParams {
    pub fn from_recipe(recipe: &DatasetRecipe) -> Self {
        Self {
            seed: recipe.file.seed,
            size: recipe.file.size,
            max_attempts: recipe.file.max_attempts,
        }
    }
}

fn build(
    recipe: &DatasetRecipe,
    theories: &[&TheorySpec],
    params: GenParams,
    tag: Option<u64>,
) -> Result<Vec<Example>, Error> {
    if theories.is_empty() {
        return Err(Error::Invalid("no theories to build from".into()));
    }
    if !params.size.is_multiple_of(theories.len()) {
        return Err(ConfigError::UnbalancedSize {
            size: params.size,
            theories: theories.len(),
        }
        .into());
    }
    let prepared = prepare(&recipe.registry, theories);
    let path = |i: usize| -> Vec<u64> { tag.into_iter().chain([i as u64]).collect() };
    let starved = |i: usize| Error::Starvation {
        theory: theories[i % theories.len()].id.clone(),
        index: i,
        attempts: params.max_attempts,
    };

    let mut found: Vec<Option<Candidate>> = (0..params.size)
        .into_par_iter()
        .map(|i| search_from(recipe, &prepared, i % theories.len(), params.seed, &path(i), 0, params.max_attempts))
        .collect();

    // Distinct (theory, grounding) pairs, resolved in index order.
    let mut seen = HashSet::new();
    for (i, slot) in found.iter_mut().enumerate() {
        let which = i % theories.len();
        loop {
            let c = slot.as_ref().ok_or_else(|| starved(i))?;
            if seen.insert((which, c.grounding.clone())) {
                break;
            }
            *slot = search_from(recipe, &prepared, which, params.seed, &path(i), c.attempt + 1, params.max_attempts);
        }
    }

    let prefix = match tag {
        Some(_) => format!("{}-cg", recipe.dataset()),
        None => recipe.dataset().to_string(),
    };
    let examples: Vec<Example> = found
        .into_par_iter()
        .enumerate()
        .map(|(i, c)| {
            let c = c.expect("checked above");
            let world = sample_world(&recipe.schema, &recipe.registry, c.world_seed).expect("validated");
            Example {
                qid: format!("{prefix}-{i:05}"),
                index: i,
                split: Split::Cg,
                theory_id: theories[i % theories.len()].id.clone(),
                question: c.question,
                grounding: c.grounding,
                answers: c.answers,
                world_seed: c.world_seed,
                gold_program: c.program,
                gold_fact_ids: c.facts,
                kb_facts: world.facts.len(),
                kb_tokens: context_tokens(recipe, &world),
            }
        })
        .collect();
    Ok(examples)
}

/// Assign train/dev/test by a seeded permutation of example indices.
pub fn assign_splits(examples: &mut [Example], ratios: [f64; 3], seed: u64) {
    let n = examples.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[SPLIT_TAG]));
    let n_train = (n as f64 * ratios[0]).round() as usize;
    let n_dev = ((n as f64 * ratios[1]).round() as usize).min(n - n_train);
    for (rank, &i) in order.iter().enumerate() {
        examples[i].split = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_dev {
            Split::Dev
        } else {
            Split::Test
        };
    }
}

/// Build the main dataset from the recipe's training theories.
pub fn build_dataset(recipe: &DatasetRecipe, params: GenParams) -> Result<Vec<Example>, Error> {
    let theories: Vec<&TheorySpec> = recipe.training_theories().collect();
    let mut examples = build(recipe, &theories, params, None)?;
    assign_splits(&mut examples, recipe.file.splits, params.seed);
    Ok(examples)
}

/// Build the test-only compositional-generalization set from the holdout
/// theories, after checking that they are novel compositions of seen steps.
pub fn build_cg_split(recipe: &DatasetRecipe, params: GenParams) -> Result<Vec<Example>, Error> {
    let errs = verify_cg_theories(recipe.training_theories(), recipe.holdout_theories());
    if !errs.is_empty() {
        return Err(crate::error::ConfigErrors(errs).into());
    }
    let theories: Vec<&TheorySpec> = recipe.holdout_theories().collect();
    build(recipe, &theories, params, Some(CG_TAG))
}

/// Step templates of a theory, numbering-normalized.
pub fn composition_key(t: &TheorySpec) -> Vec<String> {
    t.program.steps.iter().map(|s| s.template_key()).collect()
}

/// Check that every holdout theory is built from step templates seen in
/// training while its full composition is unseen.
pub fn verify_cg_theories<'a>(
    training: impl Iterator<Item = &'a TheorySpec>,
    holdout: impl Iterator<Item = &'a TheorySpec>,
) -> Vec<ConfigError> {
    let training: Vec<&TheorySpec> = training.collect();
    let seen_steps: BTreeSet<String> = training.iter().flat_map(|t| composition_key(t)).collect();
    let seen_whole: BTreeSet<Vec<String>> = training.iter().map(|t| composition_key(t)).collect();
    let mut errs = Vec::new();
    for h in holdout {
        let key = composition_key(h);
        for step in &key {
            if !seen_steps.contains(step) {
                errs.push(ConfigError::Theory {
                    theory: h.id.clone(),
                    reason: format!("step template `{step}` does not occur in any training theory"),
                });
            }
        }
        if seen_whole.contains(&key) {
            errs.push(ConfigError::Theory {
                theory: h.id.clone(),
                reason: "composition is identical to a training theory".into(),
            });
        }
    }
    errs
}

/// Per-dataset summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub dataset: String,
    pub questions: usize,
    pub theories: usize,
    pub steps_per_theory: f64,
    pub entity_types: usize,
    pub relations: usize,
    pub templates: usize,
    pub entities_per_answer: f64,
    pub facts_per_kb: f64,
    pub tokens_per_kb: f64,
    pub gold_facts_per_question: f64,
    pub per_theory: BTreeMap<String, usize>,
}

fn mean(xs: impl Iterator<Item = usize>) -> f64 {
    let (s, n) = xs.fold((0usize, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s as f64 / n as f64
    }
}

/// Per-example quantities the statistics are averaged from.
struct Row<'a> {
    theory: &'a str,
    answers: usize,
    facts: usize,
    tokens: usize,
    gold: usize,
}

pub fn dataset_stats(recipe: &DatasetRecipe, examples: &[Example]) -> DatasetStats {
    stats_of(
        recipe,
        examples.iter().map(|e| Row {
            theory: &e.theory_id,
            answers: e.answers.len(),
            facts: e.kb_facts,
            tokens: e.kb_tokens,
            gold: e.gold_fact_ids.len(),
        }),
    )
}

/// Statistics of dataset files.
pub fn record_stats(recipe: &DatasetRecipe, records: &[ExampleRecord]) -> DatasetStats {
    stats_of(
        recipe,
        records.iter().map(|r| Row {
            theory: &r.theory_id,
            answers: r.answers.len(),
            facts: r.kb.len(),
            tokens: r.contexts.values().flatten().map(|t| t.split_whitespace().count()).sum(),
            gold: r.gold_facts.len(),
        }),
    )
}

fn stats_of<'a>(recipe: &DatasetRecipe, rows: impl Iterator<Item = Row<'a>>) -> DatasetStats {
    let rows: Vec<Row> = rows.collect();
    let mut per_theory = BTreeMap::new();
    for r in &rows {
        *per_theory.entry(r.theory.to_string()).or_insert(0) += 1;
    }
    let theories: Vec<&TheorySpec> = recipe
        .theories
        .iter()
        .filter(|t| per_theory.contains_key(&t.id))
        .collect();
    DatasetStats {
        dataset: recipe.dataset().to_string(),
        questions: rows.len(),
        theories: theories.len(),
        steps_per_theory: mean(theories.iter().map(|t| t.program.len())),
        entity_types: recipe.schema.entity_types.len(),
        relations: recipe.schema.relations.len(),
        templates: recipe.registry.template_count(),
        entities_per_answer: mean(rows.iter().map(|r| r.answers)),
        facts_per_kb: mean(rows.iter().map(|r| r.facts)),
        tokens_per_kb: mean(rows.iter().map(|r| r.tokens)),
        gold_facts_per_question: mean(rows.iter().map(|r| r.gold)),
        per_theory,
    }
}

impl std::fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<28} {:>10}", "", self.dataset)?;
        writeln!(f, "{:<28} {:>10}", "#questions", self.questions)?;
        writeln!(f, "{:<28} {:>10}", "#theories", self.theories)?;
        writeln!(f, "{:<28} {:>10.1}", "#steps per theory", self.steps_per_theory)?;
        writeln!(f, "{:<28} {:>10}", "#entity types", self.entity_types)?;
        writeln!(f, "{:<28} {:>10}", "#relations", self.relations)?;
        writeln!(f, "{:<28} {:>10}", "#templates", self.templates)?;
        writeln!(f, "{:<28} {:>10.2}", "#entities per answer", self.entities_per_answer)?;
        writeln!(f, "{:<28} {:>10.1}", "#KB facts per KB", self.facts_per_kb)?;
        writeln!(f, "{:<28} {:>10.1}", "#whitespace tokens per KB", self.tokens_per_kb)?;
        writeln!(f, "{:<28} {:>10.1}", "#gold facts per question", self.gold_facts_per_question)?;
        for (t, n) in &self.per_theory {
            writeln!(f, "  {:<26} {:>10}", t, n)?;
        }
        Ok(())
    }
}
