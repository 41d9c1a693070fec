use std::path::{Path, PathBuf};
use std::process::ExitCode;

use agentqa::batch::{self, Outcome};
use agentqa::config::{load_and_validate, resolve, DatasetRecipe};
use agentqa::eval::{evaluate, GoldRow, Prediction};
use agentqa::generator::{build_cg_split, build_dataset, dataset_stats, record_stats, ExampleRecord, GenParams};
use agentqa::io::{read_jsonl_file, write_dataset, write_jsonl, ChainRecord};
use agentqa::search::{aggregate_cost_accuracy, recipe_pool, search_chains, subsample, SearchParams, SearchResult};
use agentqa::Error;
use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use sha2::{Digest, Sha256};

#[derive(Parser)]
#[command(name = "agentqa", version, about = "Multi-agent multi-hop QA benchmark toolkit")]
struct Cli {
    /// Worker threads; output does not depend on it.
    #[arg(long, global = true, env = "AGENTQA_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate train/dev/test (and optionally CG) files plus a stats report.
    Generate(GenerateArgs),
    /// Run gold or user programs over a dataset file.
    Execute(ExecuteArgs),
    /// Search for decompositions from answers alone.
    Search(SearchArgs),
    /// Score predictions against a dataset file.
    Evaluate(EvaluateArgs),
    /// Dataset statistics of generated files.
    Stats(StatsArgs),
    /// Check a recipe and summarize it.
    Validate(ValidateArgs),
}

#[derive(Args)]
struct RecipeArg {
    /// Recipe file or directory, or a shipped recipe name (E, I, N).
    #[arg(long)]
    recipe: String,
}

#[derive(Args)]
struct OutArg {
    #[arg(long, env = "AGENTQA_OUT_DIR", default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[command(flatten)]
    recipe: RecipeArg,
    #[command(flatten)]
    out: OutArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    /// Also write the compositional-generalization split.
    #[arg(long)]
    cg: bool,
    #[arg(long)]
    cg_size: Option<usize>,
    #[arg(long)]
    max_attempts: Option<usize>,
}

#[derive(Args)]
struct ExecuteArgs {
    #[command(flatten)]
    recipe: RecipeArg,
    #[command(flatten)]
    out: OutArg,
    /// Dataset file (line-delimited JSON).
    #[arg(long)]
    data: PathBuf,
    /// Replay each record's gold decomposition.
    #[arg(long, conflicts_with = "programs")]
    gold: bool,
    /// Programs keyed by qid (`program` or `chains` field).
    #[arg(long, required_unless_present = "gold")]
    programs: Option<PathBuf>,
}

#[derive(Args)]
struct SearchArgs {
    #[command(flatten)]
    recipe: RecipeArg,
    #[command(flatten)]
    out: OutArg,
    #[arg(long)]
    data: PathBuf,
    /// Search a seeded sample of this many questions.
    #[arg(long)]
    sample: Option<usize>,
    /// Operations per step.
    #[arg(long)]
    f: Option<usize>,
    /// Questions per step.
    #[arg(long)]
    g: Option<usize>,
    /// Maximum depth.
    #[arg(long)]
    o: Option<usize>,
    /// Agent calls per question.
    #[arg(long)]
    budget: Option<u64>,
    /// Budgets reported in the cost table (default: budget/10, budget/2, budget).
    #[arg(long, value_delimiter = ',')]
    budgets: Vec<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 8)]
    pool_worlds: usize,
    #[arg(long, default_value_t = 200)]
    pool_per_agent: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    predictions: PathBuf,
    /// Dataset file with gold answers.
    #[arg(long)]
    data: PathBuf,
    /// Dataset label (default: qid prefix).
    #[arg(long)]
    dataset: Option<String>,
    /// Write the report as JSON here.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[command(flatten)]
    recipe: RecipeArg,
    /// Dataset files to pool.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    recipe: RecipeArg,
    /// Print every agent's accepted patterns as JSON.
    #[arg(long)]
    dump_templates: bool,
}

fn recipe_source(arg: &str) -> Result<String> {
    let path = Path::new(arg);
    if path.exists() {
        let file = if path.is_dir() { path.join("recipe.toml") } else { path.to_path_buf() };
        return std::fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()));
    }
    agentqa::config::builtin_source(arg)
        .map(String::from)
        .ok_or_else(|| Error::Invalid(format!("no recipe at `{arg}`")).into())
}

/// Load a recipe and log its identity.
fn load(arg: &str, seed: Option<u64>) -> Result<DatasetRecipe> {
    let source = recipe_source(arg)?;
    let recipe = load_and_validate(arg)?;
    let digest = Sha256::digest(source.as_bytes());
    let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
    eprintln!(
        "recipe={} dataset={} seed={} recipe_sha256={hex}",
        arg,
        recipe.dataset(),
        seed.unwrap_or(recipe.file.seed)
    );
    Ok(recipe)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn file_stem(path: &Path) -> String {
    path.file_stem().map_or("data".into(), |s| s.to_string_lossy().into_owned())
}

fn generate(a: GenerateArgs) -> Result<()> {
    let mut recipe = load(&a.recipe.recipe, a.seed)?;
    if a.seed.is_some() || a.size.is_some() || a.cg_size.is_some() || a.max_attempts.is_some() {
        let mut file = recipe.file.clone();
        file.seed = a.seed.unwrap_or(file.seed);
        file.size = a.size.unwrap_or(file.size);
        file.cg_size = a.cg_size.unwrap_or(file.cg_size);
        file.max_attempts = a.max_attempts.unwrap_or(file.max_attempts);
        recipe = resolve(file).map_err(Error::from)?;
    }
    let out = &a.out.out;
    std::fs::create_dir_all(out)?;
    let started = std::time::Instant::now();
    let params = GenParams::from_recipe(&recipe);
    let examples = build_dataset(&recipe, params)?;
    let mut written = write_dataset(out, &recipe, &examples)?;
    let stats = dataset_stats(&recipe, &examples);
    let ds = recipe.dataset().to_lowercase();
    write_json(&out.join(format!("{ds}_stats.json")), &stats)?;
    write_text(&out.join(format!("{ds}_stats.txt")), &stats.to_string())?;
    if a.cg && recipe.holdout_theories().next().is_none() {
        eprintln!("recipe has no held-out theories; skipping the CG split");
    } else if a.cg {
        let cg = build_cg_split(
            &recipe,
            GenParams {
                size: recipe.file.cg_size,
                ..params
            },
        )?;
        written.extend(write_dataset(out, &recipe, &cg)?);
    }
    print!("{stats}");
    for p in &written {
        eprintln!("wrote {}", p.display());
    }
    eprintln!("generated in {:.1}s", started.elapsed().as_secs_f64());
    Ok(())
}

fn execute(a: ExecuteArgs) -> Result<()> {
    let recipe = load(&a.recipe.recipe, None)?;
    let records: Vec<ExampleRecord> = read_jsonl_file(&a.data)?;
    let outcomes: Vec<Outcome> = if a.gold {
        batch::replay_gold(&recipe, &records)
    } else {
        let path = a.programs.as_ref().expect("clap requires programs without --gold");
        let programs = batch::read_programs_file(path)?;
        for (qid, why) in &programs.malformed {
            eprintln!("malformed program for {qid}: {why}");
        }
        batch::run_programs(&recipe, &records, &programs)
    };
    let out = &a.out.out;
    std::fs::create_dir_all(out)?;
    let stem = file_stem(&a.data);
    let preds: Vec<Prediction> = outcomes.iter().filter_map(Outcome::prediction).collect();
    write_jsonl(out.join(format!("{stem}.predictions.jsonl")), &preds)?;
    write_jsonl(out.join(format!("{stem}.outcomes.jsonl")), &outcomes)?;
    let summary = batch::summarize(&outcomes);
    write_json(&out.join(format!("{stem}.trace_summary.json")), &summary)?;
    let gold: Vec<GoldRow> = records
        .iter()
        .map(|r| GoldRow {
            qid: r.qid.clone(),
            theory_id: r.theory_id.clone(),
            answers: r.answers.clone(),
        })
        .collect();
    let report = evaluate(recipe.dataset(), &gold, &preds)?;
    println!(
        "questions {}  answered {}  failed {}  unanswered {}  calls {}",
        summary.questions, summary.answered, summary.failed, summary.unanswered, summary.calls
    );
    print!("{report}");
    Ok(())
}

fn search(a: SearchArgs) -> Result<()> {
    let recipe = load(&a.recipe.recipe, a.seed)?;
    let mut params = SearchParams::from_recipe(&recipe);
    params.f = a.f.unwrap_or(params.f);
    params.g = a.g.unwrap_or(params.g);
    params.o = a.o.unwrap_or(params.o);
    params.budget = a.budget.unwrap_or(params.budget);
    params.seed = a.seed.unwrap_or(params.seed);
    if params.f == 0 || params.g == 0 || params.o == 0 {
        return Err(Error::Invalid("f, g and o must be positive".into()).into());
    }
    let mut records: Vec<ExampleRecord> = read_jsonl_file(&a.data)?;
    if let Some(k) = a.sample {
        let keep = subsample(records.len(), k, params.seed);
        records = keep.into_iter().map(|i| records[i].clone()).collect();
    }
    let pool = recipe_pool(&recipe, params.seed, a.pool_worlds, a.pool_per_agent);
    let results: Vec<SearchResult> = records
        .par_iter()
        .map(|r| {
            let world = r.world();
            let agents = recipe.registry.bind(&world);
            let entities: Vec<String> = r.grounding.values().cloned().collect();
            search_chains(&r.qid, &r.question, &entities, &r.answers, &pool, &agents, &params)
        })
        .collect();
    let budgets = if a.budgets.is_empty() {
        vec![(params.budget / 10).max(1), (params.budget / 2).max(1), params.budget]
    } else {
        a.budgets.clone()
    };
    if let Some(b) = budgets.iter().find(|&&b| b > params.budget) {
        return Err(Error::Invalid(format!("reported budget {b} exceeds the search budget {}", params.budget)).into());
    }
    let table = aggregate_cost_accuracy(&results, &budgets);
    let out = &a.out.out;
    std::fs::create_dir_all(out)?;
    let stem = file_stem(&a.data);
    let chains: Vec<ChainRecord> = results.iter().map(ChainRecord::from).collect();
    write_jsonl(out.join(format!("{stem}.chains.jsonl")), &chains)?;
    let mut text = format!(
        "dataset {}  f {}  g {}  l {}  o {}\n{:>8} {:>10} {:>6} {:>8} {:>9}\n",
        recipe.dataset(),
        params.f,
        params.g,
        params.l(),
        params.o,
        "budget",
        "calls",
        "qs",
        "covered",
        "coverage"
    );
    for p in &table {
        text += &format!(
            "{:>8} {:>10} {:>6} {:>8} {:>8.1}%{}\n",
            p.budget,
            p.total_calls,
            p.questions,
            p.covered,
            100.0 * p.coverage,
            if p.partial { "  partial" } else { "" }
        );
    }
    write_text(&out.join(format!("{stem}.cost.txt")), &text)?;
    write_json(&out.join(format!("{stem}.cost.json")), &table)?;
    print!("{text}");
    Ok(())
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let preds: Vec<Prediction> = read_jsonl_file(&a.predictions)?;
    let gold: Vec<GoldRow> = read_jsonl_file(&a.data)?;
    let dataset = a.dataset.unwrap_or_else(|| {
        gold.first()
            .and_then(|g| g.qid.split('-').next())
            .unwrap_or("?")
            .to_string()
    });
    let report = evaluate(&dataset, &gold, &preds)?;
    if let Some(p) = &a.report {
        write_json(p, &report)?;
    }
    print!("{report}");
    Ok(())
}

fn stats(a: StatsArgs) -> Result<()> {
    let recipe = load(&a.recipe.recipe, None)?;
    let mut records: Vec<ExampleRecord> = Vec::new();
    for p in &a.data {
        records.extend(read_jsonl_file::<ExampleRecord>(p)?);
    }
    let stats = record_stats(&recipe, &records);
    if let Some(p) = &a.report {
        write_json(p, &stats)?;
    }
    print!("{stats}");
    Ok(())
}

fn validate(a: ValidateArgs) -> Result<()> {
    let recipe = load(&a.recipe.recipe, None)?;
    if a.dump_templates {
        println!("{}", serde_json::to_string_pretty(&recipe.registry.dump())?);
        return Ok(());
    }
    println!(
        "ok: dataset {}  entity types {}  relations {}  agents {}  templates {}  theories {} ({} held out)",
        recipe.dataset(),
        recipe.schema.entity_types.len(),
        recipe.schema.relations.len(),
        recipe.registry.agents().count(),
        recipe.registry.template_count(),
        recipe.training_theories().count(),
        recipe.holdout_theories().count()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(a) => generate(a),
        Command::Execute(a) => execute(a),
        Command::Search(a) => search(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Stats(a) => stats(a),
        Command::Validate(a) => validate(a),
    }
}

/// 1 for bad input (recipes, programs, records), 2 for everything else.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Parse(_) | Error::Record { .. } | Error::Invalid(_)) => 1,
        _ => 2,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = cli.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| run(cli)),
        Err(e) => Err(e.into()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
