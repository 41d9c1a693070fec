//! Dataset recipes.
//!
//! A recipe is a single TOML document bundling the KB schema, the agents and
//! their question templates, the theories and the dataset/search settings.
//! See `recipes/README.md` for the grammar.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentSpec, Direction, MathOp, MathTemplate, Modality, QuestionTemplate, Registry, SLOT};
use crate::dsl::{self, DecompProgram};
use crate::error::{ConfigError, ConfigErrors, Error};
use crate::world::{EntityKind, EntityType, KbSchema, RelationDecl};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchDefaults {
    /// Maximum chain depth (o).
    pub max_depth: usize,
    /// Operations sampled per step (f).
    pub ops_per_step: usize,
    /// Questions kept per step (g).
    pub questions_per_step: usize,
    /// Agent-call budget per question.
    pub budget: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityTypeDecl {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pool: Option<[u32; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub numeric: Option<[i64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationFileDecl {
    pub name: String,
    pub subject: String,
    pub object: String,
    pub fan_out: [u32; 2],
    pub modalities: Vec<String>,
    pub forward: Vec<String>,
    pub reverse: Vec<String>,
    /// Modality name → rendering template.
    pub render: IndexMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MathDecl {
    pub op: MathOp,
    pub patterns: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentDecl {
    pub id: String,
    pub modality: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub math: Vec<MathDecl>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheoryDecl {
    pub id: String,
    pub question: String,
    pub program: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub cg_holdout: bool,
    /// Explicit entity types for `$j` slots that no knowledge template
    /// determines (e.g. numbers only compared by the math agent).
    #[serde(default, skip_serializing_if = "IndexMap::is_empty")]
    pub slots: IndexMap<String, String>,
}

/// The on-disk recipe document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecipeFile {
    pub dataset: String,
    pub size: usize,
    #[serde(default = "default_splits")]
    pub splits: [f64; 3],
    pub seed: u64,
    #[serde(default = "default_attempts")]
    pub max_attempts: usize,
    #[serde(default)]
    pub cg_size: usize,
    pub search: SearchDefaults,
    pub entity_types: Vec<EntityTypeDecl>,
    pub relations: Vec<RelationFileDecl>,
    pub agents: Vec<AgentDecl>,
    pub theories: Vec<TheoryDecl>,
}

fn default_splits() -> [f64; 3] {
    [0.8, 0.1, 0.1]
}

fn default_attempts() -> usize {
    1000
}

#[derive(Debug, Clone, PartialEq)]
pub struct TheorySpec {
    pub id: String,
    pub question: String,
    pub program: DecompProgram,
    pub cg_holdout: bool,
    /// `$j` → entity type.
    pub slot_types: BTreeMap<usize, String>,
}

/// A fully resolved recipe.
#[derive(Debug, Clone)]
pub struct DatasetRecipe {
    pub file: RecipeFile,
    pub schema: KbSchema,
    pub registry: Registry,
    pub theories: Vec<TheorySpec>,
}

/// Default search depth per dataset.
pub fn default_depth(dataset: &str) -> Option<usize> {
    match dataset {
        "E" => Some(3),
        "I" => Some(4),
        "N" => Some(7),
        _ => None,
    }
}

impl DatasetRecipe {
    pub fn dataset(&self) -> &str {
        &self.file.dataset
    }

    pub fn training_theories(&self) -> impl Iterator<Item = &TheorySpec> {
        self.theories.iter().filter(|t| !t.cg_holdout)
    }

    pub fn holdout_theories(&self) -> impl Iterator<Item = &TheorySpec> {
        self.theories.iter().filter(|t| t.cg_holdout)
    }

    pub fn theory(&self, id: &str) -> Option<&TheorySpec> {
        self.theories.iter().find(|t| t.id == id)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("recipe serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, Error> {
        let file: RecipeFile = toml::from_str(text).map_err(|e| ConfigErrors(vec![ConfigError::Other(e.to_string())]))?;
        Ok(resolve(file)?)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, Error> {
        let path = path.as_ref();
        let path = if path.is_dir() { path.join("recipe.toml") } else { path.to_path_buf() };
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// One of the shipped recipes: `E`, `I` or `N`.
    pub fn builtin(name: &str) -> Option<Self> {
        builtin_source(name).map(|s| Self::from_toml(s).expect("shipped recipe validates"))
    }
}

pub fn builtin_source(name: &str) -> Option<&'static str> {
    match name.to_ascii_uppercase().as_str() {
        "E" => Some(include_str!("../recipes/e.toml")),
        "I" => Some(include_str!("../recipes/i.toml")),
        "N" => Some(include_str!("../recipes/n.toml")),
        _ => None,
    }
}

/// Load and validate a recipe path, or a builtin name.
pub fn load_and_validate(path: &str) -> Result<DatasetRecipe, Error> {
    if let Some(r) = DatasetRecipe::builtin(path).filter(|_| !Path::new(path).exists()) {
        return Ok(r);
    }
    DatasetRecipe::load(path)
}

/// Build schema, registry and theories, collecting every violation.
pub fn resolve(file: RecipeFile) -> Result<DatasetRecipe, ConfigErrors> {
    let mut errs = Vec::new();

    let mut entity_types = Vec::new();
    for t in &file.entity_types {
        let kind = match (t.pool, t.numeric) {
            (Some([lo, hi]), None) => EntityKind::Named { pool: (lo, hi) },
            (None, Some([lo, hi])) => EntityKind::Numeric { min: lo, max: hi },
            _ => {
                errs.push(ConfigError::Other(format!(
                    "entity type `{}` needs exactly one of `pool` or `numeric`",
                    t.name
                )));
                continue;
            }
        };
        entity_types.push(EntityType {
            name: t.name.clone(),
            kind,
        });
    }

    let mut relations = Vec::new();
    for r in &file.relations {
        let mut modalities = Vec::new();
        for m in &r.modalities {
            match m.parse::<Modality>() {
                Ok(m) => modalities.push(m),
                Err(e) => errs.push(e),
            }
        }
        let mut render = IndexMap::new();
        for (m, tpl) in &r.render {
            match m.parse::<Modality>() {
                Ok(m) => {
                    render.insert(m, tpl.clone());
                }
                Err(e) => errs.push(e),
            }
        }
        relations.push(RelationDecl {
            name: r.name.clone(),
            subject: r.subject.clone(),
            object: r.object.clone(),
            modalities,
            fan_out: (r.fan_out[0], r.fan_out[1]),
            render,
        });
    }
    let schema = KbSchema {
        entity_types,
        relations,
    };
    let schema_errs = schema.validate();
    let schema_ok = schema_errs.is_empty();
    errs.extend(schema_errs);

    let mut agents = Vec::new();
    let mut seen_ids = BTreeSet::new();
    for a in &file.agents {
        if !seen_ids.insert(a.id.clone()) {
            errs.push(ConfigError::Other(format!("duplicate agent `{}`", a.id)));
        }
        let modality = match a.modality.parse::<Modality>() {
            Ok(m) => m,
            Err(e) => {
                errs.push(e);
                continue;
            }
        };
        let mut templates = Vec::new();
        if schema_ok {
            for (r, decl) in schema.relations.iter().zip(&file.relations) {
                if !r.modalities.contains(&modality) {
                    continue;
                }
                for (dir, patterns) in [(Direction::Forward, &decl.forward), (Direction::Reverse, &decl.reverse)] {
                    if patterns.is_empty() {
                        errs.push(ConfigError::Other(format!(
                            "relation `{}` has no {:?} template",
                            r.name, dir
                        )));
                        continue;
                    }
                    match QuestionTemplate::new(&a.id, &schema, &r.name, dir, patterns.clone()) {
                        Ok(t) => templates.push(t),
                        Err(e) => errs.push(e),
                    }
                }
            }
        }
        let mut math = Vec::new();
        for m in &a.math {
            if modality != Modality::Math {
                errs.push(ConfigError::Other(format!("agent `{}` is not a math agent", a.id)));
            }
            match MathTemplate::new(m.op, m.patterns.clone()) {
                Ok(t) => math.push(t),
                Err(e) => errs.push(e),
            }
        }
        let spec = AgentSpec {
            id: a.id.clone(),
            modality,
            templates,
            math,
        };
        errs.extend(spec.check_unambiguous());
        agents.push(spec);
    }
    for r in &schema.relations {
        for m in &r.modalities {
            if !agents.iter().any(|a| a.modality == *m) {
                errs.push(ConfigError::Other(format!(
                    "relation `{}` names modality `{m}` but no agent has it",
                    r.name
                )));
            }
        }
    }
    let registry = Registry::new(agents);

    let mut theories = Vec::new();
    let mut theory_ids = BTreeSet::new();
    for t in &file.theories {
        if !theory_ids.insert(t.id.clone()) {
            errs.push(ConfigError::Other(format!("duplicate theory `{}`", t.id)));
        }
        match resolve_theory(t, &schema, &registry) {
            Ok(spec) => theories.push(spec),
            Err(e) => errs.extend(e),
        }
    }

    // Counted from the declarations so balance is checked even when a theory is broken.
    let training = file.theories.iter().filter(|t| !t.cg_holdout).count();
    if training == 0 {
        errs.push(ConfigError::Other("recipe has no training theories".into()));
    } else if !file.size.is_multiple_of(training) {
        errs.push(ConfigError::UnbalancedSize {
            size: file.size,
            theories: training,
        });
    }
    let holdouts = file.theories.len() - training;
    if holdouts > 0 && !file.cg_size.is_multiple_of(holdouts) {
        errs.push(ConfigError::UnbalancedSize {
            size: file.cg_size,
            theories: holdouts,
        });
    }
    let s = file.splits;
    if s.iter().any(|x| *x < 0.0) || (s.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        errs.push(ConfigError::BadSplits);
    }
    if file.search.max_depth == 0 || file.search.ops_per_step == 0 || file.search.questions_per_step == 0 {
        errs.push(ConfigError::Other("search parameters must be positive".into()));
    }
    if errs.is_empty() && holdouts > 0 {
        errs.extend(crate::generator::verify_cg_theories(
            theories.iter().filter(|t| !t.cg_holdout),
            theories.iter().filter(|t| t.cg_holdout),
        ));
    }

    if errs.is_empty() {
        Ok(DatasetRecipe {
            file,
            schema,
            registry,
            theories,
        })
    } else {
        Err(ConfigErrors(errs))
    }
}

fn resolve_theory(t: &TheoryDecl, schema: &KbSchema, registry: &Registry) -> Result<TheorySpec, Vec<ConfigError>> {
    let terr = |reason: String| ConfigError::Theory {
        theory: t.id.clone(),
        reason,
    };
    let program = dsl::parse_program_for(&t.program, registry).map_err(|e| vec![terr(e.to_string())])?;
    let mut errs = Vec::new();
    let q_slots = dsl::grounding_slots(&t.question);
    let p_slots = program.grounding_slots();
    if q_slots != p_slots {
        errs.push(terr(format!(
            "question slots {q_slots:?} differ from program slots {p_slots:?}"
        )));
    }
    let mut slot_types: BTreeMap<usize, String> = BTreeMap::new();
    for (k, ty) in &t.slots {
        match k.strip_prefix('$').and_then(|j| j.parse::<usize>().ok()) {
            Some(j) if schema.entity_type(ty).is_some() => {
                slot_types.insert(j, ty.clone());
            }
            Some(_) => errs.push(ConfigError::UnknownEntityType(ty.clone())),
            None => errs.push(terr(format!("bad slot name `{k}`"))),
        }
    }
    for step in &program.steps {
        let agent = registry.get(&step.agent).expect("checked by parser");
        if agent.modality == Modality::Math {
            continue;
        }
        // Each `$j` in a knowledge question fixes the slot type.
        let probe = step.question.clone();
        let Some(template) = registry.match_relation(&probe) else {
            errs.push(terr(format!(
                "step #{} question `{}` matches no knowledge template",
                step.index, step.question
            )));
            continue;
        };
        if !template.patterns.iter().any(|p| p.contains(SLOT)) {
            continue;
        }
        if let Some(slot) = template.match_slot(&crate::agents::normalize_question(&probe)) {
            if let Some(j) = slot.strip_prefix('$').and_then(|j| j.parse::<usize>().ok()) {
                match slot_types.get(&j) {
                    Some(ty) if *ty != template.slot_type => errs.push(terr(format!(
                        "slot ${j} used as both `{ty}` and `{}`",
                        template.slot_type
                    ))),
                    _ => {
                        slot_types.insert(j, template.slot_type.clone());
                    }
                }
            }
        }
    }
    for j in &p_slots {
        if !slot_types.contains_key(j) {
            errs.push(terr(format!("cannot infer the entity type of ${j}")));
        }
    }
    if errs.is_empty() {
        Ok(TheorySpec {
            id: t.id.clone(),
            question: t.question.clone(),
            program,
            cg_holdout: t.cg_holdout,
            slot_types,
        })
    } else {
        Err(errs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn file(name: &str) -> RecipeFile {
        toml::from_str(builtin_source(name).unwrap()).unwrap()
    }

    #[test]
    fn shipped_recipes_resolve() {
        for (name, types, rels) in [("E", 7, 11), ("I", 13, 16), ("N", 5, 4)] {
            let r = DatasetRecipe::builtin(name).unwrap();
            assert_eq!(r.dataset(), name);
            assert_eq!(r.schema.entity_types.len(), types);
            assert_eq!(r.schema.relations.len(), rels);
            assert_eq!(r.training_theories().count(), 6);
            assert_eq!(default_depth(name), Some(r.file.search.max_depth));
        }
        assert!(DatasetRecipe::builtin("x").is_none());
    }

    #[test]
    fn toml_round_trip() {
        let r = DatasetRecipe::builtin("N").unwrap();
        let again = DatasetRecipe::from_toml(&r.to_toml()).unwrap();
        assert_eq!(again.to_toml(), r.to_toml());
        assert_eq!(again.theories, r.theories);
    }

    #[test]
    fn every_violation_is_reported() {
        let mut f = file("E");
        f.size = 7;
        f.splits = [0.5, 0.5, 0.5];
        f.relations[0].subject = "alien".into();
        f.theories[0].program = "#1 = (select) [textqa] \"Who is $1?\"".into();
        let errs = resolve(f).unwrap_err().0;
        assert!(errs.contains(&ConfigError::UnbalancedSize { size: 7, theories: 6 }));
        assert!(errs.contains(&ConfigError::BadSplits));
        assert!(errs.contains(&ConfigError::UnknownEntityType("alien".into())));
        assert!(errs.len() >= 3);
    }

    #[test]
    fn bad_theory_is_named() {
        let mut f = file("E");
        f.theories[1].program = "#1 = (select) [textqa] \"What is the meaning of $1?\"".into();
        let errs = resolve(f).unwrap_err().0;
        assert!(errs.iter().any(|e| matches!(e, ConfigError::Theory { theory, .. } if theory == "E2")), "{errs:?}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let text = format!("bogus = 1\n{}", builtin_source("E").unwrap());
        assert!(DatasetRecipe::from_toml(&text).is_err());
    }

    #[test]
    fn loads_files_directories_and_names() {
        let dir = std::env::temp_dir().join(format!("agentqa-config-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        std::fs::write(dir.join("recipe.toml"), builtin_source("I").unwrap()).unwrap();
        assert_eq!(DatasetRecipe::load(&dir).unwrap().dataset(), "I");
        assert_eq!(DatasetRecipe::load(dir.join("recipe.toml")).unwrap().dataset(), "I");
        assert_eq!(load_and_validate("n").unwrap().dataset(), "N");
        assert!(load_and_validate(dir.join("missing.toml").to_str().unwrap()).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
