//! KB schemas and per-question possible worlds.

use std::collections::HashSet;

use indexmap::IndexMap;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{Modality, Registry};
use crate::answer::format_number;
use crate::error::ConfigError;
use crate::names::NameGenerator;
use crate::rng::rng_for;

/// How instances of an entity type are produced in a world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum EntityKind {
    /// Nonsense names; the pool size is drawn uniformly from `[min, max]`.
    Named { pool: (u32, u32) },
    /// Integer literals drawn uniformly from `[min, max]` per fact.
    Numeric { min: i64, max: i64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityType {
    pub name: String,
    pub kind: EntityKind,
}

impl EntityType {
    pub fn is_numeric(&self) -> bool {
        matches!(self.kind, EntityKind::Numeric { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationDecl {
    pub name: String,
    pub subject: String,
    pub object: String,
    pub modalities: Vec<Modality>,
    /// Objects per subject, uniform over the inclusive range.
    pub fan_out: (u32, u32),
    /// Rendering template per modality with `{subject}` and `{object}` holes.
    pub render: IndexMap<Modality, String>,
}

impl RelationDecl {
    pub fn is_functional(&self) -> bool {
        self.fan_out == (1, 1)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KbSchema {
    pub entity_types: Vec<EntityType>,
    pub relations: Vec<RelationDecl>,
}

impl KbSchema {
    pub fn entity_type(&self, name: &str) -> Option<&EntityType> {
        self.entity_types.iter().find(|t| t.name == name)
    }

    pub fn relation(&self, name: &str) -> Option<&RelationDecl> {
        self.relations.iter().find(|r| r.name == name)
    }

    pub fn validate(&self) -> Vec<ConfigError> {
        let mut errs = Vec::new();
        for t in &self.entity_types {
            match t.kind {
                EntityKind::Named { pool: (lo, hi) } if lo < 1 || hi < lo => {
                    errs.push(ConfigError::BadRange {
                        what: format!("pool of {}", t.name),
                        min: lo.into(),
                        max: hi.into(),
                    })
                }
                EntityKind::Numeric { min, max } if max < min => errs.push(ConfigError::BadRange {
                    what: format!("values of {}", t.name),
                    min,
                    max,
                }),
                _ => {}
            }
        }
        for r in &self.relations {
            match self.entity_type(&r.subject) {
                None => errs.push(ConfigError::UnknownEntityType(r.subject.clone())),
                Some(t) if t.is_numeric() => errs.push(ConfigError::Other(format!(
                    "relation `{}` has numeric subject type",
                    r.name
                ))),
                _ => {}
            }
            if self.entity_type(&r.object).is_none() {
                errs.push(ConfigError::UnknownEntityType(r.object.clone()));
            }
            if r.modalities.is_empty() {
                errs.push(ConfigError::NoModality {
                    relation: r.name.clone(),
                });
            }
            if r.fan_out.1 < r.fan_out.0 {
                errs.push(ConfigError::BadRange {
                    what: format!("fan-out of {}", r.name),
                    min: r.fan_out.0.into(),
                    max: r.fan_out.1.into(),
                });
            }
            for m in &r.modalities {
                if !r.render.contains_key(m) {
                    errs.push(ConfigError::MissingRendering {
                        relation: r.name.clone(),
                        modality: m.to_string(),
                    });
                }
            }
        }
        errs
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fact {
    pub relation: String,
    pub subject: String,
    pub object: String,
}

impl Fact {
    pub fn new(relation: &str, subject: &str, object: &str) -> Self {
        Self {
            relation: relation.into(),
            subject: subject.into(),
            object: object.into(),
        }
    }
}

/// One sampled possible world.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub world_id: String,
    pub seed: u64,
    /// Entities per type in sampling order. Numeric types list the distinct
    /// values that occur in facts, in order of first appearance.
    pub entities: IndexMap<String, Vec<String>>,
    pub facts: Vec<Fact>,
    /// Relation name to the id of the only agent that answers about it.
    pub assignment: IndexMap<String, String>,
}

impl World {
    pub fn has_entity(&self, ty: &str, name: &str) -> bool {
        self.entities
            .get(ty)
            .is_some_and(|v| v.iter().any(|e| e == name))
    }

    /// Same entities and assignment, facts replaced by `facts`.
    pub fn restricted(&self, facts: &[Fact]) -> World {
        World {
            facts: facts.to_vec(),
            ..self.clone()
        }
    }

    /// Type of a named entity, if any.
    pub fn type_of(&self, name: &str) -> Option<&str> {
        self.entities
            .iter()
            .find(|(_, v)| v.iter().any(|e| e == name))
            .map(|(k, _)| k.as_str())
    }
}

/// Sample a world: entity pools, relation instances and relation-to-agent
/// assignment, all as a pure function of `(schema, agents, seed)`.
pub fn sample_world(schema: &KbSchema, agents: &Registry, seed: u64) -> Result<World, ConfigError> {
    let mut rng = rng_for(seed, &[1]);
    let mut names = NameGenerator::new(crate::rng::derive_seed(seed, &[2]));
    let mut entities: IndexMap<String, Vec<String>> = IndexMap::new();
    for t in &schema.entity_types {
        let list = match t.kind {
            EntityKind::Named { pool: (lo, hi) } => names.take(rng.gen_range(lo..=hi) as usize),
            EntityKind::Numeric { .. } => Vec::new(),
        };
        entities.insert(t.name.clone(), list);
    }

    let mut facts = Vec::new();
    for r in &schema.relations {
        let obj_ty = schema
            .entity_type(&r.object)
            .ok_or_else(|| ConfigError::UnknownEntityType(r.object.clone()))?;
        let subjects = entities
            .get(&r.subject)
            .cloned()
            .ok_or_else(|| ConfigError::UnknownEntityType(r.subject.clone()))?;
        for s in &subjects {
            let k = rng.gen_range(r.fan_out.0..=r.fan_out.1) as usize;
            match obj_ty.kind {
                EntityKind::Numeric { min, max } => {
                    let mut seen = HashSet::new();
                    let span = (max - min + 1) as usize;
                    while seen.len() < k.min(span) {
                        let v = rng.gen_range(min..=max);
                        if seen.insert(v) {
                            facts.push(Fact::new(&r.name, s, &format_number(v as f64)));
                        }
                    }
                }
                EntityKind::Named { .. } => {
                    let pool: Vec<&String> = entities[&r.object]
                        .iter()
                        .filter(|o| *o != s)
                        .collect();
                    let k = k.min(pool.len());
                    for i in sample(&mut rng, pool.len(), k).iter() {
                        facts.push(Fact::new(&r.name, s, pool[i]));
                    }
                }
            }
        }
    }
    for t in schema.entity_types.iter().filter(|t| t.is_numeric()) {
        let mut seen = HashSet::new();
        let mut vals = Vec::new();
        for f in &facts {
            if schema.relation(&f.relation).is_some_and(|r| r.object == t.name) && seen.insert(&f.object) {
                vals.push(f.object.clone());
            }
        }
        entities.insert(t.name.clone(), vals);
    }

    let mut assignment = IndexMap::new();
    for r in &schema.relations {
        let candidates: Vec<&str> = agents
            .agents()
            .filter(|a| r.modalities.contains(&a.modality))
            .map(|a| a.id.as_str())
            .collect();
        if candidates.is_empty() {
            return Err(ConfigError::NoModality {
                relation: r.name.clone(),
            });
        }
        let pick = candidates[rng.gen_range(0..candidates.len())];
        assignment.insert(r.name.clone(), pick.to_string());
    }

    Ok(World {
        world_id: format!("w{seed:016x}"),
        seed,
        entities,
        facts,
        assignment,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerbalizedFact {
    pub agent: String,
    pub text: String,
    pub fact: Fact,
}

pub fn render_fact(template: &str, fact: &Fact) -> String {
    template
        .replace("{subject}", &fact.subject)
        .replace("{object}", &fact.object)
}

/// Render one fact with the template of its assigned agent's modality.
pub fn verbalize_fact(
    schema: &KbSchema,
    agents: &Registry,
    world: &World,
    fact: &Fact,
) -> Result<VerbalizedFact, ConfigError> {
    let rel = schema
        .relation(&fact.relation)
        .ok_or_else(|| ConfigError::UnknownRelation(fact.relation.clone()))?;
    let agent_id = world
        .assignment
        .get(&fact.relation)
        .ok_or_else(|| ConfigError::UnknownRelation(fact.relation.clone()))?;
    let agent = agents
        .get(agent_id)
        .ok_or_else(|| ConfigError::UnknownAgent(agent_id.clone()))?;
    let template = rel
        .render
        .get(&agent.modality)
        .ok_or_else(|| ConfigError::MissingRendering {
            relation: rel.name.clone(),
            modality: agent.modality.to_string(),
        })?;
    Ok(VerbalizedFact {
        agent: agent_id.clone(),
        text: render_fact(template, fact),
        fact: fact.clone(),
    })
}

/// Verbalize every fact, routed to its assigned agent. Every knowledge agent
/// gets an entry, possibly empty.
pub fn verbalize(
    schema: &KbSchema,
    agents: &Registry,
    world: &World,
) -> Result<IndexMap<String, Vec<VerbalizedFact>>, ConfigError> {
    let mut out: IndexMap<String, Vec<VerbalizedFact>> = agents
        .agents()
        .filter(|a| a.modality != Modality::Math)
        .map(|a| (a.id.clone(), Vec::new()))
        .collect();
    for f in &world.facts {
        let v = verbalize_fact(schema, agents, world, f)?;
        out.entry(v.agent.clone()).or_default().push(v);
    }
    Ok(out)
}
