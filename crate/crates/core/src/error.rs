use thiserror::Error;

/// Errors raised while loading or validating recipes, schemas and templates.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("unknown entity type `{0}`")]
    UnknownEntityType(String),
    #[error("unknown relation `{0}`")]
    UnknownRelation(String),
    #[error("unknown agent `{0}`")]
    UnknownAgent(String),
    #[error("relation `{relation}` has no agents of an allowed modality")]
    NoModality { relation: String },
    #[error("relation `{relation}` has no rendering template for modality `{modality}`")]
    MissingRendering { relation: String, modality: String },
    #[error("invalid range for `{what}`: [{min}, {max}]")]
    BadRange { what: String, min: i64, max: i64 },
    #[error("template `{pattern}` must contain exactly {expected} slot(s)")]
    SlotCount { pattern: String, expected: usize },
    #[error("templates `{first}` and `{second}` of agent `{agent}` are ambiguous")]
    AmbiguousTemplates {
        agent: String,
        first: String,
        second: String,
    },
    #[error("theory `{theory}`: {reason}")]
    Theory { theory: String, reason: String },
    #[error("size {size} is not divisible by the {theories} theories")]
    UnbalancedSize { size: usize, theories: usize },
    #[error("split ratios must be three non-negative numbers summing to 1")]
    BadSplits,
    #[error("{0}")]
    Other(String),
}

/// A list of every violation found in one recipe.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{} configuration error(s): {}", .0.len(), join(.0))]
pub struct ConfigErrors(pub Vec<ConfigError>);

fn join(errs: &[ConfigError]) -> String {
    errs.iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

/// Errors produced by data-structure transformations and operators.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShapeError {
    #[error("`{op}` expects {expected}, got {found}")]
    Mismatch {
        op: String,
        expected: &'static str,
        found: &'static str,
    },
    #[error("answer reference #{0} is not available")]
    MissingRef(usize),
    #[error("question references several answers; operator must name one: {0}")]
    AmbiguousIteration(String),
    #[error("question has no answer reference to iterate over: {0}")]
    NothingToIterate(String),
    #[error("grounding slot ${0} is not bound")]
    UnboundSlot(usize),
}

/// Top-level error for the library's fallible entry points.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Parse(#[from] crate::dsl::ParseError),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("theory `{theory}` starved: no valid example after {attempts} attempts (example {index})")]
    Starvation {
        theory: String,
        index: usize,
        attempts: usize,
    },
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed record at line {line}: {reason}")]
    Record { line: usize, reason: String },
    #[error("{0}")]
    Invalid(String),
}

impl From<ConfigError> for Error {
    fn from(e: ConfigError) -> Self {
        Error::Config(ConfigErrors(vec![e]))
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
