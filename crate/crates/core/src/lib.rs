//! Synthetic multi-agent multi-hop QA benchmarks.
//!
//! Knowledge lives in per-question worlds, split across symbolic agents that
//! each answer a fixed question language. Complex questions are generated
//! from theories written in a small decomposition language; the [`executor`]
//! runs those programs, [`search`] recovers programs from answers alone and
//! [`eval`] scores predictions.

pub mod agents;
pub mod answer;
pub mod batch;
pub mod config;
pub mod dsl;
pub mod error;
pub mod eval;
pub mod executor;
pub mod generator;
pub mod io;
pub mod names;
pub mod rng;
pub mod search;
pub mod world;

pub use answer::Answer;
pub use error::{Error, Result};
