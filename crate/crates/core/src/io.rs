//! Line-delimited JSON files.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::DatasetRecipe;
use crate::error::Error;
use crate::generator::{Example, Split};
use crate::search::SearchResult;

pub fn read_jsonl<T: DeserializeOwned>(r: impl BufRead) -> Result<Vec<T>, Error> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Record {
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn read_jsonl_file<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, Error> {
    read_jsonl(BufReader::new(File::open(path)?))
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), Error> {
    let mut w = BufWriter::new(File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(|e| Error::Invalid(e.to_string()))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

/// Path of one split file: `<dir>/<dataset>_<split>.jsonl`.
pub fn split_path(dir: impl AsRef<Path>, dataset: &str, split: Split) -> PathBuf {
    dir.as_ref().join(format!("{}_{}.jsonl", dataset.to_lowercase(), split.name()))
}

/// Write examples grouped by split, each file in example index order.
/// Records are rendered in parallel chunks; the bytes do not depend on the
/// thread count.
pub fn write_dataset(dir: impl AsRef<Path>, recipe: &DatasetRecipe, examples: &[Example]) -> Result<Vec<PathBuf>, Error> {
    const CHUNK: usize = 512;
    std::fs::create_dir_all(dir.as_ref())?;
    let mut written = Vec::new();
    for split in [Split::Train, Split::Dev, Split::Test, Split::Cg] {
        let members: Vec<&Example> = examples.iter().filter(|e| e.split == split).collect();
        if members.is_empty() {
            continue;
        }
        let path = split_path(&dir, recipe.dataset(), split);
        let mut w = BufWriter::new(File::create(&path)?);
        for chunk in members.chunks(CHUNK) {
            let lines: Vec<String> = chunk
                .par_iter()
                .map(|e| serde_json::to_string(&e.record(recipe)).expect("record serializes"))
                .collect();
            for l in lines {
                w.write_all(l.as_bytes())?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Valid chains of one question in the decomposition language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    pub qid: String,
    pub calls: u64,
    pub budget_exhausted: bool,
    pub chains: Vec<String>,
}

impl From<&SearchResult> for ChainRecord {
    fn from(r: &SearchResult) -> Self {
        Self {
            qid: r.qid.clone(),
            calls: r.stats.calls,
            budget_exhausted: r.stats.budget_exhausted,
            chains: r.chains.iter().map(|c| c.program.render()).collect(),
        }
    }
}
