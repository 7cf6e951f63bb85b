//! Message/context/response pair records and their JSON-lines form.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::Utterance;

/// Maximum number of context utterances preceding a message.
pub const MAX_CONTEXT: usize = 2;

/// One indexed (message, context, response) pair.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairRecord {
    pub id: u32,
    pub message: Utterance,
    /// Oldest first.
    pub context: Vec<Utterance>,
    pub response: Utterance,
}

/// JSON-lines wire form of a [`PairRecord`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLine {
    pub id: u32,
    pub message: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub context: Vec<String>,
    pub response: String,
}

impl PairRecord {
    pub fn new(id: u32, message: &str, context: &[&str], response: &str) -> Self {
        Self {
            id,
            message: Utterance::new(message),
            context: context.iter().map(|c| Utterance::new(*c)).collect(),
            response: Utterance::new(response),
        }
    }

    pub fn to_line(&self) -> PairLine {
        PairLine {
            id: self.id,
            message: self.message.raw.clone(),
            context: self.context.iter().map(|c| c.raw.clone()).collect(),
            response: self.response.raw.clone(),
        }
    }

    /// Checks the per-record invariants (context length, non-empty response).
    fn validate(&self) -> std::result::Result<(), String> {
        if self.context.len() > MAX_CONTEXT {
            return Err(format!("{} context utterances (max {MAX_CONTEXT})", self.context.len()));
        }
        if self.response.normalized.is_empty() {
            return Err("response is empty after normalization".into());
        }
        Ok(())
    }
}

impl From<PairLine> for PairRecord {
    fn from(line: PairLine) -> Self {
        Self {
            id: line.id,
            message: Utterance::new(line.message),
            context: line.context.into_iter().map(Utterance::new).collect(),
            response: Utterance::new(line.response),
        }
    }
}

/// Checks that ids are dense from 0 in corpus order and every record is
/// well formed. Line numbers in errors are 1-based.
pub fn validate_corpus(records: &[PairRecord]) -> Result<()> {
    for (i, rec) in records.iter().enumerate() {
        if rec.id as usize != i {
            return Err(Error::InvalidRecord {
                line: i + 1,
                reason: format!("id {} out of order (expected {i})", rec.id),
            });
        }
        rec.validate()
            .map_err(|reason| Error::InvalidRecord { line: i + 1, reason })?;
    }
    Ok(())
}

pub fn read_pairs(path: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    let lines: Vec<PairLine> = read_jsonl(path)?;
    let records: Vec<PairRecord> = lines.into_iter().map(PairRecord::from).collect();
    validate_corpus(&records)?;
    Ok(records)
}

pub fn write_pairs(path: impl AsRef<Path>, records: &[PairRecord]) -> Result<()> {
    let lines: Vec<PairLine> = records.iter().map(PairRecord::to_line).collect();
    write_jsonl(path, &lines)
}

/// Reads a JSON-lines file, skipping blank lines.
pub fn read_jsonl<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<Vec<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            line: n + 1,
            reason: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item)?;
        buf.push(b'\n');
    }
    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}
