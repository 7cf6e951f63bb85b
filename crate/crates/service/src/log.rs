//! Append-only JSON-lines conversation log.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use chatir_core::dialogue::{Source, Timings};
use chatir_core::emotion::EmotionLabel;
use chatir_core::safety::SafetyVerdict;
use chatir_core::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "lowercase")]
pub enum LogRecord {
    Session(SessionRecord),
    Turn(TurnRecord),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session: String,
    pub timestamp: u64,
}

/// One completed exchange. `safety` carries the full verdict so replay
/// restores the user turn exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    pub session: String,
    pub turn_index: usize,
    pub user_text: String,
    pub attachment: bool,
    pub response: String,
    pub source: Source,
    pub emotion: Option<EmotionLabel>,
    pub offensive: bool,
    pub safety: Option<SafetyVerdict>,
    pub timings: Timings,
    pub timestamp: u64,
}

/// Every write goes through one file handle behind a lock, and is flushed
/// before `append` returns.
#[derive(Debug)]
pub struct ConversationLog {
    path: PathBuf,
    file: Mutex<File>,
}

impl ConversationLog {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn append(&self, record: &LogRecord) -> Result<()> {
        let mut line = serde_json::to_vec(record)?;
        line.push(b'\n');
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)
            .and_then(|_| file.flush())
            .map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every record. A final line without a newline is an interrupted
/// write and is skipped; any other unparseable line is an error.
pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRecord>> {
    let path = path.as_ref();
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(Error::io(path, e)),
    };
    let mut reader = BufReader::new(file);
    let mut records = Vec::new();
    let mut line = String::new();
    let mut n = 0;
    loop {
        line.clear();
        let read = reader.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if read == 0 {
            break;
        }
        n += 1;
        if !line.ends_with('\n') {
            break;
        }
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| Error::InvalidRecord {
            line: n,
            reason: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(records)
}
