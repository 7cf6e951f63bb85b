use std::path::{Path, PathBuf};

use chatir_core::bundle::ModelSet;
use chatir_core::dialogue::{Engine, EngineConfig};
use chatir_core::emotion::{read_word_list, Lexicons};
use chatir_core::safety::{DodgePolicy, DEFAULT_THRESHOLD};
use chatir_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Service settings, read from a JSON file. Relative paths are resolved
/// against the file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    /// Directory holding the index artifact and the four checkpoints.
    pub models_dir: PathBuf,
    /// Directory with positive.txt, negative.txt, anger.txt; the built-in
    /// lists when absent.
    pub lexicon_dir: Option<PathBuf>,
    pub dodges_path: Option<PathBuf>,
    pub topics_path: Option<PathBuf>,
    pub log_path: PathBuf,
    pub fetch_k: usize,
    pub trace_n: usize,
    pub emotion_bonus: f64,
    pub threshold: f64,
    pub session_ttl_secs: u64,
    pub host: String,
    pub port: u16,
    pub debug_trace: bool,
    pub attachment_response: String,
    pub fallback_response: String,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        let engine = EngineConfig::default();
        Self {
            models_dir: "models".into(),
            lexicon_dir: None,
            dodges_path: None,
            topics_path: None,
            log_path: "conversations.jsonl".into(),
            fetch_k: engine.fetch_k,
            trace_n: engine.trace_n,
            emotion_bonus: engine.emotion_bonus,
            threshold: DEFAULT_THRESHOLD,
            session_ttl_secs: 24 * 60 * 60,
            host: "127.0.0.1".into(),
            port: 8080,
            debug_trace: false,
            attachment_response: engine.attachment_response,
            fallback_response: engine.fallback_response,
        }
    }
}

impl ServiceConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self = serde_json::from_str(&text)?;
        cfg.resolve(path.parent().unwrap_or(Path::new(".")));
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.models_dir);
        fix(&mut self.log_path);
        for p in [&mut self.lexicon_dir, &mut self.dodges_path, &mut self.topics_path]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            fetch_k: self.fetch_k,
            trace_n: self.trace_n,
            emotion_bonus: self.emotion_bonus,
            attachment_response: self.attachment_response.clone(),
            fallback_response: self.fallback_response.clone(),
        }
    }

    pub fn lexicons(&self) -> Result<Lexicons> {
        match &self.lexicon_dir {
            Some(dir) => Lexicons::load_dir(dir),
            None => Ok(Lexicons::builtin()),
        }
    }

    pub fn policy(&self) -> Result<DodgePolicy> {
        let builtin = DodgePolicy::builtin();
        let dodges = match &self.dodges_path {
            Some(p) => read_word_list(p)?,
            None => builtin.dodge_responses,
        };
        let topics = match &self.topics_path {
            Some(p) => read_word_list(p)?,
            None => builtin.sensitive_topics,
        };
        DodgePolicy::new(dodges, topics)
    }

    /// Loads every model and assembles the engine.
    pub fn load_engine(&self) -> Result<Engine> {
        ModelSet::load(&self.models_dir)?.into_engine(self.lexicons()?, self.policy()?, self.threshold, self.engine_config())
    }
}
