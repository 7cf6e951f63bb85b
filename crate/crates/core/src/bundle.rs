//! On-disk model directory layout, engine loading, and a seeded bootstrap
//! that generates synthetic data and trains every model.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::corpus::{read_pairs, write_jsonl, write_pairs, PairRecord};
use crate::dialogue::{Engine, EngineConfig};
use crate::emotion::{train_emotion, EmotionConfig, EmotionExample, EmotionModel, Lexicons};
use crate::error::{Error, Result};
use crate::eval::{evaluate_emotion_set, evaluate_retrieval, evaluate_safety, EmotionMetrics, SafetyMetrics, DEFAULT_DISTRACTORS};
use crate::index::{build_index, InvertedIndex};
use crate::metrics::RetrievalMetrics;
use crate::ranker::{train_ranker, RankerConfig, RankerModel};
use crate::safety::{train_safety, DodgePolicy, OffensiveClassifier, SafetyConfig, SafetyExample, SafetyGate};
use crate::semantic::{train_semantic, CdssmEncoder, SemanticConfig};
use crate::synth;

pub const INDEX_FILE: &str = "index.json";
pub const SEMANTIC_FILE: &str = "semantic.ckpt";
pub const RANKER_FILE: &str = "ranker.ckpt";
pub const EMOTION_FILE: &str = "emotion.ckpt";
pub const SAFETY_FILE: &str = "safety.ckpt";

pub fn report_path(dir: &Path, model: &str) -> PathBuf {
    dir.join(format!("{model}_report.jsonl"))
}

/// Every trained artifact the engine needs.
#[derive(Debug, Clone)]
pub struct ModelSet {
    pub index: InvertedIndex,
    pub encoder: CdssmEncoder,
    pub ranker: RankerModel,
    pub emotion: EmotionModel,
    pub safety: OffensiveClassifier,
}

impl ModelSet {
    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Ok(Self {
            index: InvertedIndex::load(dir.join(INDEX_FILE))?,
            encoder: CdssmEncoder::load(dir.join(SEMANTIC_FILE))?,
            ranker: RankerModel::load(dir.join(RANKER_FILE))?,
            emotion: EmotionModel::load(dir.join(EMOTION_FILE))?,
            safety: OffensiveClassifier::load(dir.join(SAFETY_FILE))?,
        })
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        create_dir(dir)?;
        self.index.save(dir.join(INDEX_FILE))?;
        self.encoder.save(dir.join(SEMANTIC_FILE))?;
        self.ranker.save(dir.join(RANKER_FILE))?;
        self.emotion.save(dir.join(EMOTION_FILE))?;
        self.safety.save(dir.join(SAFETY_FILE))
    }

    pub fn into_engine(
        self,
        lexicons: Lexicons,
        policy: DodgePolicy,
        threshold: f64,
        config: EngineConfig,
    ) -> Result<Engine> {
        let gate = SafetyGate::new(self.safety, policy, threshold)?;
        Engine::new(self.index, self.encoder, self.ranker, self.emotion, lexicons, gate, config)
    }
}

pub fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    pub seed: u64,
    /// Pairs for the encoder and the index.
    pub train_pairs: usize,
    /// Separate pairs for the ranker, unseen by the encoder.
    pub ranker_pairs: usize,
    pub heldout_pairs: usize,
    pub emotion_train: usize,
    pub emotion_heldout: usize,
    pub safety_train: usize,
    pub safety_heldout_offensive: usize,
    pub safety_heldout_clean: usize,
    pub semantic: SemanticConfig,
    pub ranker: RankerConfig,
    pub emotion: EmotionConfig,
    pub safety: SafetyConfig,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            train_pairs: 500,
            ranker_pairs: 200,
            heldout_pairs: 100,
            emotion_train: 400,
            emotion_heldout: 100,
            safety_train: 1200,
            safety_heldout_offensive: 50,
            safety_heldout_clean: 500,
            semantic: SemanticConfig::default(),
            ranker: RankerConfig::default(),
            emotion: EmotionConfig::default(),
            safety: SafetyConfig::default(),
        }
    }
}

/// File names of the generated data, relative to the bootstrap directory.
pub mod data {
    pub const CORPUS: &str = "data/corpus.jsonl";
    pub const RANKER_PAIRS: &str = "data/ranker_pairs.jsonl";
    pub const HELDOUT_PAIRS: &str = "data/heldout_pairs.jsonl";
    pub const EMOTION_TRAIN: &str = "data/emotion_train.jsonl";
    pub const EMOTION_HELDOUT: &str = "data/emotion_heldout.jsonl";
    pub const SAFETY_TRAIN: &str = "data/safety_train.jsonl";
    pub const SAFETY_HELDOUT: &str = "data/safety_heldout.jsonl";
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub retrieval: RetrievalMetrics,
    pub emotion: EmotionMetrics,
    pub safety: SafetyMetrics,
}

/// Synthetic datasets derived from one seed.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub corpus: Vec<PairRecord>,
    pub ranker_pairs: Vec<PairRecord>,
    pub heldout_pairs: Vec<PairRecord>,
    pub emotion_train: Vec<EmotionExample>,
    pub emotion_heldout: Vec<EmotionExample>,
    pub safety_train: Vec<SafetyExample>,
    pub safety_heldout: Vec<SafetyExample>,
}

impl SyntheticData {
    pub fn generate(cfg: &BootstrapConfig, lexicons: &Lexicons, offensive_terms: &[String]) -> Self {
        let s = cfg.seed.wrapping_mul(1000);
        let (a, b) = (cfg.train_pairs, cfg.train_pairs + cfg.ranker_pairs);
        let pairs = synth::dialogue_pairs(b + cfg.heldout_pairs, s + 1);
        let mut safety_heldout: Vec<SafetyExample> = synth::obfuscated_offensive(cfg.safety_heldout_offensive, s + 5, offensive_terms)
            .into_iter()
            .map(|text| SafetyExample { text, label: 1 })
            .collect();
        safety_heldout.extend(
            synth::clean_sentences(cfg.safety_heldout_clean, s + 6, lexicons)
                .into_iter()
                .map(|text| SafetyExample { text, label: 0 }),
        );
        Self {
            corpus: synth::to_records(&pairs[..a], 0),
            ranker_pairs: synth::to_records(&pairs[a..b], 0),
            heldout_pairs: synth::to_records(&pairs[b..], 0),
            emotion_train: synth::emotion_examples(cfg.emotion_train, s + 2, lexicons),
            emotion_heldout: synth::emotion_examples(cfg.emotion_heldout, s + 3, lexicons),
            safety_train: synth::safety_examples(cfg.safety_train, s + 4, offensive_terms, lexicons),
            safety_heldout,
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        create_dir(&dir.join("data"))?;
        write_pairs(dir.join(data::CORPUS), &self.corpus)?;
        write_pairs(dir.join(data::RANKER_PAIRS), &self.ranker_pairs)?;
        write_pairs(dir.join(data::HELDOUT_PAIRS), &self.heldout_pairs)?;
        write_jsonl(dir.join(data::EMOTION_TRAIN), &self.emotion_train)?;
        write_jsonl(dir.join(data::EMOTION_HELDOUT), &self.emotion_heldout)?;
        write_jsonl(dir.join(data::SAFETY_TRAIN), &self.safety_train)?;
        write_jsonl(dir.join(data::SAFETY_HELDOUT), &self.safety_heldout)
    }
}

/// Trains every model on `data`, writing checkpoints and per-model
/// reports into `dir`.
pub fn train_all(dir: &Path, data: &SyntheticData, cfg: &BootstrapConfig, lexicons: &Lexicons) -> Result<ModelSet> {
    create_dir(dir)?;
    let index = build_index(data.corpus.clone())?;
    let (encoder, sem_report) = train_semantic(&data.corpus, &cfg.semantic)?;
    write_jsonl(report_path(dir, "semantic"), &sem_report.epochs)?;
    let (ranker, rank_report) = train_ranker(&data.ranker_pairs, &encoder, &index, &cfg.ranker)?;
    write_jsonl(report_path(dir, "ranker"), &rank_report.epochs)?;
    let (emotion, emo_report) = train_emotion(&data.emotion_train, &data.emotion_heldout, &encoder, lexicons, &cfg.emotion)?;
    write_jsonl(report_path(dir, "emotion"), &emo_report.epochs)?;
    let (safety, safety_report) = train_safety(&data.safety_train, &cfg.safety)?;
    write_jsonl(report_path(dir, "safety"), &safety_report.epochs)?;
    let models = ModelSet {
        index,
        encoder,
        ranker,
        emotion,
        safety,
    };
    models.save(dir)?;
    Ok(models)
}

pub fn evaluate_all(
    models: &ModelSet,
    data: &SyntheticData,
    lexicons: &Lexicons,
    policy: &DodgePolicy,
    threshold: f64,
    seed: u64,
) -> Result<BootstrapSummary> {
    let gate = SafetyGate::new(models.safety.clone(), policy.clone(), threshold)?;
    Ok(BootstrapSummary {
        retrieval: evaluate_retrieval(
            &models.index,
            &models.encoder,
            &models.ranker,
            &data.heldout_pairs,
            DEFAULT_DISTRACTORS,
            seed,
        ),
        emotion: evaluate_emotion_set(&models.emotion, &models.encoder, lexicons, &data.emotion_heldout)?,
        safety: evaluate_safety(&gate, &data.safety_heldout),
    })
}

/// Generates data, trains, evaluates, and writes `summary.json`.
pub fn bootstrap(
    dir: impl AsRef<Path>,
    cfg: &BootstrapConfig,
    lexicons: &Lexicons,
    policy: &DodgePolicy,
    offensive_terms: &[String],
) -> Result<(ModelSet, BootstrapSummary)> {
    let dir = dir.as_ref();
    let data = SyntheticData::generate(cfg, lexicons, offensive_terms);
    data.write(dir)?;
    let models = train_all(dir, &data, cfg, lexicons)?;
    let summary = evaluate_all(&models, &data, lexicons, policy, crate::safety::DEFAULT_THRESHOLD, cfg.seed)?;
    let path = dir.join("summary.json");
    let bytes = serde_json::to_vec_pretty(&summary)?;
    std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
    Ok((models, summary))
}

/// Reads the pair corpus a bootstrap wrote.
pub fn read_corpus(dir: impl AsRef<Path>) -> Result<Vec<PairRecord>> {
    read_pairs(dir.as_ref().join(data::CORPUS))
}
