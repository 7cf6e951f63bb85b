//! One conversational turn: safety gate, emotion, fetch, rank, emotion
//! re-rank, reply.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::emotion::{classify_emotion, EmotionLabel, EmotionModel, EmotionPrediction, Lexicons, SENTIMENT_DIM};
use crate::error::{Error, Result};
use crate::index::InvertedIndex;
use crate::ranker::{normalize_by_max, rank_candidates, QueryFeatures, RankedCandidate, RankerModel};
use crate::safety::{pick_dodge, SafetyGate, SafetyVerdict};
use crate::semantic::{CdssmEncoder, SemanticVector};
use crate::text::Utterance;

/// Number of earlier turns visible to retrieval.
pub const CONTEXT_TURNS: usize = 2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub fetch_k: usize,
    pub trace_n: usize,
    pub emotion_bonus: f64,
    pub attachment_response: String,
    pub fallback_response: String,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            fetch_k: 50,
            trace_n: 10,
            emotion_bonus: 0.05,
            attachment_response: "i can't see pictures yet, tell me about it!".into(),
            fallback_response: "tell me more about that".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Author {
    User,
    Agent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Ranked,
    Dodge,
    Fallback,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Ranked => "ranked",
            Source::Dodge => "dodge",
            Source::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub author: Author,
    pub text: String,
    /// Unix milliseconds.
    pub timestamp: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emotion: Option<EmotionLabel>,
    /// Only on user turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety: Option<SafetyVerdict>,
    /// Only on agent turns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<Source>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub session: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn new(session: impl Into<String>) -> Self {
        Self {
            session: session.into(),
            turns: Vec::new(),
        }
    }
}

/// The last `CONTEXT_TURNS` turns, oldest first.
pub fn context_window(conv: &Conversation) -> Vec<Utterance> {
    let start = conv.turns.len().saturating_sub(CONTEXT_TURNS);
    conv.turns[start..].iter().map(|t| Utterance::new(t.text.as_str())).collect()
}

/// A ranked candidate plus its emotion bonus. Trace order is by
/// `score + bonus`, then ascending id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracedCandidate {
    #[serde(flatten)]
    pub ranked: RankedCandidate,
    pub bonus: f64,
}

impl TracedCandidate {
    pub fn adjusted(&self) -> f64 {
        self.ranked.score + self.bonus
    }
}

/// Per-stage wall time in milliseconds; skipped stages stay 0.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub safety_ms: f64,
    pub emotion_ms: f64,
    pub fetch_ms: f64,
    pub rank_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDecision {
    pub response: String,
    pub source: Source,
    /// Absent on the attachment path.
    pub safety: Option<SafetyVerdict>,
    /// Absent on the attachment and dodge paths.
    pub emotion: Option<EmotionPrediction>,
    pub candidates: Vec<TracedCandidate>,
    pub timings: Timings,
}

/// Immutable serving state.
#[derive(Debug)]
pub struct Engine {
    index: InvertedIndex,
    encoder: CdssmEncoder,
    ranker: RankerModel,
    emotion: EmotionModel,
    lexicons: Lexicons,
    safety: SafetyGate,
    config: EngineConfig,
    response_vecs: Vec<SemanticVector>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

impl Engine {
    pub fn new(
        index: InvertedIndex,
        encoder: CdssmEncoder,
        ranker: RankerModel,
        emotion: EmotionModel,
        lexicons: Lexicons,
        safety: SafetyGate,
        config: EngineConfig,
    ) -> Result<Self> {
        if emotion.input_dim() != encoder.dim() + SENTIMENT_DIM {
            return Err(Error::ShapeMismatch(format!(
                "emotion model takes {} inputs, encoder gives {} + {SENTIMENT_DIM}",
                emotion.input_dim(),
                encoder.dim()
            )));
        }
        if config.fetch_k == 0 {
            return Err(Error::EngineNotReady("fetch_k must be positive".into()));
        }
        let response_vecs = index
            .records()
            .iter()
            .map(|r| encoder.encode_utterance(&r.response))
            .collect();
        Ok(Self {
            index,
            encoder,
            ranker,
            emotion,
            lexicons,
            safety,
            config,
            response_vecs,
        })
    }

    pub fn index(&self) -> &InvertedIndex {
        &self.index
    }

    pub fn encoder(&self) -> &CdssmEncoder {
        &self.encoder
    }

    pub fn safety(&self) -> &SafetyGate {
        &self.safety
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    /// Decides the reply without touching the conversation.
    pub fn decide(&self, conv: &Conversation, text: &str, attachment: bool) -> Result<ResponseDecision> {
        let start = Instant::now();
        let mut timings = Timings::default();
        let finish = |mut d: ResponseDecision, mut t: Timings| {
            t.total_ms = ms(start);
            d.timings = t;
            d
        };

        if attachment {
            let d = ResponseDecision {
                response: self.config.attachment_response.clone(),
                source: Source::Fallback,
                safety: None,
                emotion: None,
                candidates: Vec::new(),
                timings,
            };
            return Ok(finish(d, timings));
        }

        let t = Instant::now();
        let verdict = self.safety.assess(text);
        timings.safety_ms = ms(t);
        if verdict.fires() {
            let turn = conv.turns.len() as u64;
            let d = ResponseDecision {
                response: pick_dodge(&self.safety.policy, &conv.session, turn).to_string(),
                source: Source::Dodge,
                safety: Some(verdict),
                emotion: None,
                candidates: Vec::new(),
                timings,
            };
            return Ok(finish(d, timings));
        }

        let message = Utterance::new(text);
        let t = Instant::now();
        let emotion = classify_emotion(&self.emotion, &self.encoder, &self.lexicons, &message)?;
        timings.emotion_ms = ms(t);

        let t = Instant::now();
        let context = context_window(conv);
        let fetched = self.index.fetch_candidates(&message, &context, self.config.fetch_k);
        timings.fetch_ms = ms(t);
        if fetched.candidates.is_empty() {
            let d = ResponseDecision {
                response: self.config.fallback_response.clone(),
                source: Source::Fallback,
                safety: Some(verdict),
                emotion: Some(emotion),
                candidates: Vec::new(),
                timings,
            };
            return Ok(finish(d, timings));
        }

        let t = Instant::now();
        let query = QueryFeatures::new(&self.encoder, &message, &context);
        let raw: Vec<f64> = fetched.candidates.iter().map(|c| c.1).collect();
        let f1 = normalize_by_max(&raw);
        let mut feats = Vec::with_capacity(raw.len());
        for (&(id, _), &s) in fetched.candidates.iter().zip(&f1) {
            let rec = self.index.record(id)?;
            let f = query.features(&rec.response, &self.response_vecs[id as usize], s);
            feats.push((id, rec.response.raw.clone(), f));
        }
        let ranked = rank_candidates(&self.ranker, feats)?;
        let words = self.lexicons.for_label(emotion.label);
        let mut traced: Vec<TracedCandidate> = ranked
            .into_iter()
            .map(|r| {
                let hit = words.is_some_and(|w| {
                    self.index
                        .record(r.id)
                        .map(|rec| rec.response.tokens.iter().any(|t| w.contains(t)))
                        .unwrap_or(false)
                });
                TracedCandidate {
                    ranked: r,
                    bonus: if hit { self.config.emotion_bonus } else { 0.0 },
                }
            })
            .collect();
        traced.sort_by(|a, b| b.adjusted().total_cmp(&a.adjusted()).then(a.ranked.id.cmp(&b.ranked.id)));
        traced.truncate(self.config.trace_n.max(1));
        timings.rank_ms = ms(t);

        let d = ResponseDecision {
            response: traced[0].ranked.response.clone(),
            source: Source::Ranked,
            safety: Some(verdict),
            emotion: Some(emotion),
            candidates: traced,
            timings,
        };
        Ok(finish(d, timings))
    }

    /// Decides the reply and appends the user and agent turns.
    pub fn respond(
        &self,
        conv: &mut Conversation,
        text: &str,
        attachment: bool,
        timestamp: u64,
    ) -> Result<ResponseDecision> {
        let decision = self.decide(conv, text, attachment)?;
        append_turns(conv, text, &decision, timestamp);
        Ok(decision)
    }
}

/// Records a decided exchange.
pub fn append_turns(conv: &mut Conversation, text: &str, decision: &ResponseDecision, timestamp: u64) {
    conv.turns.push(Turn {
        author: Author::User,
        text: text.to_string(),
        timestamp,
        emotion: decision.emotion.as_ref().map(|e| e.label),
        safety: decision.safety.clone(),
        source: None,
    });
    conv.turns.push(Turn {
        author: Author::Agent,
        text: decision.response.clone(),
        timestamp,
        emotion: None,
        safety: None,
        source: Some(decision.source),
    });
}
