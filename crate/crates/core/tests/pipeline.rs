//! The turn pipeline against a small but fully trained engine.

use std::sync::OnceLock;

use chatir_core::bundle::{train_all, BootstrapConfig, ModelSet, SyntheticData};
use chatir_core::dialogue::{context_window, Author, Conversation, Engine, EngineConfig, ResponseDecision, Source, Timings};
use chatir_core::emotion::{train_emotion, EmotionLabel, Lexicons};
use chatir_core::ranker::RankerConfig;
use chatir_core::safety::{builtin_offensive_terms, DodgePolicy, DEFAULT_THRESHOLD};
use chatir_core::semantic::SemanticConfig;
use sha2::{Digest, Sha256};

struct World {
    data: SyntheticData,
    models: ModelSet,
    engine: Engine,
}

fn small_config() -> BootstrapConfig {
    BootstrapConfig {
        seed: 3,
        train_pairs: 150,
        ranker_pairs: 100,
        heldout_pairs: 20,
        emotion_train: 200,
        emotion_heldout: 40,
        semantic: SemanticConfig {
            epochs: 4,
            ..SemanticConfig::default()
        },
        ranker: RankerConfig {
            epochs: 500,
            ..RankerConfig::default()
        },
        ..BootstrapConfig::default()
    }
}

fn world() -> &'static World {
    static W: OnceLock<World> = OnceLock::new();
    W.get_or_init(|| {
        let cfg = small_config();
        let lex = Lexicons::builtin();
        let data = SyntheticData::generate(&cfg, &lex, &builtin_offensive_terms());
        let dir = tempfile::tempdir().unwrap();
        let models = train_all(dir.path(), &data, &cfg, &lex).unwrap();
        let engine = models
            .clone()
            .into_engine(lex, DodgePolicy::builtin(), DEFAULT_THRESHOLD, EngineConfig::default())
            .unwrap();
        World { data, models, engine }
    })
}

fn untimed(mut d: ResponseDecision) -> ResponseDecision {
    d.timings = Timings::default();
    d
}

fn dodges() -> Vec<String> {
    DodgePolicy::builtin().dodge_responses
}

#[test]
fn obfuscated_profanity_is_dodged() {
    let w = world();
    let mut conv = Conversation::new("s1");
    let d = w.engine.respond(&mut conv, "sh1t happens", false, 1).unwrap();
    assert_eq!(d.source, Source::Dodge);
    let verdict = d.safety.as_ref().unwrap();
    assert!(verdict.offensive);
    assert_eq!(verdict.deobfuscated_text, "shit happens");
    assert!(dodges().contains(&d.response));
    assert!(d.candidates.is_empty() && d.emotion.is_none());
    assert_eq!(conv.turns.len(), 2);
    assert!(conv.turns[1].safety.is_none());
}

#[test]
fn sensitive_topic_is_dodged() {
    let w = world();
    let d = w.engine.decide(&Conversation::new("s2"), "what do you think about religion", false).unwrap();
    assert_eq!(d.source, Source::Dodge);
    assert_eq!(d.safety.unwrap().sensitive_topic.as_deref(), Some("religion"));
}

#[test]
fn every_flagged_input_gets_a_dodge() {
    let w = world();
    let dodges = dodges();
    let mut fired = 0;
    for (i, ex) in w.data.safety_heldout.iter().enumerate() {
        let d = w.engine.decide(&Conversation::new(format!("s{i}")), &ex.text, false).unwrap();
        let verdict = d.safety.as_ref().unwrap();
        if verdict.fires() {
            fired += 1;
            assert_eq!(d.source, Source::Dodge, "{}", ex.text);
            assert!(dodges.contains(&d.response));
        } else {
            assert_ne!(d.source, Source::Dodge);
        }
    }
    assert!(fired >= w.data.safety_heldout.iter().filter(|e| e.label == 1).count() / 2);
}

#[test]
fn attachment_short_circuits() {
    let w = world();
    let mut conv = Conversation::new("s3");
    let d = w.engine.respond(&mut conv, "sh1t happens", true, 5).unwrap();
    assert_eq!(d.source, Source::Fallback);
    assert_eq!(d.response, "i can't see pictures yet, tell me about it!");
    assert!(d.safety.is_none() && d.emotion.is_none());
    assert_eq!(conv.turns.len(), 2);
    assert_eq!(conv.turns[0].author, Author::User);
    assert_eq!(conv.turns[1].source, Some(Source::Fallback));
}

#[test]
fn unseen_vocabulary_falls_back() {
    let w = world();
    let d = w.engine.decide(&Conversation::new("s4"), "qqxv zzkw vvbnm", false).unwrap();
    assert_eq!(d.source, Source::Fallback);
    assert_eq!(d.response, EngineConfig::default().fallback_response);
    assert!(d.emotion.is_some());
}

#[test]
fn ranked_reply_comes_from_the_trace() {
    let w = world();
    for rec in w.data.heldout_pairs.iter().take(10) {
        let d = w.engine.decide(&Conversation::new("s5"), &rec.message.raw, false).unwrap();
        if d.source != Source::Ranked {
            continue;
        }
        assert!(!d.candidates.is_empty() && d.candidates.len() <= 10);
        assert_eq!(d.response, d.candidates[0].ranked.response);
        for pair in d.candidates.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            assert!(a.adjusted() > b.adjusted() || (a.adjusted() == b.adjusted() && a.ranked.id < b.ranked.id));
        }
        let label = d.emotion.as_ref().unwrap().label;
        for c in &d.candidates {
            assert!(c.bonus == 0.0 || (c.bonus == 0.05 && label != EmotionLabel::Others));
        }
        let t = d.timings;
        for v in [t.safety_ms, t.emotion_ms, t.fetch_ms, t.rank_ms, t.total_ms] {
            assert!(v >= 0.0);
        }
    }
}

#[test]
fn emotion_bonus_follows_the_lexicon() {
    let w = world();
    let conv = Conversation::new("s6");
    let d = w.engine.decide(&conv, "i am so happy and glad today, this is great", false).unwrap();
    let label = d.emotion.as_ref().unwrap().label;
    let words = w.engine.lexicons().for_label(label);
    for c in &d.candidates {
        let rec = w.engine.index().record(c.ranked.id).unwrap();
        let hit = words.is_some_and(|ws| rec.response.tokens.iter().any(|t| ws.contains(t)));
        assert_eq!(c.bonus > 0.0, hit, "{}", rec.response.raw);
    }
}

#[test]
fn decisions_are_deterministic() {
    let w = world();
    let mut a = Conversation::new("same");
    let mut b = Conversation::new("same");
    for text in ["hey there", "sh1t happens", "how was your weekend?", "i hate mondays!"] {
        let x = untimed(w.engine.respond(&mut a, text, false, 9).unwrap());
        let y = untimed(w.engine.respond(&mut b, text, false, 9).unwrap());
        assert_eq!(x, y);
    }
    assert_eq!(a, b);
    assert_eq!(a.turns.len(), 8);
}

#[test]
fn history_feeds_the_context_window() {
    let w = world();
    let mut conv = Conversation::new("s7");
    w.engine.respond(&mut conv, "hello", false, 1).unwrap();
    w.engine.respond(&mut conv, "what's up", false, 2).unwrap();
    let window: Vec<String> = context_window(&conv).into_iter().map(|u| u.raw).collect();
    assert_eq!(window, vec!["what's up".to_string(), conv.turns[3].text.clone()]);
}

#[test]
fn emotion_training_leaves_the_encoder_untouched() {
    let w = world();
    let digest = |m: &ModelSet| Sha256::digest(m.encoder.checkpoint().to_bytes().unwrap());
    let before = digest(&w.models);
    let cfg = small_config();
    train_emotion(&w.data.emotion_train, &w.data.emotion_heldout, &w.models.encoder, &Lexicons::builtin(), &cfg.emotion)
        .unwrap();
    assert_eq!(digest(&w.models), before);
}

#[test]
fn engine_rejects_mismatched_models() {
    let w = world();
    let mut models = w.models.clone();
    models.emotion = chatir_core::emotion::EmotionModel::new(10, 4, 1);
    let err = models
        .into_engine(Lexicons::builtin(), DodgePolicy::builtin(), DEFAULT_THRESHOLD, EngineConfig::default())
        .unwrap_err();
    assert!(matches!(err, chatir_core::Error::ShapeMismatch(_)));
}
