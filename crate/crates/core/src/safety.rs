//! Offensive-input detection over canonicalized text, sensitive-topic
//! matching, and deterministic dodge selection.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::emotion::{parse_word_list, read_word_list};
use crate::error::{Error, Result};
use crate::hash::Fnv1a;
use crate::nn::{Checkpoint, Gradients, LayerSpec, LayerStack, Tensor2, GRAD_CLIP_NORM};
use crate::semantic::{encoder_input, shuffle};
use crate::text::{normalize_text, tokenize, DEFAULT_TRIGRAM_DIM};

pub const CHECKPOINT_KIND: &str = "safety";
pub const DEFAULT_THRESHOLD: f64 = 0.5;

fn unleet(c: char) -> char {
    match c {
        '0' => 'o',
        '1' => 'i',
        '3' => 'e',
        '4' | '@' => 'a',
        '5' | '$' => 's',
        '7' => 't',
        _ => c,
    }
}

/// Undoes leet substitutions, then collapses any run of three or more
/// identical characters to one.
pub fn deobfuscate(text: &str) -> String {
    let mapped: Vec<char> = text.chars().map(unleet).collect();
    let mut out = String::with_capacity(text.len());
    let mut i = 0;
    while i < mapped.len() {
        let c = mapped[i];
        let mut j = i;
        while j < mapped.len() && mapped[j] == c {
            j += 1;
        }
        let run = j - i;
        let keep = if run >= 3 { 1 } else { run };
        out.extend(std::iter::repeat(c).take(keep));
        i = j;
    }
    out
}

/// Tokens the classifier sees for raw user text.
pub fn safety_tokens(raw: &str) -> (String, Vec<String>) {
    let clean = deobfuscate(&normalize_text(raw));
    let tokens = tokenize(&clean);
    (clean, tokens)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierDims {
    pub trigram_dim: usize,
    pub embed: usize,
    pub hidden: usize,
}

impl Default for ClassifierDims {
    fn default() -> Self {
        Self {
            trigram_dim: DEFAULT_TRIGRAM_DIM,
            embed: 32,
            hidden: 32,
        }
    }
}

impl ClassifierDims {
    pub fn specs(&self) -> Vec<LayerSpec> {
        vec![
            LayerSpec::HashProjection {
                dim_in: self.trigram_dim,
                dim_out: self.embed,
            },
            LayerSpec::BiRecurrentGated {
                dim_in: self.embed,
                hidden: self.hidden,
            },
            LayerSpec::MeanPoolOverTime { dim: 2 * self.hidden },
            LayerSpec::LogisticHead { dim_in: 2 * self.hidden },
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffensiveClassifier {
    stack: LayerStack<f32>,
}

impl OffensiveClassifier {
    pub fn new(seed: u64) -> Self {
        Self::with_dims(ClassifierDims::default(), seed)
    }

    pub fn with_dims(dims: ClassifierDims, seed: u64) -> Self {
        Self {
            stack: LayerStack::init(&dims.specs(), seed).expect("classifier specs are consistent"),
        }
    }

    pub fn stack(&self) -> &LayerStack<f32> {
        &self.stack
    }

    /// Probability that already-canonicalized tokens are offensive.
    pub fn probability(&self, tokens: &[String]) -> f64 {
        let out = self
            .stack
            .predict(&encoder_input(tokens, self.stack.input_dim()))
            .expect("classifier input matches its own projection");
        f64::from(out.data()[0])
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stack(CHECKPOINT_KIND, &self.stack)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.manifest.kind != CHECKPOINT_KIND {
            return Err(Error::CorruptCheckpoint(format!(
                "expected a {CHECKPOINT_KIND} checkpoint, found {}",
                ckpt.manifest.kind
            )));
        }
        let stack = ckpt.to_stack()?;
        let ok = matches!(
            stack.specs().as_slice(),
            [
                LayerSpec::HashProjection { .. },
                LayerSpec::BiRecurrentGated { .. },
                LayerSpec::MeanPoolOverTime { .. },
                LayerSpec::LogisticHead { .. }
            ]
        );
        if !ok {
            return Err(Error::ShapeMismatch("not an offensive-content classifier stack".into()));
        }
        Ok(Self { stack })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.checkpoint().save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Offensive probability for text that is already normalized and
/// deobfuscated.
pub fn classify_offensive(classifier: &OffensiveClassifier, text: &str) -> f64 {
    classifier.probability(&tokenize(text))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DodgePolicy {
    pub dodge_responses: Vec<String>,
    pub sensitive_topics: Vec<String>,
}

impl DodgePolicy {
    pub fn new(dodge_responses: Vec<String>, sensitive_topics: Vec<String>) -> Result<Self> {
        if dodge_responses.is_empty() {
            return Err(Error::InvalidPolicy("no dodge responses".into()));
        }
        if sensitive_topics.is_empty() {
            return Err(Error::InvalidPolicy("no sensitive topics".into()));
        }
        Ok(Self {
            dodge_responses,
            sensitive_topics,
        })
    }

    pub fn load(dodges: impl AsRef<Path>, topics: impl AsRef<Path>) -> Result<Self> {
        Self::new(read_word_list(dodges)?, read_word_list(topics)?)
    }

    pub fn builtin() -> Self {
        Self::new(
            parse_word_list(include_str!("../../../assets/safety/dodges.txt")),
            parse_word_list(include_str!("../../../assets/safety/sensitive_topics.txt")),
        )
        .expect("shipped policy lists are non-empty")
    }

    /// Rejects a policy whose own dodges the classifier would flag.
    pub fn check_dodges(&self, classifier: &OffensiveClassifier, threshold: f64) -> Result<()> {
        for d in &self.dodge_responses {
            let (_, tokens) = safety_tokens(d);
            let p = classifier.probability(&tokens);
            if p >= threshold {
                return Err(Error::InvalidPolicy(format!("dodge {d:?} scores {p:.3} as offensive")));
            }
        }
        Ok(())
    }
}

/// Shipped offensive seed terms used by the synthetic corpus.
pub fn builtin_offensive_terms() -> Vec<String> {
    parse_word_list(include_str!("../../../assets/safety/offensive_terms.txt"))
}

/// First configured topic that appears as a whole token.
pub fn check_sensitive_topic(policy: &DodgePolicy, tokens: &[String]) -> Option<String> {
    policy
        .sensitive_topics
        .iter()
        .find(|topic| tokens.iter().any(|t| t == *topic))
        .cloned()
}

/// Dodge chosen by `fnv1a64(session ‖ 0x00 ‖ turn as u64 LE) mod len`.
pub fn pick_dodge<'a>(policy: &'a DodgePolicy, session: &str, turn: u64) -> &'a str {
    let mut h = Fnv1a::new();
    h.write(session.as_bytes());
    h.write(&[0]);
    h.write(&turn.to_le_bytes());
    let idx = (h.finish() % policy.dodge_responses.len() as u64) as usize;
    &policy.dodge_responses[idx]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyVerdict {
    pub offensive: bool,
    pub offensive_prob: f64,
    pub sensitive_topic: Option<String>,
    pub deobfuscated_text: String,
}

impl SafetyVerdict {
    pub fn fires(&self) -> bool {
        self.offensive || self.sensitive_topic.is_some()
    }
}

/// Classifier, policy and threshold bundled for per-turn checks.
#[derive(Debug, Clone)]
pub struct SafetyGate {
    pub classifier: OffensiveClassifier,
    pub policy: DodgePolicy,
    pub threshold: f64,
}

impl SafetyGate {
    pub fn new(classifier: OffensiveClassifier, policy: DodgePolicy, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::InvalidPolicy(format!("threshold {threshold} outside (0, 1]")));
        }
        policy.check_dodges(&classifier, threshold)?;
        Ok(Self {
            classifier,
            policy,
            threshold,
        })
    }

    pub fn assess(&self, raw: &str) -> SafetyVerdict {
        let (clean, tokens) = safety_tokens(raw);
        let p = self.classifier.probability(&tokens);
        SafetyVerdict {
            offensive: p >= self.threshold,
            offensive_prob: p,
            sensitive_topic: check_sensitive_topic(&self.policy, &tokens),
            deobfuscated_text: clean,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SafetyExample {
    pub text: String,
    /// 1 = offensive.
    pub label: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SafetyConfig {
    fn default() -> Self {
        Self {
            epochs: 15,
            lr: 0.5,
            batch_size: 8,
            seed: 31,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SafetyReport {
    pub epochs: Vec<SafetyEpoch>,
}

/// Minimum examples of each label for training.
pub const MIN_PER_LABEL: usize = 10;

/// Binary cross-entropy and its gradient w.r.t. the probability output.
pub fn binary_cross_entropy(p: f32, label: u8) -> (f64, f32) {
    let y = f32::from(label);
    let pc = f64::from(p).clamp(1e-12, 1.0 - 1e-12);
    let loss = -(f64::from(y) * pc.ln() + (1.0 - f64::from(y)) * (1.0 - pc).ln());
    let denom = (p * (1.0 - p)).max(f32::MIN_POSITIVE);
    (loss, (p - y) / denom)
}

pub fn train_safety(examples: &[SafetyExample], config: &SafetyConfig) -> Result<(OffensiveClassifier, SafetyReport)> {
    let mut classifier = OffensiveClassifier::new(config.seed);
    let report = train_classifier(&mut classifier, examples, config)?;
    Ok((classifier, report))
}

/// Trains on deobfuscated text, as inference sees it.
pub fn train_classifier(
    classifier: &mut OffensiveClassifier,
    examples: &[SafetyExample],
    config: &SafetyConfig,
) -> Result<SafetyReport> {
    for label in [0u8, 1] {
        let got = examples.iter().filter(|e| e.label == label).count();
        if got < MIN_PER_LABEL {
            return Err(Error::ClassUnderrepresented {
                label: label.to_string(),
                got,
                needed: MIN_PER_LABEL,
            });
        }
    }
    if let Some(bad) = examples.iter().position(|e| e.label > 1) {
        return Err(Error::InvalidRecord {
            line: bad + 1,
            reason: "label must be 0 or 1".into(),
        });
    }
    let dim = classifier.stack.input_dim();
    let inputs: Vec<_> = examples
        .iter()
        .map(|e| encoder_input::<f32>(&safety_tokens(&e.text).1, dim))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut grads = Gradients::zeros_for(&classifier.stack);
    let mut report = SafetyReport::default();
    for epoch in 0..config.epochs {
        let order = shuffle(&mut rng, examples.len());
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            grads.fill_zero();
            for &i in chunk {
                let pass = classifier.stack.forward(&inputs[i])?;
                let (loss, g) = binary_cross_entropy(pass.output().data()[0], examples[i].label);
                total += loss;
                classifier
                    .stack
                    .backward_into(&pass, &Tensor2::row_vector(vec![g]), &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f32);
            grads.clip_norm(GRAD_CLIP_NORM);
            classifier.stack.sgd_step(&grads, config.lr)?;
        }
        report.epochs.push(SafetyEpoch {
            epoch,
            mean_loss: total / examples.len() as f64,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deobfuscation_examples() {
        assert_eq!(deobfuscate("hello"), "hello");
        assert_eq!(deobfuscate("sh1t"), "shit");
        assert_eq!(deobfuscate("shiiiit"), "shit");
        assert_eq!(deobfuscate("$h!7"), "sh!t");
        assert_eq!(deobfuscate("b00k"), "book");
        assert_eq!(deobfuscate("a44a"), "a");
    }

    #[test]
    fn topics_follow_config_order() {
        let p = DodgePolicy::new(vec!["d".into()], vec!["religion".into(), "politics".into()]).unwrap();
        let toks = |s: &str| tokenize(&normalize_text(s));
        assert_eq!(check_sensitive_topic(&p, &toks("let's talk about religion")).as_deref(), Some("religion"));
        assert_eq!(check_sensitive_topic(&p, &toks("nice weather")), None);
        assert_eq!(
            check_sensitive_topic(&p, &toks("politics and religion")).as_deref(),
            Some("religion")
        );
        assert_eq!(check_sensitive_topic(&p, &toks("religions")), None);
    }

    #[test]
    fn dodge_selection() {
        let one = DodgePolicy::new(vec!["only".into()], vec!["x".into()]).unwrap();
        assert!((0..20).all(|t| pick_dodge(&one, "s", t) == "only"));
        let five = DodgePolicy::new((0..5).map(|i| format!("d{i}")).collect(), vec!["x".into()]).unwrap();
        assert_eq!(pick_dodge(&five, "abc", 3), pick_dodge(&five, "abc", 3));
        let distinct: std::collections::HashSet<&str> = (0..10).map(|t| pick_dodge(&five, "abc", t)).collect();
        assert!(distinct.len() >= 2);
    }

    /// Oracle for the dodge index from a direct byte-level FNV-1a.
    #[test]
    fn dodge_index_matches_reference_hash() {
        let five = DodgePolicy::new((0..5).map(|i| format!("d{i}")).collect(), vec!["x".into()]).unwrap();
        for turn in 0..10u64 {
            let mut bytes = b"session-1".to_vec();
            bytes.push(0);
            bytes.extend_from_slice(&turn.to_le_bytes());
            let mut h: u64 = 0xcbf29ce484222325;
            for b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x100000001b3);
            }
            assert_eq!(pick_dodge(&five, "session-1", turn), format!("d{}", h % 5));
        }
    }

    #[test]
    fn empty_policies_are_rejected() {
        assert!(matches!(DodgePolicy::new(vec![], vec!["x".into()]), Err(Error::InvalidPolicy(_))));
        assert!(matches!(DodgePolicy::new(vec!["x".into()], vec![]), Err(Error::InvalidPolicy(_))));
        let p = DodgePolicy::builtin();
        assert!(!p.dodge_responses.is_empty() && !p.sensitive_topics.is_empty());
    }

    #[test]
    fn threshold_consistency() {
        let clf = OffensiveClassifier::with_dims(
            ClassifierDims {
                trigram_dim: 64,
                embed: 4,
                hidden: 4,
            },
            2,
        );
        let policy = DodgePolicy::new(vec!["ok".into()], vec!["x".into()]).unwrap();
        let p = clf.probability(&safety_tokens("some text").1);
        for threshold in [0.01, p, 0.5, 0.99] {
            let gate = SafetyGate {
                classifier: clf.clone(),
                policy: policy.clone(),
                threshold,
            };
            let v = gate.assess("some text");
            assert_eq!(v.offensive, v.offensive_prob >= threshold);
        }
    }

    #[test]
    fn bce_gradient_is_p_minus_y_at_logit() {
        let (_, g) = binary_cross_entropy(0.8, 1);
        assert!(((g * 0.8 * 0.2) - (0.8 - 1.0)).abs() < 1e-6);
    }
}
