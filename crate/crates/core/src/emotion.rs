//! Emotion detection from the semantic encoding plus lexicon and surface
//! cues.

use std::collections::HashSet;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::macro_f1;
use crate::nn::{Checkpoint, Gradients, Input, LayerSpec, LayerStack, Tensor2, GRAD_CLIP_NORM};
use crate::semantic::{shuffle, CdssmEncoder};
use crate::text::{normalize_text, Utterance};

pub const CHECKPOINT_KIND: &str = "emotion";
pub const SENTIMENT_DIM: usize = 7;
pub const MIN_PER_CLASS: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmotionLabel {
    Happy,
    Sad,
    Angry,
    Others,
}

impl EmotionLabel {
    /// Also the tie-break order.
    pub const ALL: [EmotionLabel; 4] = [Self::Happy, Self::Sad, Self::Angry, Self::Others];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Happy => "happy",
            Self::Sad => "sad",
            Self::Angry => "angry",
            Self::Others => "others",
        }
    }
}

impl std::fmt::Display for EmotionLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Reads a UTF-8 word list: one normalized term per line, `#` comments and
/// blank lines skipped, duplicates dropped (first occurrence wins).
pub fn parse_word_list(text: &str) -> Vec<String> {
    let mut seen = HashSet::new();
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(normalize_text)
        .filter(|t| !t.is_empty() && seen.insert(t.clone()))
        .collect()
}

pub fn read_word_list(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::LexiconMissing(path.to_path_buf())
        } else {
            Error::io(path, e)
        }
    })?;
    Ok(parse_word_list(&text))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Lexicons {
    pub positive: Vec<String>,
    pub negative: Vec<String>,
    pub anger: Vec<String>,
    sets: [HashSet<String>; 3],
}

impl Lexicons {
    pub fn new(positive: Vec<String>, negative: Vec<String>, anger: Vec<String>) -> Self {
        let set = |v: &[String]| v.iter().cloned().collect::<HashSet<_>>();
        let sets = [set(&positive), set(&negative), set(&anger)];
        Self {
            positive,
            negative,
            anger,
            sets,
        }
    }

    pub fn load(positive: impl AsRef<Path>, negative: impl AsRef<Path>, anger: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(read_word_list(positive)?, read_word_list(negative)?, read_word_list(anger)?))
    }

    pub fn load_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        Self::load(dir.join("positive.txt"), dir.join("negative.txt"), dir.join("anger.txt"))
    }

    /// The lexicons shipped with the crate.
    pub fn builtin() -> Self {
        Self::new(
            parse_word_list(include_str!("../../../assets/lexicon/positive.txt")),
            parse_word_list(include_str!("../../../assets/lexicon/negative.txt")),
            parse_word_list(include_str!("../../../assets/lexicon/anger.txt")),
        )
    }

    /// Word set associated with an emotion; `None` for `others`.
    pub fn for_label(&self, label: EmotionLabel) -> Option<&HashSet<String>> {
        match label {
            EmotionLabel::Happy => Some(&self.sets[0]),
            EmotionLabel::Sad => Some(&self.sets[1]),
            EmotionLabel::Angry => Some(&self.sets[2]),
            EmotionLabel::Others => None,
        }
    }
}

/// Raw cue counts for one utterance.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentimentFeatures {
    pub token_count: usize,
    pub pos_count: usize,
    pub neg_count: usize,
    pub anger_count: usize,
    /// Tokens containing `!`.
    pub exclamation_count: usize,
    /// Tokens containing `?`.
    pub question_count: usize,
    /// Tokens with a run of three or more identical characters.
    pub elongation_count: usize,
}

impl SentimentFeatures {
    /// Counts divided by the token count, followed by a bias of 1.
    pub fn normalized(&self) -> [f64; SENTIMENT_DIM] {
        let n = self.token_count.max(1) as f64;
        [
            self.pos_count as f64 / n,
            self.neg_count as f64 / n,
            self.anger_count as f64 / n,
            self.exclamation_count as f64 / n,
            self.question_count as f64 / n,
            self.elongation_count as f64 / n,
            1.0,
        ]
    }
}

fn has_run(token: &str, len: usize) -> bool {
    let mut prev = None;
    let mut run = 0;
    for c in token.chars() {
        run = if Some(c) == prev { run + 1 } else { 1 };
        if run >= len {
            return true;
        }
        prev = Some(c);
    }
    false
}

pub fn sentiment_features(utt: &Utterance, lex: &Lexicons) -> SentimentFeatures {
    let mut f = SentimentFeatures {
        token_count: utt.tokens.len(),
        ..Default::default()
    };
    for tok in &utt.tokens {
        f.pos_count += usize::from(lex.sets[0].contains(tok));
        f.neg_count += usize::from(lex.sets[1].contains(tok));
        f.anger_count += usize::from(lex.sets[2].contains(tok));
        f.exclamation_count += usize::from(tok.contains('!'));
        f.question_count += usize::from(tok.contains('?'));
        f.elongation_count += usize::from(has_run(tok, 3));
    }
    f
}

/// Classifier input: semantic vector followed by normalized cues.
pub fn emotion_input(encoder: &CdssmEncoder, lex: &Lexicons, utt: &Utterance) -> Vec<f32> {
    let mut x = encoder.encode_utterance(utt).values;
    x.extend(sentiment_features(utt, lex).normalized().iter().map(|&v| v as f32));
    x
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionPrediction {
    pub label: EmotionLabel,
    /// Indexed by [`EmotionLabel::index`].
    pub probs: [f64; 4],
}

/// First label with the strictly largest probability.
pub fn argmax_label(probs: &[f64; 4]) -> EmotionLabel {
    let mut best = 0;
    for i in 1..4 {
        if probs[i] > probs[best] {
            best = i;
        }
    }
    EmotionLabel::ALL[best]
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmotionModel {
    stack: LayerStack<f32>,
}

impl EmotionModel {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Self {
        let specs = [
            LayerSpec::Dense {
                dim_in: input_dim,
                dim_out: hidden,
            },
            LayerSpec::SoftmaxHead {
                dim_in: hidden,
                classes: 4,
            },
        ];
        Self {
            stack: LayerStack::init(&specs, seed).expect("emotion specs are consistent"),
        }
    }

    pub fn for_encoder(encoder: &CdssmEncoder, seed: u64) -> Self {
        Self::new(encoder.dim() + SENTIMENT_DIM, 32, seed)
    }

    pub fn stack(&self) -> &LayerStack<f32> {
        &self.stack
    }

    pub fn input_dim(&self) -> usize {
        self.stack.input_dim()
    }

    pub fn probabilities(&self, x: &[f32]) -> Result<[f64; 4]> {
        let out = self.stack.predict(&Input::Dense(Tensor2::row_vector(x.to_vec())))?;
        let p = out.data();
        Ok([p[0].into(), p[1].into(), p[2].into(), p[3].into()])
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::from_stack(CHECKPOINT_KIND, &self.stack)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.manifest.kind != CHECKPOINT_KIND {
            return Err(Error::CorruptCheckpoint(format!(
                "expected an {CHECKPOINT_KIND} checkpoint, found {}",
                ckpt.manifest.kind
            )));
        }
        let stack = ckpt.to_stack()?;
        let specs = stack.specs();
        if !matches!(specs.as_slice(), [LayerSpec::Dense { .. }, LayerSpec::SoftmaxHead { classes: 4, .. }]) {
            return Err(Error::ShapeMismatch("not an emotion classifier stack".into()));
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

pub fn classify_emotion(
    model: &EmotionModel,
    encoder: &CdssmEncoder,
    lex: &Lexicons,
    utt: &Utterance,
) -> Result<EmotionPrediction> {
    let probs = model.probabilities(&emotion_input(encoder, lex, utt))?;
    Ok(EmotionPrediction {
        label: argmax_label(&probs),
        probs,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmotionExample {
    pub text: String,
    pub label: EmotionLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmotionConfig {
    pub epochs: usize,
    pub lr: f32,
    pub batch_size: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl Default for EmotionConfig {
    fn default() -> Self {
        Self {
            epochs: 40,
            lr: 0.5,
            batch_size: 8,
            hidden: 32,
            seed: 23,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmotionEpoch {
    pub epoch: usize,
    pub mean_loss: f64,
    pub heldout_macro_f1: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EmotionReport {
    pub epochs: Vec<EmotionEpoch>,
}

impl EmotionReport {
    pub fn final_macro_f1(&self) -> f64 {
        self.epochs.last().map_or(0.0, |e| e.heldout_macro_f1)
    }
}

/// Cross-entropy of the true class and its gradient w.r.t. the head output.
pub fn cross_entropy(probs: &[f32], label: usize) -> (f64, Vec<f32>) {
    let p = probs[label].max(f32::MIN_POSITIVE);
    let mut g = vec![0.0f32; probs.len()];
    g[label] = -1.0 / p;
    (-f64::from(p).ln(), g)
}

fn check_classes(examples: &[EmotionExample]) -> Result<()> {
    for label in EmotionLabel::ALL {
        let got = examples.iter().filter(|e| e.label == label).count();
        if got < MIN_PER_CLASS {
            return Err(Error::ClassUnderrepresented {
                label: label.to_string(),
                got,
                needed: MIN_PER_CLASS,
            });
        }
    }
    Ok(())
}

pub fn evaluate_emotion(
    model: &EmotionModel,
    encoder: &CdssmEncoder,
    lex: &Lexicons,
    examples: &[EmotionExample],
) -> Result<f64> {
    let mut gold = Vec::with_capacity(examples.len());
    let mut pred = Vec::with_capacity(examples.len());
    for ex in examples {
        gold.push(ex.label.index());
        pred.push(classify_emotion(model, encoder, lex, &Utterance::new(ex.text.as_str()))?.label.index());
    }
    Ok(macro_f1(&gold, &pred, 4))
}

/// Trains a fresh classifier on the frozen encoder's features. Held-out
/// macro-F1 is recorded after each epoch.
pub fn train_emotion(
    train: &[EmotionExample],
    heldout: &[EmotionExample],
    encoder: &CdssmEncoder,
    lex: &Lexicons,
    config: &EmotionConfig,
) -> Result<(EmotionModel, EmotionReport)> {
    let mut model = EmotionModel::new(encoder.dim() + SENTIMENT_DIM, config.hidden, config.seed);
    let report = train_emotion_model(&mut model, train, heldout, encoder, lex, config)?;
    Ok((model, report))
}

pub fn train_emotion_model(
    model: &mut EmotionModel,
    train: &[EmotionExample],
    heldout: &[EmotionExample],
    encoder: &CdssmEncoder,
    lex: &Lexicons,
    config: &EmotionConfig,
) -> Result<EmotionReport> {
    check_classes(train)?;
    let inputs: Vec<Input<f32>> = train
        .iter()
        .map(|e| Input::Dense(Tensor2::row_vector(emotion_input(encoder, lex, &Utterance::new(e.text.as_str())))))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(1);
    let mut grads = Gradients::zeros_for(&model.stack);
    let mut report = EmotionReport::default();
    for epoch in 0..config.epochs {
        let order = shuffle(&mut rng, train.len());
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size.max(1)) {
            grads.fill_zero();
            for &i in chunk {
                let pass = model.stack.forward(&inputs[i])?;
                let (loss, g) = cross_entropy(pass.output().data(), train[i].label.index());
                total += loss;
                model.stack.backward_into(&pass, &Tensor2::row_vector(g), &mut grads)?;
            }
            grads.scale(1.0 / chunk.len() as f32);
            grads.clip_norm(GRAD_CLIP_NORM);
            model.stack.sgd_step(&grads, config.lr)?;
        }
        report.epochs.push(EmotionEpoch {
            epoch,
            mean_loss: total / train.len() as f64,
            heldout_macro_f1: evaluate_emotion(model, encoder, lex, heldout)?,
        });
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lex() -> Lexicons {
        Lexicons::new(vec!["happy".into()], vec!["sad".into()], vec!["angry".into()])
    }

    #[test]
    fn lexicon_hit_is_normalized_by_token_count() {
        let f = sentiment_features(&Utterance::new("i am happy"), &lex());
        assert_eq!(f.pos_count, 1);
        let n = f.normalized();
        assert_eq!(n[0], 1.0 / 3.0);
        assert_eq!(n[6], 1.0);
    }

    #[test]
    fn empty_utterance_has_only_bias() {
        let n = sentiment_features(&Utterance::new(""), &lex()).normalized();
        assert_eq!(n, [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
    }

    #[test]
    fn exclamation_in_complaint() {
        let f = sentiment_features(&Utterance::new("Why don't you ever text me!"), &lex());
        assert_eq!(f.token_count, 7);
        assert_eq!(f.exclamation_count, 1);
        assert_eq!(f.normalized()[3], 1.0 / 7.0);
    }

    #[test]
    fn surface_cues() {
        let f = sentiment_features(&Utterance::new("sooo good?? really!!!"), &lex());
        assert_eq!(f.elongation_count, 2); // "sooo" and "!!!"
        assert_eq!(f.question_count, 1);
        assert_eq!(f.exclamation_count, 1);
    }

    #[test]
    fn tie_break_follows_label_order() {
        assert_eq!(argmax_label(&[0.25; 4]), EmotionLabel::Happy);
        assert_eq!(argmax_label(&[0.1, 0.4, 0.4, 0.1]), EmotionLabel::Sad);
        assert_eq!(argmax_label(&[0.1, 0.2, 0.3, 0.4]), EmotionLabel::Others);
    }

    #[test]
    fn word_lists_skip_comments() {
        let w = parse_word_list("# header\nhappy\n\n  Joy \nhappy\n");
        assert_eq!(w, vec!["happy", "joy"]);
        let err = read_word_list("/nonexistent/lexicon.txt").unwrap_err();
        assert!(matches!(err, Error::LexiconMissing(_)));
    }

    #[test]
    fn underrepresented_class() {
        let ex: Vec<EmotionExample> = (0..100)
            .map(|i| EmotionExample {
                text: "x".into(),
                label: EmotionLabel::ALL[i % 3],
            })
            .collect();
        let enc = CdssmEncoder::new(0);
        let err = train_emotion(&ex, &[], &enc, &lex(), &EmotionConfig::default()).unwrap_err();
        assert!(matches!(err, Error::ClassUnderrepresented { ref label, got: 0, .. } if label == "others"));
    }

    #[test]
    fn label_wire_form() {
        assert_eq!(serde_json::to_string(&EmotionLabel::Angry).unwrap(), "\"angry\"");
    }
}
