//! Text normalization, tokenization and letter-trigram hashing.
//!
//! Everything here is a pure function of its input. The tokenizer keeps
//! intra-word apostrophes (`don't` stays one token), splits every other
//! punctuation run into its own token and emits emoji as individual tokens.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

use crate::hash::fnv1a64;

/// Hash dimension of the trigram input layer.
pub const DEFAULT_TRIGRAM_DIM: usize = 3000;

/// Boundary marker padded around each token before trigram extraction.
pub const BOUNDARY: char = '#';

/// A user or corpus utterance in raw, normalized and tokenized form.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub raw: String,
    pub normalized: String,
    pub tokens: Vec<String>,
}

impl Utterance {
    pub fn new(raw: impl Into<String>) -> Self {
        let raw = raw.into();
        let normalized = normalize_text(&raw);
        let tokens = tokenize(&normalized);
        Self {
            raw,
            normalized,
            tokens,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

fn normalize_once(raw: &str) -> String {
    let lowered: String = raw.nfkc().flat_map(char::to_lowercase).collect();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_whitespace() {
            pending_space = true;
            continue;
        }
        if c.is_control() {
            continue;
        }
        if pending_space && !out.is_empty() {
            out.push(' ');
        }
        pending_space = false;
        out.push(c);
    }
    out
}

/// Lowercase, NFKC-normalize, strip control characters and collapse
/// whitespace. Idempotent.
pub fn normalize_text(raw: &str) -> String {
    // Lowercasing can leave a string that NFKC rewrites again (and vice
    // versa); iterate to the fixed point. Real text converges in one or two
    // rounds.
    let mut current = normalize_once(raw);
    for _ in 0..4 {
        let next = normalize_once(&current);
        if next == current {
            break;
        }
        current = next;
    }
    current
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TokenKind {
    Word,
    Punct,
    Symbol,
}

const ZWJ: char = '\u{200d}';

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Characters that never start a token on their own when something
/// precedes them: combining marks, joiners, variation selectors and
/// emoji skin-tone modifiers.
fn is_attachment(c: char) -> bool {
    is_combining_mark(c)
        || c == ZWJ
        || ('\u{fe00}'..='\u{fe0f}').contains(&c)
        || ('\u{1f3fb}'..='\u{1f3ff}').contains(&c)
}

/// Split normalized text into tokens.
pub fn tokenize(normalized: &str) -> Vec<String> {
    let chars: Vec<char> = normalized.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut kind: Option<TokenKind> = None;
    let mut last: Option<char> = None;

    let mut flush = |current: &mut String, kind: &mut Option<TokenKind>| {
        if !current.is_empty() {
            tokens.push(std::mem::take(current));
        }
        *kind = None;
    };

    for (i, &c) in chars.iter().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, &mut kind);
            last = None;
            continue;
        }
        if is_attachment(c) {
            if kind.is_none() {
                kind = Some(TokenKind::Word);
            }
            current.push(c);
        } else if c.is_alphanumeric() {
            if kind != Some(TokenKind::Word) {
                flush(&mut current, &mut kind);
                kind = Some(TokenKind::Word);
            }
            current.push(c);
        } else if is_apostrophe(c)
            && kind == Some(TokenKind::Word)
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if c.is_ascii() || is_apostrophe(c) {
            if kind != Some(TokenKind::Punct) {
                flush(&mut current, &mut kind);
                kind = Some(TokenKind::Punct);
            }
            current.push(c);
        } else {
            let joined = kind == Some(TokenKind::Symbol) && last == Some(ZWJ);
            if !joined {
                flush(&mut current, &mut kind);
                kind = Some(TokenKind::Symbol);
            }
            current.push(c);
        }
        last = Some(c);
    }
    flush(&mut current, &mut kind);
    tokens
}

/// Sparse count vector of hashed letter trigrams.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrigramVector {
    dim: usize,
    /// Sorted by index, unique, every count ≥ 1.
    entries: Vec<(u32, u32)>,
}

impl TrigramVector {
    pub fn empty(dim: usize) -> Self {
        assert!(dim >= 1, "trigram dimension must be positive");
        Self {
            dim,
            entries: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(u32, u32)] {
        &self.entries
    }

    pub fn get(&self, index: u32) -> u32 {
        self.entries
            .binary_search_by_key(&index, |&(i, _)| i)
            .map(|pos| self.entries[pos].1)
            .unwrap_or(0)
    }

    pub fn l1_norm(&self) -> u64 {
        self.entries.iter().map(|&(_, c)| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Elementwise sum of two vectors of equal dimension.
    pub fn add(&self, other: &TrigramVector) -> TrigramVector {
        assert_eq!(self.dim, other.dim, "trigram dimensions differ");
        let mut merged: BTreeMap<u32, u32> = self.entries.iter().copied().collect();
        for &(i, c) in &other.entries {
            *merged.entry(i).or_insert(0) += c;
        }
        TrigramVector {
            dim: self.dim,
            entries: merged.into_iter().collect(),
        }
    }

    fn from_counts(dim: usize, counts: BTreeMap<u32, u32>) -> Self {
        Self {
            dim,
            entries: counts.into_iter().collect(),
        }
    }
}

/// The boundary-padded letter trigrams of one token, in order.
pub fn token_trigrams(token: &str) -> Vec<String> {
    let padded: Vec<char> = std::iter::once(BOUNDARY)
        .chain(token.chars())
        .chain(std::iter::once(BOUNDARY))
        .collect();
    padded.windows(3).map(|w| w.iter().collect()).collect()
}

/// Stable feature-hash bucket of a trigram.
pub fn trigram_index(trigram: &str, dim: usize) -> u32 {
    (fnv1a64(trigram.as_bytes()) % dim as u64) as u32
}

/// Hash all trigrams of all tokens into one count vector.
pub fn letter_trigram_vector<S: AsRef<str>>(tokens: &[S], dim: usize) -> TrigramVector {
    assert!(dim >= 1, "trigram dimension must be positive");
    let mut counts = BTreeMap::new();
    for token in tokens {
        for tri in token_trigrams(token.as_ref()) {
            *counts.entry(trigram_index(&tri, dim)).or_insert(0u32) += 1;
        }
    }
    TrigramVector::from_counts(dim, counts)
}

/// One trigram vector per token: the word-level input sequence of the
/// convolutional encoder.
pub fn token_trigram_sequence<S: AsRef<str>>(tokens: &[S], dim: usize) -> Vec<TrigramVector> {
    tokens
        .iter()
        .map(|t| letter_trigram_vector(std::slice::from_ref(t), dim))
        .collect()
}

/// Token counts of an utterance.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TermBag {
    pub terms: BTreeMap<String, u32>,
}

impl TermBag {
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Self {
        let mut terms = BTreeMap::new();
        for t in tokens {
            *terms.entry(t.as_ref().to_string()).or_insert(0) += 1;
        }
        Self { terms }
    }

    pub fn total(&self) -> u64 {
        self.terms.values().map(|&c| u64::from(c)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }
}
