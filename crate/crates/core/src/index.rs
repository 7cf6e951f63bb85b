//! TF-IDF inverted index over the message side of each pair, and top-k
//! candidate fetch by cosine similarity.
//!
//! Weights: `idf(t) = ln((N+1)/(df(t)+1)) + 1`, raw-count tf, cosine
//! normalization. Query terms from the current message weigh 1.0 each,
//! context terms 0.5. Scores are accumulated only through posting lists, in
//! ascending term order, so [`InvertedIndex::tfidf_score`] reproduces the
//! fetch score bit for bit.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{validate_corpus, PairLine, PairRecord};
use crate::error::{Error, Result};
use crate::text::{TermBag, Utterance};

pub const INDEX_FORMAT_VERSION: &str = "chatir-index/1";

/// Weight of every context token in the query bag.
pub const CONTEXT_WEIGHT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Posting {
    pub id: u32,
    pub tf: u32,
}

/// Weighted query terms.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QueryBag {
    pub weights: BTreeMap<String, f64>,
}

impl QueryBag {
    pub fn from_message(message: &Utterance, context: &[Utterance]) -> Self {
        let mut weights = BTreeMap::new();
        for tok in &message.tokens {
            *weights.entry(tok.clone()).or_insert(0.0) += 1.0;
        }
        for utt in context {
            for tok in &utt.tokens {
                *weights.entry(tok.clone()).or_insert(0.0) += CONTEXT_WEIGHT;
            }
        }
        Self { weights }
    }

    pub fn from_terms(bag: &TermBag) -> Self {
        Self {
            weights: bag.terms.iter().map(|(t, &c)| (t.clone(), f64::from(c))).collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchResult {
    /// `(pair id, score)`, score descending, ties by ascending id.
    pub candidates: Vec<(u32, f64)>,
    pub query: QueryBag,
}

#[derive(Debug, Clone)]
pub struct InvertedIndex {
    records: Vec<PairRecord>,
    /// Sorted vocabulary; `postings[i]` belongs to `terms[i]`.
    terms: Vec<String>,
    postings: Vec<Vec<Posting>>,
    idf: Vec<f64>,
    doc_norms: Vec<f64>,
    term_ids: HashMap<String, u32>,
}

fn idf_value(doc_count: usize, df: usize) -> f64 {
    ((doc_count as f64 + 1.0) / (df as f64 + 1.0)).ln() + 1.0
}

impl InvertedIndex {
    pub fn build(corpus: Vec<PairRecord>) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        validate_corpus(&corpus)?;
        let mut by_term: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        for rec in &corpus {
            let bag = TermBag::from_tokens(&rec.message.tokens);
            for (term, &tf) in &bag.terms {
                // Records arrive in id order, so lists stay sorted.
                by_term
                    .entry(term.clone())
                    .or_default()
                    .push(Posting { id: rec.id, tf });
            }
        }
        let terms: Vec<String> = by_term.keys().cloned().collect();
        let postings: Vec<Vec<Posting>> = by_term.into_values().collect();
        let n = corpus.len();
        let idf: Vec<f64> = postings.iter().map(|p| idf_value(n, p.len())).collect();
        let mut sq = vec![0.0f64; n];
        for (plist, &w) in postings.iter().zip(&idf) {
            for p in plist {
                let v = f64::from(p.tf) * w;
                sq[p.id as usize] += v * v;
            }
        }
        let doc_norms = sq.into_iter().map(f64::sqrt).collect();
        Ok(Self::assemble(corpus, terms, postings, doc_norms))
    }

    fn assemble(
        records: Vec<PairRecord>,
        terms: Vec<String>,
        postings: Vec<Vec<Posting>>,
        doc_norms: Vec<f64>,
    ) -> Self {
        let n = records.len();
        let idf = postings.iter().map(|p| idf_value(n, p.len())).collect();
        let term_ids = terms
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self {
            records,
            terms,
            postings,
            idf,
            doc_norms,
            term_ids,
        }
    }

    pub fn doc_count(&self) -> usize {
        self.records.len()
    }

    pub fn records(&self) -> &[PairRecord] {
        &self.records
    }

    pub fn record(&self, id: u32) -> Result<&PairRecord> {
        self.records.get(id as usize).ok_or(Error::UnknownPairId(id))
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.terms
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.term_ids
            .get(term)
            .map_or(&[][..], |&i| &self.postings[i as usize])
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    /// Inverse document frequency; `None` for terms outside the vocabulary.
    pub fn idf(&self, term: &str) -> Option<f64> {
        self.term_ids.get(term).map(|&i| self.idf[i as usize])
    }

    pub fn doc_norm(&self, id: u32) -> Result<f64> {
        self.doc_norms
            .get(id as usize)
            .copied()
            .ok_or(Error::UnknownPairId(id))
    }

    /// Query-side weights `(term id, w·idf)` in ascending term order, and
    /// the query norm. Out-of-vocabulary terms are dropped.
    fn query_vector(&self, query: &QueryBag) -> (Vec<(u32, f64)>, f64) {
        let mut vec = Vec::with_capacity(query.weights.len());
        let mut sq = 0.0;
        for (term, &w) in &query.weights {
            if let Some(&tid) = self.term_ids.get(term) {
                let qw = w * self.idf[tid as usize];
                sq += qw * qw;
                vec.push((tid, qw));
            }
        }
        (vec, sq.sqrt())
    }

    #[inline]
    fn contribution(&self, tid: u32, qw: f64, tf: u32) -> f64 {
        qw * (f64::from(tf) * self.idf[tid as usize])
    }

    /// Cosine between the query and one indexed message.
    pub fn tfidf_score(&self, query: &QueryBag, id: u32) -> Result<f64> {
        let dnorm = self.doc_norm(id)?;
        let (qvec, qnorm) = self.query_vector(query);
        let mut acc = 0.0;
        let mut hit = false;
        for &(tid, qw) in &qvec {
            let plist = &self.postings[tid as usize];
            if let Ok(pos) = plist.binary_search_by_key(&id, |p| p.id) {
                acc += self.contribution(tid, qw, plist[pos].tf);
                hit = true;
            }
        }
        if !hit {
            return Ok(0.0);
        }
        Ok(acc / (qnorm * dnorm))
    }

    pub fn fetch(&self, query: &QueryBag, k: usize) -> FetchResult {
        let (qvec, qnorm) = self.query_vector(query);
        let mut acc = vec![0.0f64; self.records.len()];
        let mut touched: Vec<u32> = Vec::new();
        for &(tid, qw) in &qvec {
            for p in &self.postings[tid as usize] {
                let slot = &mut acc[p.id as usize];
                if *slot == 0.0 {
                    touched.push(p.id);
                }
                *slot += self.contribution(tid, qw, p.tf);
            }
        }
        let mut scored: Vec<(u32, f64)> = touched
            .into_iter()
            .map(|id| (id, acc[id as usize] / (qnorm * self.doc_norms[id as usize])))
            .collect();
        let order = |a: &(u32, f64), b: &(u32, f64)| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0));
        if k < scored.len() {
            scored.select_nth_unstable_by(k, order);
            scored.truncate(k);
        }
        scored.sort_by(order);
        FetchResult {
            candidates: scored,
            query: query.clone(),
        }
    }

    /// Top-k pairs whose messages best match `message` plus down-weighted
    /// `context`.
    pub fn fetch_candidates(&self, message: &Utterance, context: &[Utterance], k: usize) -> FetchResult {
        self.fetch(&QueryBag::from_message(message, context), k)
    }

    /// Cosine between the query and an arbitrary token list, weighted with
    /// this index's idf. Used to score texts that are not indexed messages.
    pub fn score_tokens<S: AsRef<str>>(&self, query: &QueryBag, tokens: &[S]) -> f64 {
        let (qvec, qnorm) = self.query_vector(query);
        let mut tf: BTreeMap<u32, u32> = BTreeMap::new();
        for t in tokens {
            if let Some(&tid) = self.term_ids.get(t.as_ref()) {
                *tf.entry(tid).or_insert(0) += 1;
            }
        }
        let dnorm = tf
            .iter()
            .map(|(&tid, &c)| {
                let v = f64::from(c) * self.idf[tid as usize];
                v * v
            })
            .sum::<f64>()
            .sqrt();
        let mut acc = 0.0;
        for &(tid, qw) in &qvec {
            if let Some(&c) = tf.get(&tid) {
                acc += self.contribution(tid, qw, c);
            }
        }
        if acc == 0.0 {
            0.0
        } else {
            acc / (qnorm * dnorm)
        }
    }

    pub fn to_artifact(&self) -> IndexArtifact {
        IndexArtifact {
            format_version: INDEX_FORMAT_VERSION.to_string(),
            records: self.records.iter().map(PairRecord::to_line).collect(),
            terms: self.terms.clone(),
            postings: self
                .postings
                .iter()
                .map(|pl| pl.iter().map(|p| (p.id, p.tf)).collect())
                .collect(),
            doc_norms: self.doc_norms.clone(),
        }
    }

    pub fn from_artifact(artifact: IndexArtifact) -> Result<Self> {
        if artifact.format_version != INDEX_FORMAT_VERSION {
            return Err(Error::FormatVersionMismatch {
                expected: INDEX_FORMAT_VERSION.to_string(),
                found: artifact.format_version,
            });
        }
        let records: Vec<PairRecord> = artifact.records.into_iter().map(PairRecord::from).collect();
        if records.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        validate_corpus(&records)?;
        let n = records.len();
        let bad = |msg: &str| Error::CorruptCheckpoint(format!("index artifact: {msg}"));
        if artifact.terms.len() != artifact.postings.len() || artifact.doc_norms.len() != n {
            return Err(bad("table lengths disagree"));
        }
        if artifact.terms.windows(2).any(|w| w[0] >= w[1]) {
            return Err(bad("vocabulary not sorted"));
        }
        let mut postings = Vec::with_capacity(artifact.postings.len());
        for plist in artifact.postings {
            if plist.is_empty()
                || plist.windows(2).any(|w| w[0].0 >= w[1].0)
                || plist.iter().any(|&(id, tf)| id as usize >= n || tf == 0)
            {
                return Err(bad("malformed posting list"));
            }
            postings.push(plist.into_iter().map(|(id, tf)| Posting { id, tf }).collect());
        }
        Ok(Self::assemble(records, artifact.terms, postings, artifact.doc_norms))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = serde_json::to_vec(&self.to_artifact())?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_artifact(serde_json::from_slice(&bytes)?)
    }
}

pub fn build_index(corpus: Vec<PairRecord>) -> Result<InvertedIndex> {
    InvertedIndex::build(corpus)
}

/// Persisted index: records, vocabulary, postings and document norms.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IndexArtifact {
    pub format_version: String,
    pub records: Vec<PairLine>,
    pub terms: Vec<String>,
    pub postings: Vec<Vec<(u32, u32)>>,
    pub doc_norms: Vec<f64>,
}
