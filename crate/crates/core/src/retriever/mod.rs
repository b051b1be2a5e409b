//! Okapi BM25 fuzzy-match retrieval over a translation memory.
//!
//! Only source sides are indexed; a query returns the target sides of the
//! best-scoring entries. Scoring uses the non-negative IDF variant
//! `ln(1 + (N − n_t + 0.5) / (n_t + 0.5))`, so every score is `≥ 0` and
//! entries without any overlapping term score exactly zero and are dropped.

mod persist;
mod tm;

use std::collections::BTreeMap;

pub use tm::TranslationMemory;

use crate::exec::Exec;

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum RetrievalError {
    #[error("retriever: translation memory is empty")]
    EmptyMemory,
    #[error("retriever: entry {0} has an empty side")]
    EmptyEntry(usize),
    #[error("retriever: entry id {id} out of range for {size} entries")]
    EntryOutOfRange { id: usize, size: usize },
    #[error("retriever: malformed input at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("retriever: malformed index file: {0}")]
    Format(String),
    #[error("retriever: {0}")]
    Io(String),
}

type Result<T> = std::result::Result<T, RetrievalError>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Lowercase, split on anything that is not alphanumeric. No stemming and
/// no stopword removal.
pub fn retrieval_terms(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct Posting {
    pub entry: u32,
    pub tf: u32,
}

/// Immutable inverted index over the source sides of a translation memory.
#[derive(Clone, Debug, PartialEq)]
pub struct TmIndex {
    postings: BTreeMap<String, Vec<Posting>>,
    doc_lengths: Vec<u32>,
    avgdl: f64,
    params: Bm25Params,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FuzzyMatch {
    pub entry_id: usize,
    pub score: f64,
    pub target: String,
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct FuzzyMatchSet {
    pub matches: Vec<FuzzyMatch>,
    pub k_requested: usize,
}

impl FuzzyMatchSet {
    pub fn targets(&self) -> Vec<&str> {
        self.matches.iter().map(|m| m.target.as_str()).collect()
    }

    pub fn ids(&self) -> Vec<usize> {
        self.matches.iter().map(|m| m.entry_id).collect()
    }
}

impl TmIndex {
    pub fn build(tm: &TranslationMemory, params: Bm25Params) -> Result<Self> {
        if tm.is_empty() {
            return Err(RetrievalError::EmptyMemory);
        }
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut doc_lengths = Vec::with_capacity(tm.len());
        for (id, entry) in tm.entries().iter().enumerate() {
            let terms = retrieval_terms(&entry.source);
            doc_lengths.push(terms.len() as u32);
            let mut tf: BTreeMap<String, u32> = BTreeMap::new();
            for t in terms {
                *tf.entry(t).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting { entry: id as u32, tf: count });
            }
        }
        Ok(Self::from_parts(postings, doc_lengths, params))
    }

    fn from_parts(postings: BTreeMap<String, Vec<Posting>>, doc_lengths: Vec<u32>, params: Bm25Params) -> Self {
        let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
        let avgdl = total as f64 / doc_lengths.len() as f64;
        Self { postings, doc_lengths, avgdl, params }
    }

    pub fn len(&self) -> usize {
        self.doc_lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doc_lengths.is_empty()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn doc_lengths(&self) -> &[u32] {
        &self.doc_lengths
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn terms(&self) -> impl Iterator<Item = (&str, &[Posting])> {
        self.postings.iter().map(|(t, p)| (t.as_str(), p.as_slice()))
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let nt = self.postings(term).len() as f64;
        (1.0 + (n - nt + 0.5) / (nt + 0.5)).ln()
    }

    fn term_weight(&self, idf: f64, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let f = tf as f64;
        idf * f * (k1 + 1.0) / (f + k1 * (1.0 - b + b * doc_len as f64 / self.avgdl))
    }

    /// BM25 score of one entry. Query terms are summed with multiplicity;
    /// unknown terms contribute nothing.
    pub fn bm25_score(&self, query_terms: &[String], entry_id: usize) -> Result<f64> {
        if entry_id >= self.len() {
            return Err(RetrievalError::EntryOutOfRange { id: entry_id, size: self.len() });
        }
        let doc_len = self.doc_lengths[entry_id];
        let mut score = 0.0;
        for term in query_terms {
            let postings = self.postings(term);
            if let Ok(pos) = postings.binary_search_by_key(&(entry_id as u32), |p| p.entry) {
                score += self.term_weight(self.idf(term), postings[pos].tf, doc_len);
            }
        }
        Ok(score)
    }

    /// Top-`k` entries by score (ties by ascending id), zero scores omitted,
    /// `exclude` never returned.
    pub fn retrieve(&self, tm: &TranslationMemory, query: &str, k: usize, exclude: Option<usize>) -> FuzzyMatchSet {
        let mut set = FuzzyMatchSet { matches: Vec::new(), k_requested: k };
        if k == 0 {
            return set;
        }
        let terms = retrieval_terms(query);
        let mut scores: BTreeMap<u32, f64> = BTreeMap::new();
        for term in &terms {
            let postings = self.postings(term);
            if postings.is_empty() {
                continue;
            }
            let idf = self.idf(term);
            for p in postings {
                let w = self.term_weight(idf, p.tf, self.doc_lengths[p.entry as usize]);
                *scores.entry(p.entry).or_insert(0.0) += w;
            }
        }
        let mut ranked: Vec<(usize, f64)> = scores
            .into_iter()
            .map(|(id, s)| (id as usize, s))
            .filter(|&(id, s)| s > 0.0 && Some(id) != exclude)
            .collect();
        ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(k);
        set.matches = ranked
            .into_iter()
            .map(|(id, score)| FuzzyMatch { entry_id: id, score, target: tm.entries()[id].target.clone() })
            .collect();
        set
    }

    /// Retrieve for many queries; `excludes[i]` applies to `queries[i]`.
    pub fn retrieve_batch(
        &self,
        tm: &TranslationMemory,
        queries: &[&str],
        k: usize,
        excludes: Option<&[usize]>,
        exec: Exec,
    ) -> Vec<FuzzyMatchSet> {
        exec.map_range(queries.len(), |i| self.retrieve(tm, queries[i], k, excludes.map(|e| e[i])))
    }
}
