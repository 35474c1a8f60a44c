//! Okapi BM25 over an inverted index.
//!
//! score(d, q) = Σ_{t ∈ distinct(q)} idf(t) · tf(t,d)·(k1+1) / (tf(t,d) + k1·(1 − b + b·|d|/avgdl))
//! idf(t)      = max(0, ln((N − df(t) + 0.5) / (df(t) + 0.5)))

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::{top_k, RankedList, Tokenizer};
use crate::corpus::Collection;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Bm25Params { k1: 1.2, b: 0.75 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Posting {
    pub doc: u32,
    pub tf: u32,
}

#[derive(Debug, Clone)]
pub struct SparseIndex {
    params: Bm25Params,
    tokenizer: Tokenizer,
    doc_ids: Vec<String>,
    doc_lens: Vec<u32>,
    avgdl: f64,
    postings: HashMap<String, Vec<Posting>>,
}

impl SparseIndex {
    /// Index arbitrary `(id, text)` pairs. Postings are in insertion order.
    pub fn from_texts<'a, I>(docs: I, params: Bm25Params, tokenizer: Tokenizer) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        if !(params.k1 >= 0.0 && (0.0..=1.0).contains(&params.b)) {
            return Err(Error::Config(format!(
                "invalid BM25 parameters k1={} b={}",
                params.k1, params.b
            )));
        }
        let mut doc_ids = Vec::new();
        let mut doc_lens = Vec::new();
        let mut postings: HashMap<String, Vec<Posting>> = HashMap::new();

        for (doc, (id, text)) in docs.into_iter().enumerate() {
            let tokens = tokenizer.tokenize(text);
            let mut tf: HashMap<String, u32> = HashMap::new();
            for t in &tokens {
                *tf.entry(t.clone()).or_default() += 1;
            }
            for (term, count) in tf {
                postings.entry(term).or_default().push(Posting {
                    doc: doc as u32,
                    tf: count,
                });
            }
            doc_ids.push(id.to_string());
            doc_lens.push(tokens.len() as u32);
        }
        for list in postings.values_mut() {
            list.sort_unstable_by_key(|p| p.doc);
        }

        if doc_ids.is_empty() {
            return Err(Error::Input("cannot index an empty collection".into()));
        }
        let total_len: u64 = doc_lens.iter().map(|&l| l as u64).sum();
        if total_len == 0 {
            return Err(Error::Input(
                "every document tokenizes to nothing; sparse index would be empty".into(),
            ));
        }
        Ok(SparseIndex {
            params,
            tokenizer,
            avgdl: total_len as f64 / doc_ids.len() as f64,
            doc_ids,
            doc_lens,
            postings,
        })
    }

    pub fn params(&self) -> Bm25Params {
        self.params
    }

    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn num_docs(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn avgdl(&self) -> f64 {
        self.avgdl
    }

    pub fn doc_len(&self, doc: usize) -> u32 {
        self.doc_lens[doc]
    }

    pub fn doc_id(&self, doc: usize) -> &str {
        &self.doc_ids[doc]
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn postings(&self, term: &str) -> &[Posting] {
        self.postings.get(term).map_or(&[], Vec::as_slice)
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings(term).len()
    }

    pub fn idf(&self, term: &str) -> f64 {
        let n = self.num_docs() as f64;
        let df = self.doc_freq(term) as f64;
        ((n - df + 0.5) / (df + 0.5)).ln().max(0.0)
    }

    fn term_weight(&self, tf: u32, doc_len: u32) -> f64 {
        let Bm25Params { k1, b } = self.params;
        let tf = tf as f64;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * doc_len as f64 / self.avgdl))
    }
}

pub fn build_sparse_index(c: &Collection, params: Bm25Params, tokenizer: Tokenizer) -> Result<SparseIndex> {
    SparseIndex::from_texts(
        c.documents().iter().map(|d| (d.id.as_str(), d.text.as_str())),
        params,
        tokenizer,
    )
}

/// BM25 top-k. Only documents sharing at least one term with the query are
/// candidates, so a query with no overlap (or no tokens) yields an empty list.
pub fn sparse_search(idx: &SparseIndex, query_id: &str, query: &str, k: usize) -> RankedList {
    let mut seen = HashSet::new();
    let terms: Vec<String> = idx
        .tokenizer
        .tokenize(query)
        .into_iter()
        .filter(|t| seen.insert(t.clone()))
        .collect();
    if terms.is_empty() {
        log::warn!("query `{query_id}` tokenizes to nothing; returning no documents");
        return RankedList::empty(query_id, k);
    }

    let mut scores: HashMap<u32, f64> = HashMap::new();
    for term in &terms {
        let idf = idx.idf(term);
        for p in idx.postings(term) {
            let w = idf * idx.term_weight(p.tf, idx.doc_lens[p.doc as usize]);
            *scores.entry(p.doc).or_insert(0.0) += w;
        }
    }
    let scored: Vec<(&str, f64)> = scores
        .into_iter()
        .map(|(doc, s)| (idx.doc_ids[doc as usize].as_str(), s))
        .collect();
    RankedList {
        query_id: query_id.to_string(),
        entries: top_k(scored, k),
        k_requested: k,
    }
}
