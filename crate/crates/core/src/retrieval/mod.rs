//! Sparse (BM25) and dense (cosine) retrieval over a [`Collection`].

mod dense;
mod embed;
mod sparse;
mod tokenize;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::corpus::{Collection, Polarity};
use crate::error::{Error, Result};

pub use dense::{cosine, dense_search, EmbeddingMatrix};
pub use embed::{
    embed_batch, Embedder, EmbedderHandle, EmbeddingCache, HashingEmbedder, HttpEmbedder,
    HttpEmbedderConfig,
};
pub use sparse::{build_sparse_index, sparse_search, Bm25Params, Posting, SparseIndex};
pub use tokenize::Tokenizer;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub doc_id: String,
    pub score: f64,
}

/// Top-k result for one query: score descending, ties by ascending doc id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub query_id: String,
    pub entries: Vec<RankedEntry>,
    pub k_requested: usize,
}

impl RankedList {
    pub fn empty(query_id: impl Into<String>, k: usize) -> Self {
        RankedList {
            query_id: query_id.into(),
            entries: Vec::new(),
            k_requested: k,
        }
    }

    pub fn doc_ids(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.doc_id.as_str())
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn rank_order(a: &(&str, f64), b: &(&str, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0))
}

/// Keep the `k` best `(doc_id, score)` pairs under the ranking order.
pub(crate) fn top_k(mut scored: Vec<(&str, f64)>, k: usize) -> Vec<RankedEntry> {
    if k == 0 {
        return Vec::new();
    }
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, rank_order);
        scored.truncate(k);
    }
    scored.sort_unstable_by(rank_order);
    scored
        .into_iter()
        .map(|(id, score)| RankedEntry {
            doc_id: id.to_string(),
            score,
        })
        .collect()
}

/// How the retrieval query is built from a benchmark item.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryMode {
    #[default]
    ContextAndQuestion,
    QuestionOnly,
}

impl QueryMode {
    pub fn build(self, context: &str, question: &str) -> String {
        match self {
            QueryMode::ContextAndQuestion => format!("{} {}", context.trim(), question.trim()),
            QueryMode::QuestionOnly => question.trim().to_string(),
        }
    }
}

/// Share of retrieved entries, pooled over all lists with multiplicity, whose
/// document is a stereotype.
pub fn stereo_fraction(lists: &[RankedList], c: &Collection) -> Result<f64> {
    let mut total = 0usize;
    let mut stereo = 0usize;
    for list in lists {
        for id in list.doc_ids() {
            let doc = c
                .get(id)
                .ok_or_else(|| Error::UnknownDocument(id.to_string()))?;
            total += 1;
            if doc.polarity == Polarity::Stereotype {
                stereo += 1;
            }
        }
    }
    if total == 0 {
        return Err(Error::UndefinedMetric(
            "stereo fraction of zero retrieved documents".into(),
        ));
    }
    Ok(stereo as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_collection, BiasCategory, CollectionSpec, Document, Language, PolarityFilter};

    #[test]
    fn top_k_orders_and_breaks_ties() {
        let scored = vec![("c", 1.0), ("a", 2.0), ("b", 1.0), ("d", 0.5)];
        let out = top_k(scored.clone(), 3);
        let ids: Vec<_> = out.iter().map(|e| e.doc_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(top_k(scored.clone(), 10).len(), 4);
        assert!(top_k(scored, 0).is_empty());
    }

    #[test]
    fn query_modes() {
        assert_eq!(QueryMode::ContextAndQuestion.build(" ctx ", "q?"), "ctx q?");
        assert_eq!(QueryMode::QuestionOnly.build("ctx", " q? "), "q?");
    }

    fn docs() -> Vec<Document> {
        (0..6)
            .map(|i| Document {
                id: format!("d{i}"),
                text: format!("doc {i}"),
                bias_category: BiasCategory::Age,
                polarity: if i < 2 { Polarity::Stereotype } else { Polarity::AntiStereotype },
                source_dataset: "t".into(),
                language: Language::En,
            })
            .collect()
    }

    #[test]
    fn stereo_fraction_pools_with_multiplicity() {
        let spec = CollectionSpec::new(PolarityFilter::Full, [BiasCategory::Age], [Language::En]);
        let c = build_collection(&docs(), &spec).unwrap();
        let list = |ids: &[&str]| RankedList {
            query_id: "q".into(),
            entries: ids.iter().map(|id| RankedEntry { doc_id: id.to_string(), score: 1.0 }).collect(),
            k_requested: ids.len(),
        };
        let f = stereo_fraction(&[list(&["d0", "d2"]), list(&["d0", "d3"])], &c).unwrap();
        assert_eq!(f, 0.5);
        assert!(matches!(
            stereo_fraction(&[list(&["zz"])], &c),
            Err(Error::UnknownDocument(_))
        ));
        assert!(stereo_fraction(&[], &c).is_err());
    }
}
