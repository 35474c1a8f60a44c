use serde::{Deserialize, Serialize};

use super::{top_k, RankedList};
use crate::error::{Error, Result};

/// Row-per-document embedding matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMatrix {
    dim: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
    model_tag: String,
    #[serde(skip)]
    norms: Vec<f64>,
}

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| x as f64 * x as f64).sum::<f64>().sqrt()
}

fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

/// Cosine similarity in f64. Errors on a zero vector or a length mismatch.
pub fn cosine(a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    let (na, nb) = (norm(a), norm(b));
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroVector("cosine of a zero vector".into()));
    }
    Ok((dot(a, b) / (na * nb)).clamp(-1.0, 1.0))
}

impl EmbeddingMatrix {
    pub fn new(ids: Vec<String>, vectors: Vec<Vec<f32>>, model_tag: impl Into<String>) -> Result<Self> {
        if ids.len() != vectors.len() {
            return Err(Error::Input(format!(
                "{} ids for {} vectors",
                ids.len(),
                vectors.len()
            )));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if vectors.is_empty() || dim == 0 {
            return Err(Error::Input("embedding matrix needs at least one non-empty vector".into()));
        }
        for (id, v) in ids.iter().zip(&vectors) {
            if v.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: v.len(),
                });
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Input(format!("embedding for `{id}` has non-finite values")));
            }
        }
        let norms = vectors.iter().map(|v| norm(v)).collect();
        Ok(EmbeddingMatrix {
            dim,
            ids,
            vectors,
            model_tag: model_tag.into(),
            norms,
        })
    }

    /// Replace positional ids with document ids.
    pub fn with_ids(self, ids: Vec<String>) -> Result<Self> {
        EmbeddingMatrix::new(ids, self.vectors, self.model_tag)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn vectors(&self) -> &[Vec<f32>] {
        &self.vectors
    }

    pub fn model_tag(&self) -> &str {
        &self.model_tag
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.ids
            .iter()
            .position(|x| x == id)
            .map(|i| self.vectors[i].as_slice())
    }
}

/// Exact cosine top-k by full scan. A zero document vector scores 0.
pub fn dense_search(m: &EmbeddingMatrix, query_id: &str, query_vec: &[f32], k: usize) -> Result<RankedList> {
    if query_vec.len() != m.dim {
        return Err(Error::DimensionMismatch {
            expected: m.dim,
            actual: query_vec.len(),
        });
    }
    let qn = norm(query_vec);
    if qn == 0.0 {
        return Err(Error::ZeroVector(format!("query `{query_id}`")));
    }
    let norms: Vec<f64>;
    let norms = if m.norms.len() == m.vectors.len() {
        &m.norms
    } else {
        norms = m.vectors.iter().map(|v| norm(v)).collect();
        &norms
    };
    let scored: Vec<(&str, f64)> = m
        .vectors
        .iter()
        .zip(norms)
        .zip(&m.ids)
        .map(|((v, &n), id)| {
            let s = if n == 0.0 {
                0.0
            } else {
                (dot(v, query_vec) / (n * qn)).clamp(-1.0, 1.0)
            };
            (id.as_str(), s)
        })
        .collect();
    Ok(RankedList {
        query_id: query_id.to_string(),
        entries: top_k(scored, k),
        k_requested: k,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> EmbeddingMatrix {
        EmbeddingMatrix::new(
            vec!["a".into(), "b".into(), "c".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]],
            "toy",
        )
        .unwrap()
    }

    #[test]
    fn exact_match_ranks_first() {
        let out = dense_search(&matrix(), "q", &[0.0, 1.0], 2).unwrap();
        assert_eq!(out.entries[0].doc_id, "b");
        assert!((out.entries[0].score - 1.0).abs() < 1e-12);
    }

    #[test]
    fn k_beyond_corpus_returns_all() {
        let out = dense_search(&matrix(), "q", &[1.0, 0.2], 50).unwrap();
        assert_eq!(out.entries.len(), 3);
    }

    #[test]
    fn zero_query_is_error() {
        assert!(matches!(dense_search(&matrix(), "q", &[0.0, 0.0], 1), Err(Error::ZeroVector(_))));
        assert!(dense_search(&matrix(), "q", &[1.0], 1).is_err());
    }

    #[test]
    fn construction_checks() {
        assert!(EmbeddingMatrix::new(vec!["a".into(), "b".into()], vec![vec![1.0], vec![1.0, 2.0]], "m").is_err());
        assert!(EmbeddingMatrix::new(vec!["a".into()], vec![vec![f32::NAN]], "m").is_err());
        assert!(EmbeddingMatrix::new(vec![], vec![], "m").is_err());
    }

    #[test]
    fn cosine_bounds() {
        assert!((cosine(&[1.0, 0.0], &[-2.0, 0.0]).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine(&[0.0], &[1.0]).is_err());
    }
}
