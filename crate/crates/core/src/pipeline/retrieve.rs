use std::collections::HashMap;
use std::path::Path;

use crate::benchmark::{BbqInstance, View};
use crate::corpus::Collection;
use crate::error::{Error, Result};
use crate::retrieval::{
    build_sparse_index, dense_search, embed_batch, sparse_search, EmbedderHandle, EmbeddingCache, EmbeddingMatrix,
    HashingEmbedder, HttpEmbedder, QueryMode, RankedList, SparseIndex,
};

use super::config::{EmbedderConfig, RetrieverKind};

pub(crate) type QueryKey = (String, View);

pub(crate) enum Index {
    Sparse(SparseIndex),
    Dense { handle: EmbedderHandle, matrix: EmbeddingMatrix },
}

/// Retrieval results of one benchmark against one index, at the largest k.
#[derive(Default)]
pub(crate) struct Retrieved {
    pub lists: HashMap<QueryKey, RankedList>,
    pub query_vecs: HashMap<QueryKey, Vec<f32>>,
    pub zero_queries: Vec<QueryKey>,
}

impl Retrieved {
    pub fn top(&self, id: &str, view: View, k: usize) -> Vec<&str> {
        self.lists
            .get(&(id.to_string(), view))
            .map(|l| l.doc_ids().take(k).collect())
            .unwrap_or_default()
    }

    /// Lists truncated to `k`, in instance order.
    pub fn truncated(&self, instances: &[BbqInstance], k: usize) -> Vec<RankedList> {
        let mut out = Vec::new();
        for inst in instances {
            for view in View::BOTH {
                if let Some(l) = self.lists.get(&(inst.id.clone(), view)) {
                    let mut l = l.clone();
                    l.entries.truncate(k);
                    l.k_requested = k;
                    out.push(l);
                }
            }
        }
        out
    }
}

pub(crate) fn embedder_handle(
    cfg: &EmbedderConfig,
    cache_dir: &Path,
    max_in_flight: usize,
    open_cache: bool,
) -> Result<EmbedderHandle> {
    let handle = match cfg {
        EmbedderConfig::Hashing { dim, tokenizer } => {
            if *dim == 0 {
                return Err(Error::Config("hashing embedder needs dim > 0".into()));
            }
            EmbedderHandle::new(Box::new(HashingEmbedder::new(*dim, *tokenizer)))
        }
        EmbedderConfig::Http(c) => {
            let mut h = EmbedderHandle::new(Box::new(HttpEmbedder::new(c.clone())?)).with_limits(64, max_in_flight);
            let dir = cache_dir.join("embeddings");
            if open_cache || dir.exists() {
                h = h.with_cache(EmbeddingCache::open(dir)?);
            }
            h
        }
    };
    Ok(handle)
}

/// Texts a dense index over `c` would still need to embed.
pub(crate) fn uncached_doc_texts(handle: &EmbedderHandle, c: &Collection) -> usize {
    let texts: Vec<String> = c.documents().iter().map(|d| d.text.clone()).collect();
    handle.uncached(&texts).len()
}

pub(crate) fn build_index(
    kind: &RetrieverKind,
    c: &Collection,
    cache_dir: &Path,
    max_in_flight: usize,
    open_cache: bool,
) -> Result<Index> {
    match kind {
        RetrieverKind::None => Err(Error::Config("retriever `none` has no index".into())),
        RetrieverKind::Sparse { params, tokenizer } => Ok(Index::Sparse(build_sparse_index(c, *params, *tokenizer)?)),
        RetrieverKind::Dense { embedder } => {
            let handle = embedder_handle(embedder, cache_dir, max_in_flight, open_cache)?;
            let texts: Vec<String> = c.documents().iter().map(|d| d.text.clone()).collect();
            let ids: Vec<String> = c.documents().iter().map(|d| d.id.clone()).collect();
            let matrix = embed_batch(&texts, &handle)?.with_ids(ids)?;
            Ok(Index::Dense { handle, matrix })
        }
    }
}

pub(crate) fn query_keys(instances: &[BbqInstance], mode: QueryMode) -> Vec<(QueryKey, String)> {
    instances
        .iter()
        .flat_map(|inst| {
            View::BOTH
                .into_iter()
                .map(move |view| ((inst.id.clone(), view), mode.build(inst.context(view), &inst.question)))
        })
        .collect()
}

fn query_id((id, view): &QueryKey) -> String {
    format!("{id}:{view}")
}

pub(crate) fn retrieve(index: &Index, instances: &[BbqInstance], mode: QueryMode, k: usize) -> Result<Retrieved> {
    let queries = query_keys(instances, mode);
    let mut out = Retrieved::default();
    match index {
        Index::Sparse(idx) => {
            for (key, text) in queries {
                out.lists.insert(key.clone(), sparse_search(idx, &query_id(&key), &text, k));
            }
        }
        Index::Dense { handle, matrix } => {
            let texts: Vec<String> = queries.iter().map(|(_, t)| t.clone()).collect();
            let vecs = handle.embed_texts(&texts)?;
            for ((key, _), v) in queries.into_iter().zip(vecs) {
                let list = match dense_search(matrix, &query_id(&key), &v, k) {
                    Ok(l) => l,
                    Err(Error::ZeroVector(_)) => {
                        log::warn!("query {} embeds to the zero vector; no documents retrieved", query_id(&key));
                        out.zero_queries.push(key.clone());
                        RankedList::empty(query_id(&key), k)
                    }
                    Err(e) => return Err(e),
                };
                out.lists.insert(key.clone(), list);
                out.query_vecs.insert(key, v);
            }
        }
    }
    Ok(out)
}
