use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{EmbeddingMatrix, Tokenizer};
use crate::error::{Error, Result};
use crate::hashing::{fnv1a64, sha256_parts};
use crate::http::{self, RetryPolicy};

pub trait Embedder: Send + Sync {
    fn model_tag(&self) -> &str;

    /// One vector per input text, in input order.
    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>>;
}

/// Deterministic feature-hashing embedder for offline runs and tests: each
/// token adds 1 to coordinate `fnv1a64(token) mod dim`. Texts with disjoint
/// vocabularies are orthogonal unless two of their tokens collide.
#[derive(Debug, Clone)]
pub struct HashingEmbedder {
    dim: usize,
    tokenizer: Tokenizer,
    tag: String,
}

impl HashingEmbedder {
    pub fn new(dim: usize, tokenizer: Tokenizer) -> Self {
        assert!(dim > 0, "hashing embedder needs a positive dimension");
        HashingEmbedder {
            dim,
            tokenizer,
            tag: format!("hashing-{dim}-{tokenizer:?}").to_lowercase(),
        }
    }

    pub fn bucket(&self, token: &str) -> usize {
        (fnv1a64(token.as_bytes()) % self.dim as u64) as usize
    }

    pub fn embed_one(&self, text: &str) -> Vec<f32> {
        let mut v = vec![0f32; self.dim];
        for token in self.tokenizer.tokenize(text) {
            v[self.bucket(&token)] += 1.0;
        }
        v
    }
}

impl Embedder for HashingEmbedder {
    fn model_tag(&self) -> &str {
        &self.tag
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        Ok(texts.iter().map(|t| self.embed_one(t)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HttpEmbedderConfig {
    /// Full URL of the embeddings endpoint, e.g. `https://api.openai.com/v1/embeddings`.
    pub endpoint: String,
    pub model: String,
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default)]
    pub retry: RetryPolicy,
}

/// Client for services speaking the common embeddings schema:
/// request `{"model", "input": [..]}`, response `{"data": [{"embedding": [..], "index": i}]}`.
pub struct HttpEmbedder {
    config: HttpEmbedderConfig,
    client: reqwest::blocking::Client,
    api_key: Option<String>,
}

impl HttpEmbedder {
    pub fn new(config: HttpEmbedderConfig) -> Result<Self> {
        let client = http::client(&config.retry)?;
        let api_key = http::key_from_env(config.api_key_env.as_deref());
        Ok(HttpEmbedder {
            config,
            client,
            api_key,
        })
    }
}

impl Embedder for HttpEmbedder {
    fn model_tag(&self) -> &str {
        &self.config.model
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let body = serde_json::json!({ "model": self.config.model, "input": texts });
        let resp = http::post_json(
            &self.client,
            &self.config.endpoint,
            self.api_key.as_deref(),
            &body,
            &self.config.retry,
        )?;
        parse_embeddings_response(&resp, texts.len())
    }
}

fn parse_embeddings_response(resp: &serde_json::Value, expected: usize) -> Result<Vec<Vec<f32>>> {
    #[derive(Deserialize)]
    struct Item {
        embedding: Vec<f32>,
        #[serde(default)]
        index: Option<usize>,
    }
    #[derive(Deserialize)]
    struct Body {
        data: Vec<Item>,
    }
    let body: Body = serde_json::from_value(resp.clone())
        .map_err(|e| Error::MalformedResponse(format!("embeddings: {e}")))?;
    if body.data.len() != expected {
        return Err(Error::MalformedResponse(format!(
            "embeddings: {} vectors for {} inputs",
            body.data.len(),
            expected
        )));
    }
    let mut slots: Vec<Option<Vec<f32>>> = vec![None; expected];
    for (pos, item) in body.data.into_iter().enumerate() {
        let i = item.index.unwrap_or(pos);
        match slots.get_mut(i) {
            Some(slot @ None) => *slot = Some(item.embedding),
            _ => {
                return Err(Error::MalformedResponse(format!(
                    "embeddings: bad or repeated index {i}"
                )))
            }
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("all slots filled")).collect())
}

/// Content-addressed vector store. One file per `(model_tag, text)`:
/// an 8-byte little-endian dimension header followed by `dim` little-endian f32.
#[derive(Debug, Clone)]
pub struct EmbeddingCache {
    dir: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

impl EmbeddingCache {
    pub fn open(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        Ok(EmbeddingCache { dir })
    }

    pub fn key(model_tag: &str, text: &str) -> String {
        sha256_parts([model_tag, text])
    }

    fn path(&self, key: &str) -> PathBuf {
        self.dir.join(format!("{key}.bin"))
    }

    pub fn get(&self, model_tag: &str, text: &str) -> Option<Vec<f32>> {
        let bytes = fs::read(self.path(&Self::key(model_tag, text))).ok()?;
        decode_vector(&bytes)
    }

    pub fn put(&self, model_tag: &str, text: &str, v: &[f32]) -> Result<()> {
        let path = self.path(&Self::key(model_tag, text));
        let tmp = path.with_extension(format!(
            "tmp{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        fs::write(&tmp, encode_vector(v)).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| Error::io(&path, e))
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

pub(crate) fn encode_vector(v: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 4 * v.len());
    out.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub(crate) fn decode_vector(bytes: &[u8]) -> Option<Vec<f32>> {
    let header: [u8; 8] = bytes.get(..8)?.try_into().ok()?;
    let dim = u64::from_le_bytes(header) as usize;
    let body = &bytes[8..];
    if body.len() != dim.checked_mul(4)? {
        return None;
    }
    Some(
        body.chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("chunk of 4")))
            .collect(),
    )
}

/// An embedder plus its cache and batching limits.
pub struct EmbedderHandle {
    embedder: Box<dyn Embedder>,
    cache: Option<EmbeddingCache>,
    batch_size: usize,
    max_in_flight: usize,
    calls: AtomicUsize,
}

impl EmbedderHandle {
    pub fn new(embedder: Box<dyn Embedder>) -> Self {
        EmbedderHandle {
            embedder,
            cache: None,
            batch_size: 64,
            max_in_flight: 4,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn with_cache(mut self, cache: EmbeddingCache) -> Self {
        self.cache = Some(cache);
        self
    }

    pub fn with_limits(mut self, batch_size: usize, max_in_flight: usize) -> Self {
        self.batch_size = batch_size.max(1);
        self.max_in_flight = max_in_flight.max(1);
        self
    }

    pub fn model_tag(&self) -> &str {
        self.embedder.model_tag()
    }

    /// Number of calls made to the underlying embedder (cache misses, batched).
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    /// Texts not yet in the cache (all texts when there is no cache).
    pub fn uncached<'a>(&self, texts: &'a [String]) -> Vec<&'a String> {
        let tag = self.model_tag();
        texts
            .iter()
            .filter(|t| self.cache.as_ref().is_none_or(|c| c.get(tag, t).is_none()))
            .collect()
    }

    pub fn embed_texts(&self, texts: &[String]) -> Result<Vec<Vec<f32>>> {
        let tag = self.model_tag().to_string();
        let mut found: HashMap<&str, Vec<f32>> = HashMap::new();
        let mut misses: Vec<String> = Vec::new();
        for t in texts {
            if found.contains_key(t.as_str()) || misses.contains(t) {
                continue;
            }
            match self.cache.as_ref().and_then(|c| c.get(&tag, t)) {
                Some(v) => {
                    found.insert(t, v);
                }
                None => misses.push(t.clone()),
            }
        }

        if !misses.is_empty() {
            let batches: Vec<&[String]> = misses.chunks(self.batch_size).collect();
            let run_batch = |batch: &&[String]| -> Result<Vec<Vec<f32>>> {
                self.calls.fetch_add(1, Ordering::Relaxed);
                let vecs = self.embedder.embed(batch)?;
                if vecs.len() != batch.len() {
                    return Err(Error::MalformedResponse(format!(
                        "embedder returned {} vectors for {} texts",
                        vecs.len(),
                        batch.len()
                    )));
                }
                if let Some(cache) = &self.cache {
                    for (t, v) in batch.iter().zip(&vecs) {
                        cache.put(&tag, t, v)?;
                    }
                }
                Ok(vecs)
            };
            let results: Vec<Result<Vec<Vec<f32>>>> = if batches.len() == 1 || self.max_in_flight == 1 {
                batches.iter().map(run_batch).collect()
            } else {
                let pool = rayon::ThreadPoolBuilder::new()
                    .num_threads(self.max_in_flight)
                    .build()
                    .map_err(|e| Error::Config(e.to_string()))?;
                pool.install(|| batches.par_iter().map(run_batch).collect())
            };
            let mut fresh: Vec<Vec<f32>> = Vec::with_capacity(misses.len());
            for r in results {
                fresh.extend(r?);
            }
            for (t, v) in misses.iter().zip(fresh) {
                let key = texts.iter().find(|x| *x == t).expect("miss came from input");
                found.insert(key.as_str(), v);
            }
        }

        let out: Vec<Vec<f32>> = texts.iter().map(|t| found[t.as_str()].clone()).collect();
        if let Some(first) = out.first() {
            let dim = first.len();
            if let Some(bad) = out.iter().find(|v| v.len() != dim) {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    actual: bad.len(),
                });
            }
        }
        Ok(out)
    }

    pub fn embed_one(&self, text: &str) -> Result<Vec<f32>> {
        Ok(self
            .embed_texts(std::slice::from_ref(&text.to_string()))?
            .pop()
            .expect("one vector"))
    }
}

/// Embed `texts` in order; rows get positional ids ("0", "1", ...). Use
/// [`EmbeddingMatrix::with_ids`] to attach document ids.
pub fn embed_batch(texts: &[String], embedder: &EmbedderHandle) -> Result<EmbeddingMatrix> {
    if texts.is_empty() {
        return Err(Error::Input("embed_batch needs at least one text".into()));
    }
    let vectors = embedder.embed_texts(texts)?;
    let ids = (0..texts.len()).map(|i| i.to_string()).collect();
    EmbeddingMatrix::new(ids, vectors, embedder.model_tag())
}
