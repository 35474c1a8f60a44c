use std::collections::{BTreeMap, BTreeSet};
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assets::{AssetPaths, Assets};
use crate::benchmark::View;
use crate::corpus::{AdapterConfig, BiasCategory, CollectionSpec};
use crate::error::{Error, Result};
use crate::generation::{ChatConfig, InstructionVariant, MockPolicy};
use crate::hashing::sha256_hex;
use crate::metrics::BootstrapSettings;
use crate::mitigation::{MitigationKind, MitigationPlan};
use crate::retrieval::{Bm25Params, HttpEmbedderConfig, QueryMode, Tokenizer};

pub const RUN_CONFIG_VERSION: u32 = 1;
/// Reserved retriever name for runs without retrieval.
pub const NO_RETRIEVAL: &str = "none";

/// A corpus source: a path to an adapter file or an inline adapter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SourceRef {
    File(PathBuf),
    Inline(AdapterConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EmbedderConfig {
    Hashing {
        #[serde(default = "default_dim")]
        dim: usize,
        #[serde(default)]
        tokenizer: Tokenizer,
    },
    Http(HttpEmbedderConfig),
}

fn default_dim() -> usize {
    256
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RetrieverKind {
    None,
    Sparse {
        #[serde(default)]
        params: Bm25Params,
        #[serde(default)]
        tokenizer: Tokenizer,
    },
    Dense {
        embedder: EmbedderConfig,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrieverConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: RetrieverKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkConfig {
    pub name: String,
    pub path: PathBuf,
    /// Empty keeps every category.
    #[serde(default)]
    pub categories: BTreeSet<BiasCategory>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum BackendKind {
    Mock { policy: MockPolicy },
    Chat(ChatConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendConfig {
    pub name: String,
    #[serde(flatten)]
    pub kind: BackendKind,
}

/// Relevance against bias-level sweep over the k values of one dense
/// retriever.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub judge_backend: String,
    pub retriever: String,
    pub collection: String,
    pub benchmark: String,
    #[serde(default = "default_analysis_view")]
    pub view: View,
}

fn default_analysis_view() -> View {
    View::Disambiguated
}

fn default_k_values() -> Vec<usize> {
    vec![10]
}

fn default_variants() -> Vec<InstructionVariant> {
    vec![InstructionVariant::V1, InstructionVariant::V2]
}

fn default_mitigations() -> Vec<MitigationPlan> {
    vec![MitigationPlan::none()]
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

fn default_max_in_flight() -> usize {
    8
}

fn default_version() -> u32 {
    RUN_CONFIG_VERSION
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub run_id: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Response and embedding caches; `<output_dir>/cache` when absent.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
    pub corpus: Vec<SourceRef>,
    pub collections: BTreeMap<String, CollectionSpec>,
    pub retrievers: Vec<RetrieverConfig>,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
    #[serde(default)]
    pub query_mode: QueryMode,
    pub benchmarks: Vec<BenchmarkConfig>,
    pub backends: Vec<BackendConfig>,
    #[serde(default = "default_variants")]
    pub variants: Vec<InstructionVariant>,
    #[serde(default = "default_mitigations")]
    pub mitigations: Vec<MitigationPlan>,
    #[serde(default)]
    pub bootstrap: BootstrapSettings,
    #[serde(default)]
    pub assets: AssetPaths,
    #[serde(default = "default_max_in_flight")]
    pub max_in_flight: usize,
    /// Backends averaged into the macro row; empty means all.
    #[serde(default)]
    pub macro_average_backends: Vec<String>,
    #[serde(default)]
    pub analysis: Option<AnalysisConfig>,
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
    let mut out = PathBuf::new();
    for c in p.components() {
        match c {
            Component::CurDir => {}
            Component::ParentDir if matches!(out.components().next_back(), Some(Component::Normal(_))) => {
                out.pop();
            }
            c => out.push(c),
        }
    }
    *p = out;
}

fn duplicates<'a>(names: impl IntoIterator<Item = &'a str>) -> Option<&'a str> {
    let mut seen = BTreeSet::new();
    names.into_iter().find(|n| !seen.insert(*n))
}

impl RunConfig {
    /// Parse, resolve relative paths against the file's directory and
    /// validate.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        resolve(base, &mut self.output_dir);
        if let Some(c) = &mut self.cache_dir {
            resolve(base, c);
        }
        for s in &mut self.corpus {
            match s {
                SourceRef::File(p) => resolve(base, p),
                SourceRef::Inline(a) => resolve(base, &mut a.path),
            }
        }
        for b in &mut self.benchmarks {
            resolve(base, &mut b.path);
        }
        for p in [
            &mut self.assets.instructions,
            &mut self.assets.icl_examples,
            &mut self.assets.prompts,
            &mut self.assets.ddp_rules,
        ]
        .into_iter()
        .flatten()
        {
            resolve(base, p);
        }
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.output_dir.join("cache"))
    }

    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.run_id)
    }

    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(Error::Config(m));
        if self.version != RUN_CONFIG_VERSION {
            return cfg(format!("unsupported config version {} (expected {RUN_CONFIG_VERSION})", self.version));
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) || self.run_id.starts_with('.') {
            return cfg(format!("run_id `{}` is not a plain directory name", self.run_id));
        }
        if self.k_values.is_empty() || self.k_values.contains(&0) {
            return cfg("k_values must be a non-empty list of positive integers".into());
        }
        if self.variants.is_empty() {
            return cfg("at least one instruction variant is required".into());
        }
        if self.mitigations.is_empty() {
            return cfg("at least one mitigation entry is required (use {\"kind\": \"none\"})".into());
        }
        if self.retrievers.is_empty() || self.backends.is_empty() || self.benchmarks.is_empty() {
            return cfg("empty grid: need at least one retriever, backend and benchmark".into());
        }
        let uses_retrieval = self.retrievers.iter().any(|r| r.kind != RetrieverKind::None);
        if uses_retrieval && (self.collections.is_empty() || self.corpus.is_empty()) {
            return cfg("retrievers other than `none` need corpus sources and collections".into());
        }
        for r in &self.retrievers {
            if (r.name == NO_RETRIEVAL) != (r.kind == RetrieverKind::None) {
                return cfg(format!("retriever name `{NO_RETRIEVAL}` is reserved for kind `none` (got `{}`)", r.name));
            }
        }
        if let Some(d) = duplicates(self.retrievers.iter().map(|r| r.name.as_str())) {
            return cfg(format!("duplicate retriever `{d}`"));
        }
        if self.backends.iter().any(|b| b.name == super::MACRO_BACKEND) {
            return cfg(format!("backend name `{}` is reserved for macro averages", super::MACRO_BACKEND));
        }
        if let Some(d) = duplicates(self.backends.iter().map(|b| b.name.as_str())) {
            return cfg(format!("duplicate backend `{d}`"));
        }
        if let Some(d) = duplicates(self.benchmarks.iter().map(|b| b.name.as_str())) {
            return cfg(format!("duplicate benchmark `{d}`"));
        }
        if duplicates(self.mitigations.iter().map(|m| m.label())).is_some() {
            return cfg("each mitigation kind may appear once".into());
        }
        for name in self
            .backends
            .iter()
            .map(|b| &b.name)
            .chain(self.benchmarks.iter().map(|b| &b.name))
            .chain(self.collections.keys())
            .chain(self.retrievers.iter().map(|r| &r.name))
        {
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c)) {
                return cfg(format!("name `{name}` must use only ASCII letters, digits, '-', '_' or '.'"));
            }
        }
        for (name, spec) in &self.collections {
            spec.validate()
                .map_err(|e| Error::Config(format!("collection `{name}`: {e}")))?;
        }
        let backend_names: BTreeSet<&str> = self.backends.iter().map(|b| b.name.as_str()).collect();
        let assets = Assets::load(&self.assets)?;
        for m in &self.mitigations {
            m.validate(&assets)?;
            for b in [&m.summarizer_backend, &m.ddp_stage1_backend].into_iter().flatten() {
                if !backend_names.contains(b.as_str()) {
                    return cfg(format!("mitigation `{}` names unknown backend `{b}`", m.label()));
                }
            }
        }
        for b in &self.macro_average_backends {
            if !backend_names.contains(b.as_str()) {
                return cfg(format!("macro_average_backends names unknown backend `{b}`"));
            }
        }
        if let Some(a) = &self.analysis {
            if !backend_names.contains(a.judge_backend.as_str()) {
                return cfg(format!("analysis judge `{}` is not a configured backend", a.judge_backend));
            }
            match self.retrievers.iter().find(|r| r.name == a.retriever) {
                Some(RetrieverConfig { kind: RetrieverKind::Dense { .. }, .. }) => {}
                _ => return cfg(format!("analysis retriever `{}` must be a configured dense retriever", a.retriever)),
            }
            if !self.collections.contains_key(&a.collection) {
                return cfg(format!("analysis collection `{}` is not configured", a.collection));
            }
            if !self.benchmarks.iter().any(|b| b.name == a.benchmark) {
                return cfg(format!("analysis benchmark `{}` is not configured", a.benchmark));
            }
        }
        for path in self
            .benchmarks
            .iter()
            .map(|b| &b.path)
            .chain(self.assets.iter())
            .chain(self.corpus.iter().map(|s| match s {
                SourceRef::File(p) => p,
                SourceRef::Inline(a) => &a.path,
            }))
        {
            if !path.exists() {
                return cfg(format!("missing file {}", path.display()));
            }
        }
        Ok(())
    }

    pub fn adapters(&self) -> Result<Vec<AdapterConfig>> {
        self.corpus
            .iter()
            .map(|s| match s {
                SourceRef::File(p) => AdapterConfig::from_json_file(p),
                SourceRef::Inline(a) => {
                    a.check_version()?;
                    Ok(a.clone())
                }
            })
            .collect()
    }

    pub fn backend(&self, name: &str) -> Option<&BackendConfig> {
        self.backends.iter().find(|b| b.name == name)
    }

    pub fn mitigation_kinds(&self) -> Vec<MitigationKind> {
        self.mitigations.iter().map(|m| m.kind).collect()
    }

    /// Hash of everything that determines results; output locations are
    /// left out so a run can be moved.
    pub fn fingerprint(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        if let Some(o) = v.as_object_mut() {
            o.remove("output_dir");
            o.remove("cache_dir");
        }
        sha256_hex(v.to_string().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal(dir: &Path) -> serde_json::Value {
        std::fs::write(dir.join("bbq.jsonl"), "").unwrap();
        serde_json::json!({
            "run_id": "r1",
            "corpus": [],
            "collections": {},
            "retrievers": [{"name": "none", "kind": "none"}],
            "benchmarks": [{"name": "bbq", "path": "bbq.jsonl"}],
            "backends": [{"name": "mock", "type": "mock", "policy": "always_unknown"}]
        })
    }

    fn load(dir: &Path, v: &serde_json::Value) -> Result<RunConfig> {
        let p = dir.join("run.json");
        std::fs::write(&p, v.to_string()).unwrap();
        RunConfig::from_json_file(&p)
    }

    #[test]
    fn defaults_fill_in() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = load(dir.path(), &minimal(dir.path())).unwrap();
        assert_eq!(cfg.k_values, vec![10]);
        assert_eq!(cfg.variants, vec![InstructionVariant::V1, InstructionVariant::V2]);
        assert_eq!(cfg.mitigations, vec![MitigationPlan::none()]);
        assert_eq!(cfg.bootstrap.resamples, 10_000);
        assert_eq!(cfg.run_dir(), dir.path().join("runs/r1"));
        assert_eq!(cfg.benchmarks[0].path, dir.path().join("bbq.jsonl"));
    }

    #[test]
    fn rejects_bad_grids() {
        let dir = tempfile::tempdir().unwrap();
        let base = minimal(dir.path());
        let mut v = base.clone();
        v["k_values"] = serde_json::json!([0]);
        assert!(load(dir.path(), &v).is_err());
        let mut v = base.clone();
        v["backends"] = serde_json::json!([]);
        assert!(load(dir.path(), &v).is_err());
        let mut v = base.clone();
        v["benchmarks"][0]["path"] = "missing.jsonl".into();
        let err = load(dir.path(), &v).unwrap_err().to_string();
        assert!(err.contains("missing.jsonl"), "{err}");
        let mut v = base.clone();
        v["retrievers"] = serde_json::json!([{"name": "bm25", "kind": "sparse"}]);
        assert!(load(dir.path(), &v).is_err());
        let mut v = base;
        v["mitigations"] = serde_json::json!([{"kind": "summarizer", "summarizer_backend": "nope"}]);
        assert!(load(dir.path(), &v).is_err());
    }

    #[test]
    fn fingerprint_ignores_output_location() {
        let dir = tempfile::tempdir().unwrap();
        let mut a = load(dir.path(), &minimal(dir.path())).unwrap();
        let f = a.fingerprint();
        a.output_dir = PathBuf::from("/elsewhere");
        assert_eq!(a.fingerprint(), f);
        a.seed = 7;
        assert_ne!(a.fingerprint(), f);
    }
}
