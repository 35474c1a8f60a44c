use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::analysis::{bias_level_score, relevance_score, TradeoffRow};
use crate::assets::Assets;
use crate::benchmark::{load_bbq, BbqInstance, View};
use crate::corpus::{build_collection, collection_stats, load_sources, write_rejects, Collection, Document};
use crate::error::{Error, Result};
use crate::generation::{
    assemble_prompt, impressions, parse_answer, unix_now, AnswerKey, CachedGenerator, ChatGenerator,
    GenerationRecord, Generator, InstructionVariant, MockGenerator, Parsed, Request, ResponseCache, Task,
};
use crate::hashing::{derive_seed, fnv1a64};
use crate::metrics::{compute_report, write_metric_rows, MetricKind, PredictionSet};
use crate::mitigation::{apply_ddp, apply_icl, summarize_docs, MitigationKind, MitigationPlan};
use crate::retrieval::stereo_fraction;

use super::config::{AnalysisConfig, BackendKind, EmbedderConfig, RetrieverConfig, RetrieverKind, RunConfig};
use super::report::{render, ReportFormat};
use super::retrieve::{build_index, embedder_handle, query_keys, retrieve, uncached_doc_texts, Index, Retrieved};
use super::{
    MacroRow, RunReport, Skipped, SliceKey, SliceReport, StereoFractionRow, Tradeoff, MACRO_BACKEND, NO_RETRIEVAL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RunMode {
    /// Generate missing records, then score and analyze.
    #[default]
    Full,
    /// Score existing records only.
    Score,
    /// Only the relevance against bias-level sweep.
    Analyze,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub resume: bool,
    pub dry_run: bool,
    pub check_backends: bool,
    pub mode: RunMode,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DryRunPlan {
    pub slices: usize,
    pub prompts: usize,
    /// Distinct remote generator requests not in the response cache.
    pub estimated_backend_calls: usize,
    /// Texts a remote embedder would still have to embed.
    pub estimated_embedding_texts: usize,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum RunOutcome {
    Completed(Box<RunReport>),
    DryRun(DryRunPlan),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IngestSummary {
    pub rows_read: usize,
    pub documents: usize,
    pub rejects: usize,
    pub collections: Vec<(String, usize)>,
    pub skipped: Vec<Skipped>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct IndexSummary {
    pub collection: String,
    pub retriever: String,
    pub documents: usize,
    pub embedder_calls: usize,
}

#[derive(Debug, Serialize)]
struct AuditEntry {
    event: &'static str,
    slice: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    instance_id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    view: Option<View>,
    detail: String,
}

impl AuditEntry {
    fn item(event: &'static str, slice: &str, inst: &BbqInstance, view: View, detail: impl Into<String>) -> Self {
        AuditEntry {
            event,
            slice: slice.to_string(),
            instance_id: Some(inst.id.clone()),
            view: Some(view),
            detail: detail.into(),
        }
    }
}

struct Audit(Option<PathBuf>);

impl Audit {
    fn append(&self, entries: &[AuditEntry]) -> Result<()> {
        let Some(path) = &self.0 else { return Ok(()) };
        if entries.is_empty() {
            return Ok(());
        }
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut buf = String::new();
        for e in entries {
            buf.push_str(&serde_json::to_string(e).expect("audit entry serializes"));
            buf.push('\n');
        }
        f.write_all(buf.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

fn raw_generator(kind: &BackendKind) -> Result<Arc<dyn Generator>> {
    Ok(match kind {
        BackendKind::Mock { policy } => Arc::new(MockGenerator::new(*policy)),
        BackendKind::Chat(c) => Arc::new(ChatGenerator::new(c.clone())?),
    })
}

/// Send one tiny request to every remote backend and embedder.
pub fn check_backends(cfg: &RunConfig) -> Result<()> {
    for b in &cfg.backends {
        let gen = raw_generator(&b.kind)?;
        if !gen.is_remote() {
            continue;
        }
        let ping = Request {
            system: String::new(),
            user: "ping".into(),
            max_tokens: 1,
            task: Task::Other,
        };
        gen.generate(&ping)
            .map_err(|e| Error::Config(format!("backend `{}` is unreachable: {e}", b.name)))?;
    }
    for r in &cfg.retrievers {
        if let RetrieverKind::Dense { embedder: e @ EmbedderConfig::Http(_) } = &r.kind {
            let h = embedder_handle(e, &cfg.cache_dir(), 1, false)?;
            h.embed_one("ping")
                .map_err(|err| Error::Config(format!("embedder of retriever `{}` is unreachable: {err}", r.name)))?;
        }
    }
    Ok(())
}

fn needs_corpus(cfg: &RunConfig) -> bool {
    cfg.retrievers.iter().any(|r| r.kind != RetrieverKind::None)
}

fn load_collections(cfg: &RunConfig, skipped: &mut Vec<Skipped>) -> Result<(BTreeMap<String, Collection>, usize, usize)> {
    let loaded = load_sources(&cfg.adapters()?)?;
    let mut out = BTreeMap::new();
    for (name, spec) in &cfg.collections {
        match build_collection(&loaded.documents, spec) {
            Ok(c) => {
                out.insert(name.clone(), c);
            }
            Err(e @ Error::EmptyCollection { .. }) => skipped.push(Skipped {
                combination: format!("collection {name}"),
                reason: e.to_string(),
            }),
            Err(e) => return Err(Error::Config(format!("collection `{name}`: {e}"))),
        }
    }
    Ok((out, loaded.documents.len(), loaded.rejects.len()))
}

fn load_benchmarks(cfg: &RunConfig, skipped: &mut Vec<Skipped>) -> Result<Vec<(String, Vec<BbqInstance>)>> {
    let mut out = Vec::new();
    for b in &cfg.benchmarks {
        let loaded = load_bbq(&b.path)?;
        if !loaded.rejects.is_empty() {
            log::warn!("benchmark `{}`: {} instances rejected", b.name, loaded.rejects.len());
        }
        let instances: Vec<BbqInstance> = loaded
            .instances
            .into_iter()
            .filter(|i| b.categories.is_empty() || b.categories.contains(&i.bias_category))
            .collect();
        if instances.is_empty() {
            skipped.push(Skipped {
                combination: format!("benchmark {}", b.name),
                reason: "no instances in the selected categories".into(),
            });
            continue;
        }
        out.push((b.name.clone(), instances));
    }
    Ok(out)
}

/// Load sources, write rejects and per-collection statistics under
/// `<run_dir>/corpus`.
pub fn ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let loaded = load_sources(&cfg.adapters()?)?;
    let dir = cfg.run_dir().join("corpus");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_rejects(&dir.join("rejects.jsonl"), &loaded.rejects)?;
    let mut collections = Vec::new();
    let mut skipped = Vec::new();
    for (name, spec) in &cfg.collections {
        match build_collection(&loaded.documents, spec) {
            Ok(c) => {
                collection_stats(&c).write_csv(&dir.join(format!("stats_{name}.csv")))?;
                collections.push((name.clone(), c.len()));
            }
            Err(e @ Error::EmptyCollection { .. }) => skipped.push(Skipped {
                combination: format!("collection {name}"),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(IngestSummary {
        rows_read: loaded.rows_read,
        documents: loaded.documents.len(),
        rejects: loaded.rejects.len(),
        collections,
        skipped,
    })
}

/// Build every (collection, retriever) index; dense ones fill the embedding
/// cache.
pub fn index(cfg: &RunConfig) -> Result<Vec<IndexSummary>> {
    let mut skipped = Vec::new();
    let (collections, _, _) = load_collections(cfg, &mut skipped)?;
    let mut out = Vec::new();
    for (name, c) in &collections {
        for r in cfg.retrievers.iter().filter(|r| r.kind != RetrieverKind::None) {
            let idx = build_index(&r.kind, c, &cfg.cache_dir(), cfg.max_in_flight, true)?;
            out.push(IndexSummary {
                collection: name.clone(),
                retriever: r.name.clone(),
                documents: c.len(),
                embedder_calls: match &idx {
                    Index::Dense { handle, .. } => handle.calls(),
                    Index::Sparse(_) => 0,
                },
            });
        }
    }
    Ok(out)
}

#[derive(serde::Deserialize, Serialize)]
struct ConfigLock {
    fingerprint: String,
    config: RunConfig,
}

fn read_lock(run_dir: &Path) -> Result<Option<ConfigLock>> {
    let path = run_dir.join("config.lock.json");
    if !path.exists() {
        return Ok(None);
    }
    let raw = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    Ok(Some(serde_json::from_str(&raw).map_err(|e| Error::parse(&path, e))?))
}

fn prepare_run_dir(cfg: &RunConfig, fingerprint: &str, opts: &RunOptions) -> Result<()> {
    let run_dir = cfg.run_dir();
    let exists = run_dir.exists();
    match opts.mode {
        RunMode::Full if exists && !opts.resume => return Err(Error::RunExists(run_dir)),
        RunMode::Score if !exists => {
            return Err(Error::Input(format!("run directory {} does not exist", run_dir.display())))
        }
        _ => {}
    }
    if let Some(lock) = read_lock(&run_dir)? {
        if lock.fingerprint != fingerprint {
            return Err(Error::Config(format!(
                "config fingerprint {} differs from the one locked in {} ({})",
                &fingerprint[..12],
                run_dir.display(),
                &lock.fingerprint[..lock.fingerprint.len().min(12)]
            )));
        }
    }
    for sub in ["records", "metrics"] {
        let d = run_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }
    let lock_path = run_dir.join("config.lock.json");
    if !lock_path.exists() {
        let lock = ConfigLock {
            fingerprint: fingerprint.to_string(),
            config: cfg.clone(),
        };
        let text = serde_json::to_string_pretty(&lock).expect("config serializes");
        fs::write(&lock_path, text + "\n").map_err(|e| Error::io(&lock_path, e))?;
    }
    Ok(())
}

fn read_records(path: &Path) -> Result<Vec<GenerationRecord>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::parse(path, format!("line {}: {e}", i + 1)))?);
    }
    Ok(out)
}

fn write_records(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let partial = path.with_extension("jsonl.partial");
    let mut buf = String::new();
    for r in records {
        buf.push_str(&serde_json::to_string(r).expect("record serializes"));
        buf.push('\n');
    }
    fs::write(&partial, buf).map_err(|e| Error::io(&partial, e))?;
    fs::rename(&partial, path).map_err(|e| Error::io(path, e))
}

struct Backend {
    gen: CachedGenerator,
}

struct Column<'c> {
    collection: String,
    retriever: &'c RetrieverConfig,
    ks: Vec<Option<usize>>,
}

struct SliceCtx<'a> {
    id: String,
    variant: InstructionVariant,
    plan: &'a MitigationPlan,
    backend: &'a CachedGenerator,
    summarizer: &'a CachedGenerator,
    stage1: &'a CachedGenerator,
    collection: Option<&'a Collection>,
    retrieved: Option<&'a Retrieved>,
    k: Option<usize>,
}

struct Runner<'a> {
    cfg: &'a RunConfig,
    assets: Assets,
    fingerprint: String,
    backends: BTreeMap<String, Backend>,
    pool: rayon::ThreadPool,
    prompts: AtomicUsize,
}

impl Runner<'_> {
    fn backend(&self, name: &str) -> &CachedGenerator {
        &self.backends[name].gen
    }

    fn run_item(&self, s: &SliceCtx<'_>, inst: &BbqInstance, view: View) -> Result<(GenerationRecord, Vec<AuditEntry>)> {
        let doc_ids: Vec<String> = match (s.retrieved, s.k) {
            (Some(r), Some(k)) => r.top(&inst.id, view, k).into_iter().map(String::from).collect(),
            _ => Vec::new(),
        };
        let docs: Vec<Document> = doc_ids
            .iter()
            .map(|id| {
                s.collection
                    .and_then(|c| c.get(id))
                    .cloned()
                    .ok_or_else(|| Error::UnknownDocument(id.clone()))
            })
            .collect::<Result<_>>()?;
        let mut audit = Vec::new();
        let mut trace = None;
        let mut imps = impressions(&docs);
        self.prompts.fetch_add(1, Ordering::Relaxed);
        if s.plan.kind == MitigationKind::Summarizer && !imps.is_empty() {
            self.prompts.fetch_add(1, Ordering::Relaxed);
            let out = summarize_docs(imps, s.summarizer, &self.assets.prompts.summarizer);
            if let Some(why) = &out.fallback {
                audit.push(AuditEntry::item("summarizer_fallback", &s.id, inst, view, why.clone()));
            }
            trace = Some(serde_json::json!({
                "summarizer": s.summarizer.tag(),
                "impressions": out.impressions,
                "fallback": out.fallback,
            }));
            imps = out.impressions;
        }
        let mut prompt = assemble_prompt(inst, view, imps, s.variant, &self.assets.instructions);
        if s.plan.kind == MitigationKind::Icl {
            prompt = apply_icl(&prompt, &self.assets.icl_examples)?;
        }
        let key = AnswerKey::for_instance(inst, view);
        let answered = if s.plan.kind == MitigationKind::Ddp {
            self.prompts.fetch_add(1, Ordering::Relaxed);
            let rules = self
                .assets
                .ddp_rules
                .get(&inst.bias_category.to_string())
                .map_or(&[][..], Vec::as_slice);
            apply_ddp(&prompt, &key, rules, &self.assets.prompts.ddp_guidance, s.stage1, s.backend).map(|o| {
                if o.substitutions.is_empty() {
                    audit.push(AuditEntry::item("ddp_no_substitution", &s.id, inst, view, inst.bias_category.to_string()));
                }
                let out = (o.final_prompt_hash.clone(), o.final_response.clone(), o.final_parsed);
                trace = Some(serde_json::to_value(&o).expect("ddp outcome serializes"));
                out
            })
        } else {
            s.backend
                .generate(&Request::answer(&prompt, key))
                .map(|g| (prompt.hash(), g.response.clone(), parse_answer(&g.response, &prompt.parts.options)))
        };
        let (prompt_hash, raw_response, parsed, error) = match answered {
            Ok((h, r, p)) => (h, r, p, None),
            Err(e) => {
                audit.push(AuditEntry::item("backend_failure", &s.id, inst, view, e.to_string()));
                (prompt.hash(), String::new(), Parsed::Invalid, Some(e.to_string()))
            }
        };
        let record = GenerationRecord {
            instance_id: inst.id.clone(),
            view,
            prompt_hash,
            backend_tag: s.backend.tag().to_string(),
            raw_response,
            parsed,
            retrieved_doc_ids: doc_ids,
            timestamp: unix_now(),
            config_fingerprint: self.fingerprint.clone(),
            variant: s.variant,
            error,
            mitigation_trace: trace,
        };
        Ok((record, audit))
    }

    fn generate_slice(&self, s: &SliceCtx<'_>, instances: &[BbqInstance]) -> Result<(Vec<GenerationRecord>, Vec<AuditEntry>)> {
        let items: Vec<(&BbqInstance, View)> =
            instances.iter().flat_map(|i| View::BOTH.into_iter().map(move |v| (i, v))).collect();
        let results: Vec<Result<(GenerationRecord, Vec<AuditEntry>)>> =
            self.pool.install(|| items.par_iter().map(|(i, v)| self.run_item(s, i, *v)).collect());
        let mut records = Vec::with_capacity(results.len());
        let mut audit = Vec::new();
        for r in results {
            let (rec, a) = r?;
            records.push(rec);
            audit.extend(a);
        }
        Ok((records, audit))
    }

    fn score(&self, key: SliceKey, records: &[GenerationRecord], by_id: &HashMap<&str, &BbqInstance>) -> Result<SliceReport> {
        let id = key.id();
        let (ps, skipped) = PredictionSet::from_records(records, by_id);
        let mut boot = self.cfg.bootstrap;
        boot.seed = derive_seed(self.cfg.seed ^ boot.seed, fnv1a64(id.as_bytes()));
        let report = compute_report(&ps, &boot).map_err(|e| Error::Slice {
            slice: id.clone(),
            source: Box::new(e),
        })?;
        Ok(SliceReport {
            id,
            key,
            records: records.len(),
            failed: skipped.len(),
            report,
        })
    }
}

fn macro_rows(cfg: &RunConfig, slices: &[SliceReport]) -> Vec<MacroRow> {
    let members: Vec<&str> = if cfg.macro_average_backends.is_empty() {
        cfg.backends.iter().map(|b| b.name.as_str()).collect()
    } else {
        cfg.macro_average_backends.iter().map(String::as_str).collect()
    };
    if members.len() < 2 {
        return Vec::new();
    }
    let mut groups: BTreeMap<SliceKey, Vec<&SliceReport>> = BTreeMap::new();
    let mut order = Vec::new();
    for s in slices.iter().filter(|s| s.key.variant.is_none() && members.contains(&s.key.backend.as_str())) {
        let key = SliceKey {
            backend: MACRO_BACKEND.into(),
            ..s.key.clone()
        };
        if !groups.contains_key(&key) {
            order.push(key.clone());
        }
        groups.entry(key).or_default().push(s);
    }
    order
        .into_iter()
        .map(|key| {
            let group = &groups[&key];
            let mut values = BTreeMap::new();
            let mut n = BTreeMap::new();
            for kind in MetricKind::ALL {
                let vals: Option<Vec<f64>> = group.iter().map(|s| s.report.value(kind)).collect();
                values.insert(
                    kind,
                    vals.filter(|v| v.len() == members.len()).map(|v| v.iter().sum::<f64>() / v.len() as f64),
                );
                n.insert(kind, group.iter().map(|s| s.report.n(kind)).sum());
            }
            MacroRow {
                id: key.id(),
                backends: group.iter().map(|s| s.key.backend.clone()).collect(),
                key,
                values,
                n,
            }
        })
        .collect()
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[allow(clippy::too_many_arguments)]
fn tradeoff(
    runner: &Runner<'_>,
    a: &AnalysisConfig,
    index: &Index,
    retrieved: &Retrieved,
    instances: &[BbqInstance],
    coll: &Collection,
    ks: &[usize],
) -> Result<Tradeoff> {
    let Index::Dense { matrix, .. } = index else {
        return Err(Error::Config(format!("analysis retriever `{}` is not dense", a.retriever)));
    };
    let queries: Vec<_> = query_keys(instances, runner.cfg.query_mode)
        .into_iter()
        .map(|(k, _)| k)
        .filter(|(_, v)| *v == a.view)
        .collect();
    let kmax = ks.iter().copied().max().unwrap_or(0);
    let mut union: Vec<&str> = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (id, v) in &queries {
        for d in retrieved.top(id, *v, kmax) {
            if seen.insert(d) {
                union.push(d);
            }
        }
    }
    let docs: Vec<Document> = union
        .iter()
        .map(|id| coll.get(id).cloned().ok_or_else(|| Error::UnknownDocument(id.to_string())))
        .collect::<Result<_>>()?;
    if docs.is_empty() {
        return Err(Error::UndefinedMetric("no documents retrieved for the trade-off analysis".into()));
    }
    runner.prompts.fetch_add(docs.len(), Ordering::Relaxed);
    let judge = runner.backend(&a.judge_backend);
    let level = bias_level_score(&impressions(&docs), judge, &runner.assets.prompts.judge, runner.cfg.max_in_flight)?;
    let scores: HashMap<&str, Option<i32>> = level.per_doc.iter().map(|(d, s)| (d.as_str(), *s)).collect();
    let mut rows = Vec::new();
    for &k in ks {
        let mut rels = Vec::new();
        let mut biases = Vec::new();
        for (id, v) in &queries {
            let top = retrieved.top(id, *v, k);
            let Some(q) = retrieved.query_vecs.get(&(id.clone(), *v)) else { continue };
            if top.is_empty() {
                continue;
            }
            let pairs: Vec<(&str, &[f32])> = top
                .iter()
                .map(|d| matrix.vector(d).map(|vec| (*d, vec)).ok_or_else(|| Error::UnknownDocument(d.to_string())))
                .collect::<Result<_>>()?;
            rels.push(relevance_score(q, &pairs)?);
            let scored: Vec<f64> = top.iter().filter_map(|d| scores.get(d).copied().flatten()).map(f64::from).collect();
            if let Some(m) = mean(&scored) {
                biases.push(m);
            }
        }
        let (Some(r), Some(b)) = (mean(&rels), mean(&biases)) else {
            return Err(Error::UndefinedMetric(format!("no scored queries at k={k}")));
        };
        rows.push(TradeoffRow::new(k, r, b)?);
    }
    Ok(Tradeoff {
        benchmark: a.benchmark.clone(),
        collection: a.collection.clone(),
        retriever: a.retriever.clone(),
        view: a.view,
        judge: a.judge_backend.clone(),
        rows,
        judge_excluded: level.excluded,
        unreliable: level.unreliable,
    })
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_outputs(run_dir: &Path, report: &RunReport) -> Result<()> {
    let metrics = run_dir.join("metrics");
    fs::create_dir_all(&metrics).map_err(|e| Error::io(&metrics, e))?;
    let mut csv_buf = Vec::new();
    write_metric_rows(&report.metric_rows(), &mut csv_buf)?;
    write_file(&metrics.join("metrics.csv"), &csv_buf)?;
    write_file(&metrics.join("metrics.json"), render(report, ReportFormat::Json).as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::Input(format!("csv: {e}"));
    w.write_record(["benchmark", "collection", "retriever", "k", "stereo_fraction"]).map_err(csv_err)?;
    for r in &report.stereo_fraction {
        w.write_record([
            r.benchmark.clone(),
            r.collection.clone(),
            r.retriever.clone(),
            r.k.to_string(),
            r.stereo_fraction.to_string(),
        ])
        .map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Input(format!("csv: {e}")))?;
    write_file(&metrics.join("stereo_fraction.csv"), &bytes)?;
    if let Some(t) = &report.tradeoff {
        let mut buf = Vec::new();
        crate::analysis::write_tradeoff_csv(&t.rows, &mut buf)?;
        write_file(&metrics.join("tradeoff.csv"), &buf)?;
    }
    write_file(&run_dir.join("report.md"), render(report, ReportFormat::Markdown).as_bytes())
}

/// Run the configured grid. With `dry_run` nothing is written and remote
/// backends are not called; the returned plan counts what would be sent.
pub fn run(cfg: &RunConfig, opts: &RunOptions) -> Result<RunOutcome> {
    let assets = Assets::load(&cfg.assets)?;
    let fingerprint = cfg.fingerprint();
    let run_dir = cfg.run_dir();
    let writing = !opts.dry_run;
    if writing {
        prepare_run_dir(cfg, &fingerprint, opts)?;
    }
    if opts.check_backends {
        check_backends(cfg)?;
    }
    let cache_path = cfg.cache_dir().join("responses.jsonl");
    let cache = if writing || cache_path.exists() {
        Some(Arc::new(ResponseCache::open(&cache_path)?))
    } else {
        None
    };
    let mut backends = BTreeMap::new();
    for b in &cfg.backends {
        let gen = CachedGenerator::new(raw_generator(&b.kind)?, cache.clone()).dry_run(opts.dry_run);
        backends.insert(b.name.clone(), Backend { gen });
    }
    let runner = Runner {
        cfg,
        assets,
        fingerprint: fingerprint.clone(),
        backends,
        pool: rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.max_in_flight.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
        prompts: AtomicUsize::new(0),
    };
    let audit = Audit(writing.then(|| run_dir.join("audit.jsonl")));

    let mut skipped = Vec::new();
    let collections = if needs_corpus(cfg) {
        load_collections(cfg, &mut skipped)?.0
    } else {
        BTreeMap::new()
    };
    let benchmarks = load_benchmarks(cfg, &mut skipped)?;
    let mut ks: Vec<usize> = cfg.k_values.clone();
    ks.sort_unstable();
    ks.dedup();
    let kmax = *ks.last().expect("validated non-empty");

    let mut columns = Vec::new();
    for r in &cfg.retrievers {
        if r.kind == RetrieverKind::None {
            columns.push(Column {
                collection: NO_RETRIEVAL.into(),
                retriever: r,
                ks: vec![None],
            });
        }
    }
    for name in cfg.collections.keys() {
        for r in cfg.retrievers.iter().filter(|r| r.kind != RetrieverKind::None) {
            if !collections.contains_key(name) {
                skipped.push(Skipped {
                    combination: format!("{name} / {}", r.name),
                    reason: format!("collection {name} is unavailable"),
                });
                continue;
            }
            columns.push(Column {
                collection: name.clone(),
                retriever: r,
                ks: ks.iter().map(|&k| Some(k)).collect(),
            });
        }
    }

    // Retrieval runs once per (benchmark, collection, retriever) at the
    // largest k; smaller k values read prefixes.
    let mut embedding_texts = 0;
    let mut indexes: HashMap<(String, String), Index> = HashMap::new();
    let mut retrieved: HashMap<(String, String, String), Retrieved> = HashMap::new();
    let wants_analysis = opts.mode != RunMode::Score && cfg.analysis.is_some();
    for col in columns.iter().filter(|c| c.retriever.kind != RetrieverKind::None) {
        if opts.mode == RunMode::Analyze {
            let a = cfg.analysis.as_ref().ok_or_else(|| Error::Config("no analysis section in config".into()))?;
            if a.collection != col.collection || a.retriever != col.retriever.name {
                continue;
            }
        }
        let coll = &collections[&col.collection];
        if opts.dry_run {
            if let RetrieverKind::Dense { embedder: e @ EmbedderConfig::Http(_) } = &col.retriever.kind {
                let h = embedder_handle(e, &cfg.cache_dir(), cfg.max_in_flight, false)?;
                let missing = uncached_doc_texts(&h, coll);
                if missing > 0 {
                    embedding_texts += missing;
                    for (b, instances) in &benchmarks {
                        let texts: Vec<String> = query_keys(instances, cfg.query_mode).into_iter().map(|(_, t)| t).collect();
                        embedding_texts += h.uncached(&texts).len();
                        retrieved.insert((b.clone(), col.collection.clone(), col.retriever.name.clone()), Retrieved::default());
                    }
                    continue;
                }
            }
        }
        let idx = build_index(&col.retriever.kind, coll, &cfg.cache_dir(), cfg.max_in_flight, writing)?;
        for (b, instances) in &benchmarks {
            let r = retrieve(&idx, instances, cfg.query_mode, kmax)?;
            if !r.zero_queries.is_empty() {
                let slice = format!("{b}__{}__{}", col.collection, col.retriever.name);
                let entries: Vec<AuditEntry> = r
                    .zero_queries
                    .iter()
                    .map(|(id, v)| AuditEntry {
                        event: "zero_query_vector",
                        slice: slice.clone(),
                        instance_id: Some(id.clone()),
                        view: Some(*v),
                        detail: "query embeds to the zero vector; no documents retrieved".into(),
                    })
                    .collect();
                audit.append(&entries)?;
            }
            retrieved.insert((b.clone(), col.collection.clone(), col.retriever.name.clone()), r);
        }
        indexes.insert((col.collection.clone(), col.retriever.name.clone()), idx);
    }

    let mut stereo_rows = Vec::new();
    let mut slices = Vec::new();
    let mut n_slices = 0;
    if opts.mode != RunMode::Analyze {
        for (bname, instances) in &benchmarks {
            let by_id: HashMap<&str, &BbqInstance> = instances.iter().map(|i| (i.id.as_str(), i)).collect();
            for col in &columns {
                let ret = retrieved.get(&(bname.clone(), col.collection.clone(), col.retriever.name.clone()));
                let coll = collections.get(&col.collection);
                if let (Some(r), Some(c)) = (ret, coll) {
                    for &k in &ks {
                        match stereo_fraction(&r.truncated(instances, k), c) {
                            Ok(f) => stereo_rows.push(StereoFractionRow {
                                benchmark: bname.clone(),
                                collection: col.collection.clone(),
                                retriever: col.retriever.name.clone(),
                                k,
                                stereo_fraction: f,
                            }),
                            Err(e) => skipped.push(Skipped {
                                combination: format!("stereo fraction {bname} / {} / {} @{k}", col.collection, col.retriever.name),
                                reason: e.to_string(),
                            }),
                        }
                    }
                }
                for &k in &col.ks {
                    for b in &cfg.backends {
                        for plan in &cfg.mitigations {
                            let mut pooled = Vec::new();
                            for &variant in &cfg.variants {
                                let key = SliceKey {
                                    benchmark: bname.clone(),
                                    collection: col.collection.clone(),
                                    retriever: col.retriever.name.clone(),
                                    k,
                                    backend: b.name.clone(),
                                    variant: Some(variant),
                                    mitigation: plan.kind,
                                };
                                let id = key.id();
                                let path = run_dir.join("records").join(format!("{id}.jsonl"));
                                let records = if writing && path.exists() {
                                    read_records(&path)?
                                } else if opts.mode == RunMode::Score {
                                    skipped.push(Skipped {
                                        combination: id,
                                        reason: "no records".into(),
                                    });
                                    continue;
                                } else {
                                    let ctx = SliceCtx {
                                        id: id.clone(),
                                        variant,
                                        plan,
                                        backend: runner.backend(&b.name),
                                        summarizer: runner.backend(plan.summarizer_backend.as_deref().unwrap_or(&b.name)),
                                        stage1: runner.backend(plan.ddp_stage1_backend.as_deref().unwrap_or(&b.name)),
                                        collection: coll,
                                        retrieved: ret,
                                        k,
                                    };
                                    log::info!("slice {id}");
                                    let (records, entries) = runner.generate_slice(&ctx, instances).map_err(|e| Error::Slice {
                                        slice: id.clone(),
                                        source: Box::new(e),
                                    })?;
                                    if writing {
                                        write_records(&path, &records)?;
                                        audit.append(&entries)?;
                                    }
                                    records
                                };
                                n_slices += 1;
                                if !opts.dry_run {
                                    slices.push(runner.score(key, &records, &by_id)?);
                                }
                                pooled.extend(records);
                            }
                            if !pooled.is_empty() && !opts.dry_run {
                                let key = SliceKey {
                                    benchmark: bname.clone(),
                                    collection: col.collection.clone(),
                                    retriever: col.retriever.name.clone(),
                                    k,
                                    backend: b.name.clone(),
                                    variant: None,
                                    mitigation: plan.kind,
                                };
                                slices.push(runner.score(key, &pooled, &by_id)?);
                            }
                        }
                    }
                }
            }
        }
    }

    let mut trade = None;
    if let (true, Some(a)) = (wants_analysis, &cfg.analysis) {
        let idx = indexes.get(&(a.collection.clone(), a.retriever.clone()));
        let ret = retrieved.get(&(a.benchmark.clone(), a.collection.clone(), a.retriever.clone()));
        let inst = benchmarks.iter().find(|(n, _)| n == &a.benchmark).map(|(_, i)| i);
        match (idx, ret, inst, collections.get(&a.collection)) {
            (Some(idx), Some(ret), Some(inst), Some(c)) => match tradeoff(&runner, a, idx, ret, inst, c, &ks) {
                Ok(t) => trade = Some(t),
                Err(e @ (Error::UndefinedMetric(_) | Error::Input(_))) => skipped.push(Skipped {
                    combination: "relevance vs. bias level".into(),
                    reason: e.to_string(),
                }),
                Err(e) => return Err(e),
            },
            _ if opts.dry_run => {}
            _ => skipped.push(Skipped {
                combination: "relevance vs. bias level".into(),
                reason: "analysis inputs are unavailable".into(),
            }),
        }
    }

    if opts.dry_run {
        let estimated_backend_calls = runner
            .backends
            .values()
            .filter(|b| b.gen.is_remote())
            .map(|b| b.gen.estimated_calls())
            .sum();
        return Ok(RunOutcome::DryRun(DryRunPlan {
            slices: n_slices,
            prompts: runner.prompts.load(Ordering::Relaxed),
            estimated_backend_calls,
            estimated_embedding_texts: embedding_texts,
            skipped,
        }));
    }

    if opts.mode == RunMode::Score {
        trade = super::report::load_run_report(&run_dir).ok().and_then(|r| r.tradeoff);
    }
    let report = RunReport {
        run_id: cfg.run_id.clone(),
        fingerprint,
        macro_rows: macro_rows(cfg, &slices),
        slices,
        stereo_fraction: stereo_rows,
        tradeoff: trade,
        skipped,
    };
    if opts.mode == RunMode::Analyze {
        if let Some(t) = &report.tradeoff {
            let metrics = run_dir.join("metrics");
            let mut buf = Vec::new();
            crate::analysis::write_tradeoff_csv(&t.rows, &mut buf)?;
            write_file(&metrics.join("tradeoff.csv"), &buf)?;
        }
    } else {
        write_outputs(&run_dir, &report)?;
    }
    Ok(RunOutcome::Completed(Box::new(report)))
}
