//! End-to-end experiment runs driven by a [`RunConfig`].

mod config;
mod report;
mod retrieve;
mod run;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::analysis::TradeoffRow;
use crate::benchmark::View;
use crate::generation::InstructionVariant;
use crate::metrics::{MetricKind, MetricReport, MetricRow};
use crate::mitigation::MitigationKind;

pub use config::{
    AnalysisConfig, BackendConfig, BackendKind, BenchmarkConfig, EmbedderConfig, RetrieverConfig, RetrieverKind,
    RunConfig, SourceRef, NO_RETRIEVAL, RUN_CONFIG_VERSION,
};
pub use report::{load_run_report, markdown_cells, render, write_report, MarkdownCell, ReportFormat};
pub use run::{
    check_backends, index, ingest, run, DryRunPlan, IndexSummary, IngestSummary, RunMode, RunOptions, RunOutcome,
};

/// Backend label used for macro-averaged rows.
pub const MACRO_BACKEND: &str = "macro";

/// Coordinates of one slice. `variant` is `None` for the pool over all
/// instruction variants; `k` is `None` without retrieval.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct SliceKey {
    pub benchmark: String,
    pub collection: String,
    pub retriever: String,
    pub k: Option<usize>,
    pub backend: String,
    pub variant: Option<InstructionVariant>,
    pub mitigation: MitigationKind,
}

impl SliceKey {
    /// Stable identifier, also used as the records file name.
    pub fn id(&self) -> String {
        format!(
            "{}__{}__{}__k{}__{}__{}__{}",
            self.benchmark,
            self.collection,
            self.retriever,
            self.k.map_or("-".to_string(), |k| k.to_string()),
            self.backend,
            self.variant.map_or("pooled", |v| v.as_str()),
            self.mitigation,
        )
    }

    pub fn is_baseline(&self) -> bool {
        self.retriever == NO_RETRIEVAL
    }

    /// The same slice without retrieval.
    pub fn baseline(&self) -> SliceKey {
        SliceKey {
            collection: NO_RETRIEVAL.into(),
            retriever: NO_RETRIEVAL.into(),
            k: None,
            ..self.clone()
        }
    }

    pub fn column_label(&self) -> String {
        match self.k {
            None => "w/o RAG".into(),
            Some(k) => format!("{} / {} @{k}", self.collection, self.retriever),
        }
    }
}

impl fmt::Display for SliceKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.id())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SliceReport {
    pub id: String,
    pub key: SliceKey,
    pub records: usize,
    /// Records that failed at the backend and were left out.
    pub failed: usize,
    pub report: MetricReport,
}

/// Unweighted mean over backends of one pooled grid cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MacroRow {
    pub id: String,
    pub key: SliceKey,
    pub backends: Vec<String>,
    pub values: BTreeMap<MetricKind, Option<f64>>,
    pub n: BTreeMap<MetricKind, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StereoFractionRow {
    pub benchmark: String,
    pub collection: String,
    pub retriever: String,
    pub k: usize,
    pub stereo_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub combination: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tradeoff {
    pub benchmark: String,
    pub collection: String,
    pub retriever: String,
    pub view: View,
    pub judge: String,
    pub rows: Vec<TradeoffRow>,
    pub judge_excluded: usize,
    pub unreliable: bool,
}

/// Everything a finished run reports; serialized as `metrics/metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_id: String,
    pub fingerprint: String,
    pub slices: Vec<SliceReport>,
    pub macro_rows: Vec<MacroRow>,
    pub stereo_fraction: Vec<StereoFractionRow>,
    #[serde(default)]
    pub tradeoff: Option<Tradeoff>,
    pub skipped: Vec<Skipped>,
}

impl RunReport {
    pub fn slice(&self, key: &SliceKey) -> Option<&SliceReport> {
        self.slices.iter().find(|s| &s.key == key)
    }

    /// Per-slice rows followed by macro rows (no intervals).
    pub fn metric_rows(&self) -> Vec<MetricRow> {
        let mut rows: Vec<MetricRow> = self
            .slices
            .iter()
            .flat_map(|s| MetricRow::from_report(&self.run_id, &s.id, &s.report))
            .collect();
        for m in &self.macro_rows {
            for kind in MetricKind::ALL {
                rows.push(MetricRow {
                    run_id: self.run_id.clone(),
                    slice: m.id.clone(),
                    metric: kind.as_str().to_string(),
                    value: m.values.get(&kind).copied().flatten(),
                    ci_low: None,
                    ci_high: None,
                    n: m.n.get(&kind).copied().unwrap_or(0),
                    invalid_rate: None,
                });
            }
        }
        rows
    }
}
