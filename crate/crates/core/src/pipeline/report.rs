use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::metrics::{ci_overlap_flag, write_metric_rows, MetricKind, MetricReport};
use crate::mitigation::MitigationKind;

use super::{RunReport, SliceKey, MACRO_BACKEND};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    Json,
    Markdown,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            "markdown" | "markdown-table" | "md" => Ok(ReportFormat::Markdown),
            other => Err(Error::Config(format!("unknown report format `{other}` (csv, json, markdown)"))),
        }
    }
}

pub fn load_run_report(run_dir: &Path) -> Result<RunReport> {
    let path = run_dir.join("metrics").join("metrics.json");
    if !path.exists() {
        return Err(Error::Input(format!("{} holds no finished metrics", run_dir.display())));
    }
    let raw = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    serde_json::from_str(&raw).map_err(|e| Error::parse(&path, e))
}

/// Re-render one output of a run from its `metrics.json`.
pub fn write_report(run_dir: &Path, format: ReportFormat) -> Result<PathBuf> {
    let report = load_run_report(run_dir)?;
    let path = match format {
        ReportFormat::Csv => run_dir.join("metrics").join("metrics.csv"),
        ReportFormat::Json => run_dir.join("metrics").join("metrics.json"),
        ReportFormat::Markdown => run_dir.join("report.md"),
    };
    std::fs::write(&path, render(&report, format)).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn render(report: &RunReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes") + "\n",
        ReportFormat::Csv => {
            let mut buf = Vec::new();
            write_metric_rows(&report.metric_rows(), &mut buf).expect("in-memory csv");
            String::from_utf8(buf).expect("csv is utf-8")
        }
        ReportFormat::Markdown => markdown(report),
    }
}

fn pct(v: f64) -> String {
    let s = format!("{:.2}", v * 100.0);
    if s == "-0.00" {
        "0.00".into()
    } else {
        s
    }
}

struct Row {
    label: String,
    cells: Vec<Option<Cell>>,
}

struct Cell {
    values: [Option<f64>; 2],
    star: [bool; 2],
}

fn disjoint(report: &MetricReport, base: &MetricReport, kind: MetricKind) -> bool {
    match (report.ci.get(&kind), base.ci.get(&kind)) {
        (Some(a), Some(b)) => ci_overlap_flag((a.low, a.high), (b.low, b.high)).unwrap_or(false),
        _ => false,
    }
}

fn render_component(v: Option<f64>, bold: bool, italic: bool, star: bool) -> String {
    let Some(v) = v else { return "n/a".into() };
    let mut s = pct(v);
    if star {
        s.push_str("\\*");
    }
    if bold {
        format!("**{s}**")
    } else if italic {
        format!("_{s}_")
    } else {
        s
    }
}

fn render_row(row: &Row) -> String {
    let mut marks = vec![[(false, false); 2]; row.cells.len()];
    for c in 0..2 {
        let vals: Vec<f64> = row.cells.iter().flatten().filter_map(|cell| cell.values[c]).collect();
        if vals.len() < 2 {
            continue;
        }
        let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
        if max <= min {
            continue;
        }
        for (i, cell) in row.cells.iter().enumerate() {
            if let Some(v) = cell.as_ref().and_then(|x| x.values[c]) {
                marks[i][c] = (v == max, v == min);
            }
        }
    }
    let mut line = format!("| {} |", row.label);
    for (i, cell) in row.cells.iter().enumerate() {
        match cell {
            None => line.push_str(" - |"),
            Some(cell) => {
                let parts: Vec<String> = (0..2)
                    .map(|c| render_component(cell.values[c], marks[i][c].0, marks[i][c].1, cell.star[c]))
                    .collect();
                let _ = write!(line, " {} |", parts.join(" / "));
            }
        }
    }
    line
}

const FAMILIES: [(&str, [MetricKind; 2]); 2] = [
    ("accuracy", [MetricKind::AccA, MetricKind::AccD]),
    ("Diff-Bias", [MetricKind::DiffBiasA, MetricKind::DiffBiasD]),
];

type Column = (String, String, Option<usize>);

fn column_of(k: &SliceKey) -> Column {
    (k.collection.clone(), k.retriever.clone(), k.k)
}

fn markdown(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# Run `{}`\n", report.run_id);
    let _ = writeln!(out, "Config fingerprint `{}`.\n", &report.fingerprint[..report.fingerprint.len().min(16)]);
    out.push_str(
        "Cells show ambiguous / disambiguated values in percent, pooled over instruction variants. \
         Within a row, bold marks the maximum and italics the minimum of each component. \
         An asterisk marks a value whose bootstrap interval is disjoint from the w/o RAG value of the same row.\n",
    );

    let pooled: Vec<_> = report.slices.iter().filter(|s| s.key.variant.is_none()).collect();
    let mut groups: Vec<(String, MitigationKind)> = Vec::new();
    for s in &pooled {
        let g = (s.key.benchmark.clone(), s.key.mitigation);
        if !groups.contains(&g) {
            groups.push(g);
        }
    }
    for (bench, mitigation) in &groups {
        let members: Vec<_> = pooled
            .iter()
            .filter(|s| &s.key.benchmark == bench && s.key.mitigation == *mitigation)
            .collect();
        let mut columns: Vec<Column> = Vec::new();
        let mut backends: Vec<String> = Vec::new();
        for s in &members {
            let c = column_of(&s.key);
            if !columns.contains(&c) {
                columns.push(c);
            }
            if !backends.contains(&s.key.backend) {
                backends.push(s.key.backend.clone());
            }
        }
        let labels: Vec<String> = members
            .iter()
            .map(|s| s.key.column_label())
            .fold(Vec::new(), |mut acc, l| {
                if !acc.contains(&l) {
                    acc.push(l);
                }
                acc
            });
        let macros: Vec<_> = report
            .macro_rows
            .iter()
            .filter(|m| &m.key.benchmark == bench && m.key.mitigation == *mitigation)
            .collect();
        for (family, kinds) in FAMILIES {
            let _ = writeln!(out, "\n## {bench}: {family}, mitigation {mitigation}\n");
            let _ = writeln!(out, "| Backend | {} |", labels.join(" | "));
            let _ = writeln!(out, "|---|{}", "---|".repeat(labels.len()));
            for backend in &backends {
                let cells = columns
                    .iter()
                    .map(|col| {
                        let s = members.iter().find(|s| &s.key.backend == backend && &column_of(&s.key) == col)?;
                        let base = (!s.key.is_baseline())
                            .then(|| report.slice(&s.key.baseline()))
                            .flatten();
                        Some(Cell {
                            values: kinds.map(|k| s.report.value(k)),
                            star: kinds.map(|k| base.is_some_and(|b| disjoint(&s.report, &b.report, k))),
                        })
                    })
                    .collect();
                out.push_str(&render_row(&Row {
                    label: backend.clone(),
                    cells,
                }));
                out.push('\n');
            }
            if !macros.is_empty() {
                let cells = columns
                    .iter()
                    .map(|col| {
                        let m = macros.iter().find(|m| &column_of(&m.key) == col)?;
                        Some(Cell {
                            values: kinds.map(|k| m.values.get(&k).copied().flatten()),
                            star: [false; 2],
                        })
                    })
                    .collect();
                out.push_str(&render_row(&Row {
                    label: format!("{MACRO_BACKEND} ({})", macros[0].backends.join(", ")),
                    cells,
                }));
                out.push('\n');
            }
        }
    }

    if !report.stereo_fraction.is_empty() {
        out.push_str("\n## Retrieved stereotype fraction\n\n");
        out.push_str("| Benchmark | Collection | Retriever | k | Stereo fraction |\n|---|---|---|---|---|\n");
        for r in &report.stereo_fraction {
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {:.3} |",
                r.benchmark, r.collection, r.retriever, r.k, r.stereo_fraction
            );
        }
    }

    if !pooled.is_empty() {
        out.push_str("\n## Invalid answer rates\n\n");
        out.push_str("| Slice | Ambiguous | Disambiguated | Failed records |\n|---|---|---|---|\n");
        for s in &pooled {
            let f = |v: Option<f64>| v.map_or("n/a".to_string(), pct);
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} |",
                s.id,
                f(s.report.invalid_rate_a),
                f(s.report.invalid_rate_d),
                s.failed
            );
        }
    }

    if let Some(t) = &report.tradeoff {
        out.push_str("\n## Relevance vs. bias level\n\n");
        let _ = writeln!(
            out,
            "Retriever `{}` on `{}`, benchmark `{}` ({} view), judged by `{}`; {} documents excluded{}.\n",
            t.retriever,
            t.collection,
            t.benchmark,
            t.view,
            t.judge,
            t.judge_excluded,
            if t.unreliable { ", flagged unreliable" } else { "" }
        );
        out.push_str("| k | Relevance | Bias level | Harmonic |\n|---|---|---|---|\n");
        for r in &t.rows {
            let _ = writeln!(out, "| {} | {:.3} | {:.3} | {:.3} |", r.k, r.relevance, r.bias_level, r.harmonic);
        }
    }

    let notes: Vec<_> = pooled.iter().filter(|s| !s.report.notes.is_empty()).collect();
    if !notes.is_empty() {
        out.push_str("\n## Notes\n\n");
        for s in notes {
            for n in &s.report.notes {
                let _ = writeln!(out, "- `{}`: {n}", s.id);
            }
        }
    }

    out.push_str("\n## Skipped combinations\n\n");
    if report.skipped.is_empty() {
        out.push_str("None.\n");
    } else {
        for s in &report.skipped {
            let _ = writeln!(out, "- {}: {}", s.combination, s.reason);
        }
    }
    out
}

/// One table cell read back from a rendered markdown report.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkdownCell {
    pub section: String,
    pub row: String,
    pub column: String,
    pub ambiguous: Option<f64>,
    pub disambiguated: Option<f64>,
    pub starred: [bool; 2],
}

fn parse_component(s: &str) -> (Option<f64>, bool) {
    let star = s.contains("\\*");
    let bare = s.replace("\\*", "").replace("**", "").replace('_', "");
    (bare.trim().parse().ok(), star)
}

/// Cells of the value tables (those whose first header is `Backend`).
pub fn markdown_cells(md: &str) -> Vec<MarkdownCell> {
    let mut out = Vec::new();
    let mut section = String::new();
    let mut header: Option<Vec<String>> = None;
    for line in md.lines() {
        if let Some(h) = line.strip_prefix("## ") {
            section = h.to_string();
            header = None;
            continue;
        }
        if !line.starts_with('|') {
            header = None;
            continue;
        }
        let fields: Vec<String> = line.trim_matches('|').split('|').map(|f| f.trim().to_string()).collect();
        match &header {
            None if fields.first().is_some_and(|f| f == "Backend") => header = Some(fields),
            None => {}
            Some(_) if fields.iter().all(|f| f.chars().all(|c| c == '-')) => {}
            Some(h) => {
                for (col, cell) in h.iter().zip(&fields).skip(1) {
                    let Some((a, d)) = cell.split_once(" / ") else { continue };
                    let (ambiguous, sa) = parse_component(a);
                    let (disambiguated, sd) = parse_component(d);
                    out.push(MarkdownCell {
                        section: section.clone(),
                        row: fields[0].clone(),
                        column: col.clone(),
                        ambiguous,
                        disambiguated,
                        starred: [sa, sd],
                    });
                }
            }
        }
    }
    out
}
