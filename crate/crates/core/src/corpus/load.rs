use std::collections::{BTreeMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{BiasCategory, Document, Language, Polarity};
use crate::error::{Error, Result};

pub const ADAPTER_CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SourceFormat {
    Jsonl,
    Csv,
    Tsv,
}

impl SourceFormat {
    pub fn from_extension(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(SourceFormat::Jsonl),
            "csv" => Some(SourceFormat::Csv),
            "tsv" => Some(SourceFormat::Tsv),
            _ => None,
        }
    }
}

/// Fallback values for fields a source does not carry per row (for example a
/// file that only holds gender sentences).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DocumentDefaults {
    pub bias_category: Option<BiasCategory>,
    pub polarity: Option<Polarity>,
    pub language: Option<Language>,
}

/// Maps a source's column names onto document fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ColumnMap {
    pub text: String,
    pub polarity: String,
    pub category: String,
    pub language: String,
    /// Source-specific polarity labels, e.g. `{"stereo": "stereotype", "antistereo": "anti_stereotype"}`.
    pub polarity_values: BTreeMap<String, Polarity>,
}

impl Default for ColumnMap {
    fn default() -> Self {
        ColumnMap {
            text: "text".into(),
            polarity: "polarity".into(),
            category: "category".into(),
            language: "language".into(),
            polarity_values: BTreeMap::new(),
        }
    }
}

/// Versioned JSON description of one source file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterConfig {
    #[serde(default = "default_version")]
    pub version: u32,
    pub source_tag: String,
    pub path: PathBuf,
    #[serde(default)]
    pub format: Option<SourceFormat>,
    #[serde(default)]
    pub columns: ColumnMap,
    #[serde(default)]
    pub defaults: DocumentDefaults,
}

fn default_version() -> u32 {
    ADAPTER_CONFIG_VERSION
}

impl AdapterConfig {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: AdapterConfig = serde_json::from_str(&raw).map_err(|e| Error::parse(path, e))?;
        cfg.check_version()?;
        if cfg.path.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.path = dir.join(&cfg.path);
            }
        }
        Ok(cfg)
    }

    pub fn check_version(&self) -> Result<()> {
        if self.version != ADAPTER_CONFIG_VERSION {
            return Err(Error::Config(format!(
                "adapter `{}` has version {}, expected {}",
                self.source_tag, self.version, ADAPTER_CONFIG_VERSION
            )));
        }
        Ok(())
    }

    pub fn resolved_format(&self) -> Result<SourceFormat> {
        self.format
            .or_else(|| SourceFormat::from_extension(&self.path))
            .ok_or_else(|| {
                Error::Config(format!(
                    "cannot infer format of {} for source `{}`",
                    self.path.display(),
                    self.source_tag
                ))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RowReject {
    pub source_tag: String,
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOutcome {
    pub documents: Vec<Document>,
    pub rejects: Vec<RowReject>,
    /// Data rows seen, including rejected ones.
    pub rows_read: usize,
}

impl LoadOutcome {
    fn extend(&mut self, other: LoadOutcome) {
        self.documents.extend(other.documents);
        self.rejects.extend(other.rejects);
        self.rows_read += other.rows_read;
    }
}

/// Load one source file with the default column names
/// (`text`, `polarity`, `category`, `language`).
pub fn load_bias_dataset(
    path: &Path,
    format: SourceFormat,
    source_tag: &str,
    defaults: &DocumentDefaults,
) -> Result<LoadOutcome> {
    load_rows(path, format, source_tag, &ColumnMap::default(), defaults)
}

pub fn load_with_adapter(adapter: &AdapterConfig) -> Result<LoadOutcome> {
    adapter.check_version()?;
    let format = adapter.resolved_format()?;
    load_rows(
        &adapter.path,
        format,
        &adapter.source_tag,
        &adapter.columns,
        &adapter.defaults,
    )
}

/// Load several sources in parallel. Output order follows `adapters`; ids must
/// be unique across the whole set.
pub fn load_sources(adapters: &[AdapterConfig]) -> Result<LoadOutcome> {
    let parts: Vec<LoadOutcome> = adapters
        .par_iter()
        .map(load_with_adapter)
        .collect::<Result<_>>()?;
    let mut merged = LoadOutcome::default();
    for part in parts {
        merged.extend(part);
    }
    ensure_unique_ids(&merged.documents)?;
    Ok(merged)
}

pub fn ensure_unique_ids(docs: &[Document]) -> Result<()> {
    let mut seen = HashSet::with_capacity(docs.len());
    for doc in docs {
        if !seen.insert(doc.id.as_str()) {
            return Err(Error::DuplicateId(doc.id.clone()));
        }
    }
    Ok(())
}

type Row = BTreeMap<String, String>;

fn load_rows(
    path: &Path,
    format: SourceFormat,
    source_tag: &str,
    columns: &ColumnMap,
    defaults: &DocumentDefaults,
) -> Result<LoadOutcome> {
    let rows = match format {
        SourceFormat::Jsonl => read_jsonl_rows(path)?,
        SourceFormat::Csv => read_delimited_rows(path, b',')?,
        SourceFormat::Tsv => read_delimited_rows(path, b'\t')?,
    };

    let mut out = LoadOutcome {
        rows_read: rows.len(),
        ..Default::default()
    };
    for (index, row) in rows.into_iter().enumerate() {
        let converted = row.and_then(|row| row_to_document(&row, index, source_tag, columns, defaults));
        match converted {
            Ok(doc) => out.documents.push(doc),
            Err(reason) => out.rejects.push(RowReject {
                source_tag: source_tag.to_string(),
                row: index,
                reason,
            }),
        }
    }
    Ok(out)
}

fn read_jsonl_rows(path: &Path) -> Result<Vec<std::result::Result<Row, String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = match serde_json::from_str::<serde_json::Value>(&line) {
            Ok(serde_json::Value::Object(map)) => Ok(map
                .into_iter()
                .filter_map(|(k, v)| {
                    let s = match v {
                        serde_json::Value::String(s) => s,
                        serde_json::Value::Null => return None,
                        other => other.to_string(),
                    };
                    Some((k, s))
                })
                .collect()),
            Ok(_) => Err("row is not a JSON object".to_string()),
            Err(e) => Err(format!("invalid JSON: {e}")),
        };
        rows.push(row);
    }
    Ok(rows)
}

fn read_delimited_rows(path: &Path, delimiter: u8) -> Result<Vec<std::result::Result<Row, String>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(delimiter)
        .flexible(true)
        .from_reader(file);
    let headers = match reader.headers() {
        Ok(h) => h.clone(),
        Err(e) => return Err(Error::parse(path, e)),
    };
    let mut rows = Vec::new();
    for record in reader.records() {
        let row = record
            .map(|rec| {
                headers
                    .iter()
                    .zip(rec.iter())
                    .map(|(h, v)| (h.to_string(), v.to_string()))
                    .collect()
            })
            .map_err(|e| format!("unreadable record: {e}"));
        rows.push(row);
    }
    Ok(rows)
}

fn field<'a>(row: &'a Row, column: &str) -> Option<&'a str> {
    row.get(column).map(|s| s.trim()).filter(|s| !s.is_empty())
}

fn row_to_document(
    row: &Row,
    index: usize,
    source_tag: &str,
    columns: &ColumnMap,
    defaults: &DocumentDefaults,
) -> std::result::Result<Document, String> {
    let text = field(row, &columns.text).ok_or("missing text")?;

    let polarity = match field(row, &columns.polarity) {
        Some(raw) => match columns
            .polarity_values
            .get(raw)
            .or_else(|| columns.polarity_values.get(&raw.to_lowercase()))
        {
            Some(p) => *p,
            None => raw.parse::<Polarity>().map_err(|e| e.to_string())?,
        },
        None => defaults.polarity.ok_or("missing polarity")?,
    };

    let bias_category = match field(row, &columns.category) {
        Some(raw) => BiasCategory::from(raw),
        None => defaults
            .bias_category
            .clone()
            .ok_or("missing bias category")?,
    };

    let language = field(row, &columns.language)
        .map(Language::from)
        .or_else(|| defaults.language.clone())
        .unwrap_or(Language::En);

    Ok(Document {
        id: format!("{source_tag}:{index}"),
        text: text.to_string(),
        bias_category,
        polarity,
        source_dataset: source_tag.to_string(),
        language,
    })
}

pub fn write_rejects(path: &Path, rejects: &[RowReject]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for reject in rejects {
        let line = serde_json::to_string(reject).expect("reject serializes");
        writeln!(w, "{line}").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameViolation {
    pub doc_id: String,
    pub name: String,
}

/// Report documents that still contain any of the given proper names as a
/// whole word. Names are not removed, only reported.
pub fn find_proper_names(docs: &[Document], names: &[String]) -> Vec<NameViolation> {
    let names: Vec<&str> = names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()).collect();
    let mut out = Vec::new();
    for doc in docs {
        for name in &names {
            if contains_word(&doc.text, name) {
                out.push(NameViolation {
                    doc_id: doc.id.clone(),
                    name: name.to_string(),
                });
            }
        }
    }
    out
}

pub(crate) fn contains_word(haystack: &str, needle: &str) -> bool {
    find_word(haystack, needle, 0).is_some()
}

/// Byte offset of the first occurrence of `needle` at or after `from` that is
/// not flanked by alphanumeric characters.
pub(crate) fn find_word(haystack: &str, needle: &str, from: usize) -> Option<usize> {
    if needle.is_empty() {
        return None;
    }
    let mut start = from;
    while let Some(pos) = haystack[start..].find(needle) {
        let abs = start + pos;
        let end = abs + needle.len();
        let before_ok = haystack[..abs]
            .chars()
            .next_back()
            .is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..]
            .chars()
            .next()
            .is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return Some(abs);
        }
        start = abs + haystack[abs..].chars().next().map_or(1, char::len_utf8);
    }
    None
}
