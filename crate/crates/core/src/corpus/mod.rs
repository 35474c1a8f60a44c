//! Bias corpora: documents, source adapters, and polarity-controlled
//! collections.

mod collection;
mod load;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

pub use collection::{build_collection, Collection, CollectionSpec, PolarityFilter};
pub use load::{
    ensure_unique_ids, find_proper_names, load_bias_dataset, load_sources, load_with_adapter,
    write_rejects, AdapterConfig, ColumnMap, DocumentDefaults, LoadOutcome, NameViolation,
    RowReject, SourceFormat, ADAPTER_CONFIG_VERSION,
};
pub(crate) use load::find_word;
pub use stats::{collection_stats, CollectionStats, StatsRow};

/// Social bias category of a document or benchmark question.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum BiasCategory {
    Gender,
    Age,
    Race,
    Religion,
    Other(String),
}

impl fmt::Display for BiasCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BiasCategory::Gender => f.write_str("gender"),
            BiasCategory::Age => f.write_str("age"),
            BiasCategory::Race => f.write_str("race"),
            BiasCategory::Religion => f.write_str("religion"),
            BiasCategory::Other(name) => f.write_str(name),
        }
    }
}

impl From<String> for BiasCategory {
    fn from(s: String) -> Self {
        let norm = s.trim().to_lowercase();
        match norm.as_str() {
            "gender" | "gender_identity" => BiasCategory::Gender,
            "age" => BiasCategory::Age,
            "race" | "race_ethnicity" => BiasCategory::Race,
            "religion" => BiasCategory::Religion,
            _ => BiasCategory::Other(norm),
        }
    }
}

impl From<&str> for BiasCategory {
    fn from(s: &str) -> Self {
        BiasCategory::from(s.to_string())
    }
}

impl From<BiasCategory> for String {
    fn from(c: BiasCategory) -> Self {
        c.to_string()
    }
}

/// Stereotype polarity. There is deliberately no neutral value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Stereotype,
    AntiStereotype,
}

impl Polarity {
    pub const ALL: [Polarity; 2] = [Polarity::Stereotype, Polarity::AntiStereotype];

    pub fn as_str(self) -> &'static str {
        match self {
            Polarity::Stereotype => "stereotype",
            Polarity::AntiStereotype => "anti_stereotype",
        }
    }
}

impl fmt::Display for Polarity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Polarity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let norm: String = s
            .trim()
            .to_lowercase()
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect();
        match norm.as_str() {
            "stereotype" | "stereo" | "stereotypical" => Ok(Polarity::Stereotype),
            "antistereotype" | "antistereo" | "anti" | "antistereotypical" => {
                Ok(Polarity::AntiStereotype)
            }
            _ => Err(Error::Input(format!("unrecognised polarity `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", from = "String")]
pub enum Language {
    En,
    Ja,
    Zh,
    Other(String),
}

impl Language {
    /// Chinese and Japanese text has no whitespace word boundaries.
    pub fn is_cjk(&self) -> bool {
        matches!(self, Language::Ja | Language::Zh)
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Language::En => f.write_str("en"),
            Language::Ja => f.write_str("ja"),
            Language::Zh => f.write_str("zh"),
            Language::Other(code) => f.write_str(code),
        }
    }
}

impl From<String> for Language {
    fn from(s: String) -> Self {
        let norm = s.trim().to_lowercase();
        match norm.as_str() {
            "en" | "english" => Language::En,
            "ja" | "jp" | "japanese" => Language::Ja,
            "zh" | "cn" | "chinese" => Language::Zh,
            _ => Language::Other(norm),
        }
    }
}

impl From<&str> for Language {
    fn from(s: &str) -> Self {
        Language::from(s.to_string())
    }
}

impl From<Language> for String {
    fn from(l: Language) -> Self {
        l.to_string()
    }
}

/// One corpus sentence, treated as a retrievable document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub bias_category: BiasCategory,
    pub polarity: Polarity,
    pub source_dataset: String,
    pub language: Language,
}
