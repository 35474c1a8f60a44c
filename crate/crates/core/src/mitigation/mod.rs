//! Prompt-level debiasing: few-shot examples, neutral summaries of the
//! retrieved documents, and two-stage placeholder prompting.

mod ddp;
mod icl;
mod summarize;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::assets::Assets;
use crate::error::{Error, Result};

pub use ddp::{apply_ddp, neutralize, restore, DdpOutcome, DdpRule, Substitution};
pub use icl::apply_icl;
pub use summarize::{summarize_docs, SummaryOutcome, SUMMARY_MAX_TOKENS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MitigationKind {
    #[default]
    None,
    Icl,
    Summarizer,
    Ddp,
}

impl MitigationKind {
    pub fn as_str(self) -> &'static str {
        match self {
            MitigationKind::None => "none",
            MitigationKind::Icl => "icl",
            MitigationKind::Summarizer => "summarizer",
            MitigationKind::Ddp => "ddp",
        }
    }
}

impl fmt::Display for MitigationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A mitigation as named in a run config. Examples, prompts and rules come
/// from [`Assets`]; backends are referenced by name.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct MitigationPlan {
    pub kind: MitigationKind,
    /// Backend that writes summaries.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summarizer_backend: Option<String>,
    /// Backend for the neutralized first stage; the evaluated backend when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ddp_stage1_backend: Option<String>,
}

impl MitigationPlan {
    pub fn none() -> Self {
        MitigationPlan::default()
    }

    pub fn of(kind: MitigationKind) -> Self {
        MitigationPlan {
            kind,
            ..Default::default()
        }
    }

    pub fn label(&self) -> &'static str {
        self.kind.as_str()
    }

    pub fn validate(&self, assets: &Assets) -> Result<()> {
        match self.kind {
            MitigationKind::None => Ok(()),
            MitigationKind::Icl if assets.icl_examples.is_empty() => {
                Err(Error::Mitigation("icl needs at least one example".into()))
            }
            MitigationKind::Summarizer if self.summarizer_backend.is_none() => {
                Err(Error::Mitigation("summarizer needs `summarizer_backend`".into()))
            }
            MitigationKind::Ddp if assets.ddp_rules.values().all(Vec::is_empty) => {
                Err(Error::Mitigation("ddp needs a non-empty rule set".into()))
            }
            _ => Ok(()),
        }
    }
}
