//! Editable prompt assets. Bundled defaults are compiled in; any of them can
//! be replaced by a JSON file.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generation::{FewShotExample, InstructionSet};
use crate::mitigation::DdpRule;

const DEFAULT_ICL: &str = include_str!("../assets/icl_examples.json");
const DEFAULT_PROMPTS: &str = include_str!("../assets/prompts.json");
const DEFAULT_DDP_RULES: &str = include_str!("../assets/ddp_rules.json");

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTexts {
    pub summarizer: String,
    /// `{initial}` is replaced with the stage-one answer.
    pub ddp_guidance: String,
    pub judge: String,
}

/// Rules per bias category, keyed by the category's display name.
pub type DdpRuleSet = BTreeMap<String, Vec<DdpRule>>;

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct AssetPaths {
    pub instructions: Option<PathBuf>,
    pub icl_examples: Option<PathBuf>,
    pub prompts: Option<PathBuf>,
    pub ddp_rules: Option<PathBuf>,
}

impl AssetPaths {
    pub fn iter(&self) -> impl Iterator<Item = &PathBuf> {
        [&self.instructions, &self.icl_examples, &self.prompts, &self.ddp_rules]
            .into_iter()
            .flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assets {
    pub instructions: InstructionSet,
    pub icl_examples: Vec<FewShotExample>,
    pub prompts: PromptTexts,
    pub ddp_rules: DdpRuleSet,
}

impl Default for Assets {
    fn default() -> Self {
        Assets {
            instructions: InstructionSet::default(),
            icl_examples: serde_json::from_str(DEFAULT_ICL).expect("bundled ICL examples parse"),
            prompts: serde_json::from_str(DEFAULT_PROMPTS).expect("bundled prompts parse"),
            ddp_rules: serde_json::from_str(DEFAULT_DDP_RULES).expect("bundled DDP rules parse"),
        }
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e))
}

impl Assets {
    pub fn load(paths: &AssetPaths) -> Result<Self> {
        let mut a = Assets::default();
        if let Some(p) = &paths.instructions {
            a.instructions = read_json(p)?;
        }
        if let Some(p) = &paths.icl_examples {
            a.icl_examples = read_json(p)?;
        }
        if let Some(p) = &paths.prompts {
            a.prompts = read_json(p)?;
        }
        if let Some(p) = &paths.ddp_rules {
            a.ddp_rules = read_json(p)?;
        }
        Ok(a)
    }
}
