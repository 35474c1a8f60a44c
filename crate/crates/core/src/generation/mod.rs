//! Prompt assembly, generator backends, response caching and answer parsing.

mod backend;
mod cache;
mod chat;
mod parse;
mod prompt;

use serde::{Deserialize, Serialize};

use crate::benchmark::View;

pub use backend::{
    first_sentence, generate_all, AnswerKey, CachedGenerator, Generated, Generator, MockGenerator, MockPolicy,
    Request, Task, DEFAULT_MAX_TOKENS,
};
pub use cache::{CacheEntry, ResponseCache};
pub(crate) use cache::unix_now;
pub use chat::{ChatConfig, ChatGenerator};
pub use parse::{parse_answer, Parsed};
pub use prompt::{
    assemble_prompt, impressions, prompt_hash, render_options, FewShotExample, Impression, InstructionSet,
    InstructionVariant, Prompt, PromptParts,
};

/// One prompt, its response and the parsed answer. Records with `error` set
/// failed at the backend and are left out of metrics.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub instance_id: String,
    pub view: View,
    pub prompt_hash: String,
    pub backend_tag: String,
    pub raw_response: String,
    pub parsed: Parsed,
    pub retrieved_doc_ids: Vec<String>,
    pub timestamp: u64,
    pub config_fingerprint: String,
    pub variant: InstructionVariant,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    /// Intermediate mitigation output (summary, two-stage answers).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mitigation_trace: Option<serde_json::Value>,
}
