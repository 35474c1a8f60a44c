use std::collections::HashSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::cache::ResponseCache;
use super::prompt::{prompt_hash, Impression, Prompt};
use crate::benchmark::{BbqInstance, ContextPolarity, Letter, Role, View};
use crate::corpus::Polarity;
use crate::error::{Error, Result};

pub const DEFAULT_MAX_TOKENS: u32 = 16;

/// What the options mean for one evaluation item. Mocks answer from this; it
/// is never sent over the wire.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerKey {
    pub roles: Vec<(Letter, Role)>,
    pub view: View,
    pub context_polarity: ContextPolarity,
}

impl AnswerKey {
    pub fn for_instance(inst: &BbqInstance, view: View) -> Self {
        AnswerKey {
            roles: inst.options.iter().map(|o| (o.letter, o.role)).collect(),
            view,
            context_polarity: inst.context_polarity,
        }
    }

    pub fn letter_for(&self, role: Role) -> Letter {
        self.roles
            .iter()
            .find(|(_, r)| *r == role)
            .map(|(l, _)| *l)
            .expect("answer key holds every role")
    }
}

#[derive(Debug, Clone)]
pub enum Task {
    Answer {
        key: AnswerKey,
        impressions: Vec<Impression>,
    },
    Summarize {
        docs: Vec<Impression>,
    },
    JudgeBias {
        doc: Impression,
    },
    Other,
}

#[derive(Debug, Clone)]
pub struct Request {
    pub system: String,
    pub user: String,
    pub max_tokens: u32,
    pub task: Task,
}

impl Request {
    pub fn answer(prompt: &Prompt, key: AnswerKey) -> Self {
        Request {
            system: prompt.system_text.clone(),
            user: prompt.user_text.clone(),
            max_tokens: DEFAULT_MAX_TOKENS,
            task: Task::Answer {
                key,
                impressions: prompt.parts.social_impressions.clone(),
            },
        }
    }

    pub fn hash(&self) -> String {
        prompt_hash(&self.system, &self.user)
    }
}

pub trait Generator: Send + Sync {
    fn tag(&self) -> String;

    /// Remote backends cost money and are subject to caching and dry-run
    /// accounting; local mocks are not.
    fn is_remote(&self) -> bool {
        false
    }

    fn generate(&self, req: &Request) -> Result<String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MockPolicy {
    AlwaysUnknown,
    ContextFollower,
    DocMajority,
    FixedStereo,
    FixedCounter,
}

impl MockPolicy {
    pub fn as_str(self) -> &'static str {
        match self {
            MockPolicy::AlwaysUnknown => "always_unknown",
            MockPolicy::ContextFollower => "context_follower",
            MockPolicy::DocMajority => "doc_majority",
            MockPolicy::FixedStereo => "fixed_stereo",
            MockPolicy::FixedCounter => "fixed_counter",
        }
    }

    pub fn role(self, key: &AnswerKey, impressions: &[Impression]) -> Role {
        match self {
            MockPolicy::AlwaysUnknown => Role::Unknown,
            MockPolicy::FixedStereo => Role::StereoAligned,
            MockPolicy::FixedCounter => Role::CounterAligned,
            MockPolicy::ContextFollower => match (key.view, key.context_polarity) {
                (View::Ambiguous, _) => Role::Unknown,
                (View::Disambiguated, ContextPolarity::Stereotyped) => Role::StereoAligned,
                (View::Disambiguated, ContextPolarity::CounterStereotyped) => Role::CounterAligned,
            },
            MockPolicy::DocMajority => {
                let stereo = impressions
                    .iter()
                    .filter(|i| i.polarity == Some(Polarity::Stereotype))
                    .count();
                let anti = impressions
                    .iter()
                    .filter(|i| i.polarity == Some(Polarity::AntiStereotype))
                    .count();
                match stereo.cmp(&anti) {
                    std::cmp::Ordering::Greater => Role::StereoAligned,
                    std::cmp::Ordering::Less => Role::CounterAligned,
                    std::cmp::Ordering::Equal => Role::Unknown,
                }
            }
        }
    }
}

/// Text up to and including the first sentence terminator.
pub fn first_sentence(text: &str) -> &str {
    let t = text.trim();
    match t.char_indices().find(|(_, c)| matches!(c, '.' | '!' | '?' | '。' | '！' | '？')) {
        Some((i, c)) => &t[..i + c.len_utf8()],
        None => t,
    }
}

/// Deterministic offline backend. Answers by policy, summarizes by echoing the
/// first sentence of each document, and judges stereotypes +2 and
/// anti-stereotypes -2.
#[derive(Debug, Clone, Copy)]
pub struct MockGenerator {
    pub policy: MockPolicy,
}

impl MockGenerator {
    pub fn new(policy: MockPolicy) -> Self {
        MockGenerator { policy }
    }
}

impl Generator for MockGenerator {
    fn tag(&self) -> String {
        format!("mock:{}", self.policy.as_str())
    }

    fn generate(&self, req: &Request) -> Result<String> {
        Ok(match &req.task {
            Task::Answer { key, impressions } => key.letter_for(self.policy.role(key, impressions)).to_string(),
            Task::Summarize { docs } => docs
                .iter()
                .map(|d| first_sentence(&d.text))
                .collect::<Vec<_>>()
                .join(" "),
            Task::JudgeBias { doc } => match doc.polarity {
                Some(Polarity::Stereotype) => "2".into(),
                Some(Polarity::AntiStereotype) => "-2".into(),
                None => "0".into(),
            },
            Task::Other => String::new(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generated {
    pub response: String,
    pub cached: bool,
}

/// A backend behind the response cache, with call accounting. In dry-run mode
/// remote cache misses are counted instead of sent and yield an empty reply.
pub struct CachedGenerator {
    inner: Arc<dyn Generator>,
    tag: String,
    cache: Option<Arc<ResponseCache>>,
    dry_run: bool,
    calls: AtomicUsize,
    misses: Mutex<HashSet<String>>,
}

impl CachedGenerator {
    pub fn new(inner: Arc<dyn Generator>, cache: Option<Arc<ResponseCache>>) -> Self {
        let tag = inner.tag();
        CachedGenerator {
            inner,
            tag,
            cache,
            dry_run: false,
            calls: AtomicUsize::new(0),
            misses: Mutex::new(HashSet::new()),
        }
    }

    pub fn dry_run(mut self, on: bool) -> Self {
        self.dry_run = on;
        self
    }

    pub fn tag(&self) -> &str {
        &self.tag
    }

    pub fn is_remote(&self) -> bool {
        self.inner.is_remote()
    }

    /// Requests actually sent to the backend.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    /// Distinct remote prompts a dry run would have sent.
    pub fn estimated_calls(&self) -> usize {
        self.misses.lock().expect("miss set poisoned").len()
    }

    pub fn generate(&self, req: &Request) -> Result<Generated> {
        let remote = self.inner.is_remote();
        let cache = self.cache.as_ref().filter(|_| remote);
        let hash = req.hash();
        if let Some(hit) = cache.and_then(|c| c.get(&self.tag, &hash)) {
            return Ok(Generated {
                response: hit,
                cached: true,
            });
        }
        if self.dry_run && remote {
            self.misses.lock().expect("miss set poisoned").insert(hash);
            return Ok(Generated {
                response: String::new(),
                cached: false,
            });
        }
        self.calls.fetch_add(1, Ordering::SeqCst);
        let response = self.inner.generate(req)?;
        if let Some(c) = cache {
            c.put(&self.tag, &hash, &response)?;
        }
        Ok(Generated {
            response,
            cached: false,
        })
    }
}

/// Run requests with at most `max_in_flight` concurrent calls. Results come
/// back in input order.
pub fn generate_all(gen: &CachedGenerator, reqs: &[Request], max_in_flight: usize) -> Result<Vec<Result<Generated>>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    Ok(pool.install(|| reqs.par_iter().map(|r| gen.generate(r)).collect()))
}
