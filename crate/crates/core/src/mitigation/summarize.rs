use std::fmt::Write as _;

use crate::generation::{CachedGenerator, Impression, Request, Task};

pub const SUMMARY_MAX_TOKENS: u32 = 256;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SummaryOutcome {
    pub impressions: Vec<Impression>,
    /// Set when the backend failed and the original documents were kept.
    pub fallback: Option<String>,
    pub cached: bool,
}

/// Replace the retrieved documents by a single summary. The summarizer sees
/// the documents only. An empty list passes through without a backend call.
pub fn summarize_docs(docs: Vec<Impression>, gen: &CachedGenerator, instruction: &str) -> SummaryOutcome {
    if docs.is_empty() {
        return SummaryOutcome {
            impressions: docs,
            fallback: None,
            cached: false,
        };
    }
    let mut user = String::new();
    for (i, d) in docs.iter().enumerate() {
        let _ = writeln!(user, "{}. {}", i + 1, d.text.trim());
    }
    let req = Request {
        system: instruction.to_string(),
        user: user.trim_end().to_string(),
        max_tokens: SUMMARY_MAX_TOKENS,
        task: Task::Summarize { docs: docs.clone() },
    };
    match gen.generate(&req) {
        Ok(g) => SummaryOutcome {
            impressions: vec![Impression {
                doc_id: format!("summary:{}", &req.hash()[..12]),
                text: g.response.trim().to_string(),
                polarity: None,
                sources: docs.into_iter().map(|d| d.doc_id).collect(),
            }],
            fallback: None,
            cached: g.cached,
        },
        Err(e) => {
            log::warn!("summarizer `{}` failed, keeping original documents: {e}", gen.tag());
            SummaryOutcome {
                impressions: docs,
                fallback: Some(e.to_string()),
                cached: false,
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::corpus::Polarity;
    use crate::error::{Error, Result};
    use crate::generation::{Generator, MockGenerator, MockPolicy};

    fn docs() -> Vec<Impression> {
        [("d1", "Old people are slow. They forget."), ("d2", "Teens are reckless!")]
            .iter()
            .map(|(id, t)| Impression {
                doc_id: id.to_string(),
                text: t.to_string(),
                polarity: Some(Polarity::Stereotype),
                sources: vec![],
            })
            .collect()
    }

    #[test]
    fn mock_summary_concatenates_first_sentences() {
        let gen = CachedGenerator::new(Arc::new(MockGenerator::new(MockPolicy::AlwaysUnknown)), None);
        let out = summarize_docs(docs(), &gen, "Summarize.");
        assert_eq!(out.impressions.len(), 1);
        assert_eq!(out.impressions[0].text, "Old people are slow. Teens are reckless!");
        assert_eq!(out.impressions[0].sources, vec!["d1", "d2"]);
        assert_eq!(out.impressions[0].polarity, None);
        assert!(out.fallback.is_none());
    }

    #[test]
    fn empty_input_makes_no_call() {
        let gen = CachedGenerator::new(Arc::new(MockGenerator::new(MockPolicy::AlwaysUnknown)), None);
        let out = summarize_docs(vec![], &gen, "Summarize.");
        assert!(out.impressions.is_empty());
        assert_eq!(gen.calls(), 0);
    }

    struct Broken;

    impl Generator for Broken {
        fn tag(&self) -> String {
            "broken".into()
        }
        fn generate(&self, _: &Request) -> Result<String> {
            Err(Error::Transport("down".into()))
        }
    }

    #[test]
    fn failure_falls_back_to_documents() {
        let gen = CachedGenerator::new(Arc::new(Broken), None);
        let out = summarize_docs(docs(), &gen, "Summarize.");
        assert_eq!(out.impressions, docs());
        assert!(out.fallback.unwrap().contains("down"));
    }
}
