use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::generation::{parse_answer, AnswerKey, CachedGenerator, Parsed, Prompt, Request};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdpRule {
    #[serde(rename = "match")]
    pub pattern: String,
    pub placeholder: String,
}

/// One replaced span. `start` is a byte offset into the neutralized text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Substitution {
    pub start: usize,
    pub original: String,
    pub placeholder: String,
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(|c| c.is_ascii_alphanumeric())
}

/// Replace whole-word, ASCII-case-insensitive rule matches, longest match
/// first at each position. The returned spans let [`restore`] rebuild the
/// input exactly.
pub fn neutralize(text: &str, rules: &[DdpRule]) -> (String, Vec<Substitution>) {
    let mut ordered: Vec<&DdpRule> = rules.iter().filter(|r| !r.pattern.is_empty()).collect();
    ordered.sort_by(|a, b| b.pattern.len().cmp(&a.pattern.len()));
    let mut out = String::with_capacity(text.len());
    let mut subs = Vec::new();
    let mut i = 0;
    while i < text.len() {
        let rest = &text[i..];
        let prev = text[..i].chars().next_back();
        let hit = (!is_word_char(prev))
            .then(|| {
                ordered.iter().find(|r| {
                    let n = r.pattern.len();
                    rest.len() >= n
                        && rest.is_char_boundary(n)
                        && rest[..n].eq_ignore_ascii_case(&r.pattern)
                        && !is_word_char(rest[n..].chars().next())
                })
            })
            .flatten();
        match hit {
            Some(r) => {
                let n = r.pattern.len();
                subs.push(Substitution {
                    start: out.len(),
                    original: rest[..n].to_string(),
                    placeholder: r.placeholder.clone(),
                });
                out.push_str(&r.placeholder);
                i += n;
            }
            None => {
                let c = rest.chars().next().expect("non-empty rest");
                out.push(c);
                i += c.len_utf8();
            }
        }
    }
    (out, subs)
}

pub fn restore(neutral: &str, subs: &[Substitution]) -> String {
    let mut out = neutral.to_string();
    for s in subs.iter().rev() {
        out.replace_range(s.start..s.start + s.placeholder.len(), &s.original);
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DdpOutcome {
    pub stage1_prompt_hash: String,
    pub stage1_user_text: String,
    pub stage1_response: String,
    pub stage1_parsed: Parsed,
    pub substitutions: Vec<Substitution>,
    pub final_prompt_hash: String,
    pub final_response: String,
    pub final_parsed: Parsed,
}

fn neutral_prompt(prompt: &Prompt, rules: &[DdpRule]) -> (Prompt, Vec<Substitution>) {
    let mut p = prompt.clone();
    let mut all = Vec::new();
    let mut apply = |s: &mut String| {
        let (n, subs) = neutralize(s, rules);
        *s = n;
        all.extend(subs);
    };
    for imp in &mut p.parts.social_impressions {
        apply(&mut imp.text);
    }
    apply(&mut p.parts.context);
    apply(&mut p.parts.question);
    for (_, text) in &mut p.parts.options {
        apply(text);
    }
    p.rerender();
    (p, all)
}

/// Two-stage prompting. Stage one answers the prompt with group terms replaced
/// by placeholders; stage two answers the original prompt with that initial
/// answer and `guidance_template` (its `{initial}` filled in) appended.
pub fn apply_ddp(
    prompt: &Prompt,
    key: &AnswerKey,
    rules: &[DdpRule],
    guidance_template: &str,
    stage1: &CachedGenerator,
    stage2: &CachedGenerator,
) -> Result<DdpOutcome> {
    let (neutral, substitutions) = neutral_prompt(prompt, rules);
    if substitutions.is_empty() {
        log::warn!("ddp: no group terms replaced in prompt {}", &prompt.hash()[..12]);
    }
    let first = stage1.generate(&Request::answer(&neutral, key.clone()))?;
    let stage1_parsed = parse_answer(&first.response, &neutral.parts.options);
    let initial = match stage1_parsed.letter() {
        Some(l) => {
            let text = prompt
                .parts
                .options
                .iter()
                .find(|(x, _)| *x == l)
                .map_or("", |(_, t)| t.as_str());
            format!("({l}) {text}")
        }
        None => "none".to_string(),
    };
    let mut fin = prompt.clone();
    fin.parts.guidance = Some(guidance_template.replace("{initial}", &initial));
    fin.rerender();
    let second = stage2.generate(&Request::answer(&fin, key.clone()))?;
    let final_parsed = parse_answer(&second.response, &fin.parts.options);
    Ok(DdpOutcome {
        stage1_prompt_hash: neutral.hash(),
        stage1_user_text: neutral.user_text,
        stage1_response: first.response,
        stage1_parsed,
        substitutions,
        final_prompt_hash: fin.hash(),
        final_response: second.response,
        final_parsed,
    })
}
