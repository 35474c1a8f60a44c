//! BBQ-style question answering instances with role-labelled options.

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::{BiasCategory, Language};
use crate::error::{Error, Result};

/// Largest tolerated share of rejected rows before loading is aborted.
pub const MAX_REJECT_RATE: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Letter {
    A,
    B,
    C,
}

impl Letter {
    pub const ALL: [Letter; 3] = [Letter::A, Letter::B, Letter::C];

    pub fn as_char(self) -> char {
        match self {
            Letter::A => 'A',
            Letter::B => 'B',
            Letter::C => 'C',
        }
    }

    pub fn from_char(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'A' => Some(Letter::A),
            'B' => Some(Letter::B),
            'C' => Some(Letter::C),
            _ => None,
        }
    }
}

impl fmt::Display for Letter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    StereoAligned,
    CounterAligned,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub letter: Letter,
    pub text: String,
    pub role: Role,
}

/// Which group the disambiguating evidence points to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPolarity {
    Stereotyped,
    #[serde(alias = "counter-stereotyped", alias = "counterstereotyped")]
    CounterStereotyped,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum View {
    Ambiguous,
    Disambiguated,
}

impl View {
    pub const BOTH: [View; 2] = [View::Ambiguous, View::Disambiguated];

    pub fn as_str(self) -> &'static str {
        match self {
            View::Ambiguous => "ambiguous",
            View::Disambiguated => "disambiguated",
        }
    }
}

impl fmt::Display for View {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BbqInstance {
    pub id: String,
    #[serde(rename = "category")]
    pub bias_category: BiasCategory,
    #[serde(default = "default_language")]
    pub language: Language,
    pub question: String,
    pub ambiguous_context: String,
    pub disambiguated_context: String,
    pub context_polarity: ContextPolarity,
    pub options: Vec<AnswerOption>,
}

fn default_language() -> Language {
    Language::En
}

impl BbqInstance {
    /// Every violated invariant, described; empty when the instance is valid.
    pub fn violations(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.id.trim().is_empty() {
            out.push("empty id".to_string());
        }
        if self.question.trim().is_empty() {
            out.push("empty question".to_string());
        }
        if self.options.len() != 3 {
            out.push(format!("expected 3 options, found {}", self.options.len()));
        }
        let letters: HashSet<Letter> = self.options.iter().map(|o| o.letter).collect();
        if letters.len() != self.options.len() {
            out.push("duplicate option letters".to_string());
        }
        for role in [Role::StereoAligned, Role::CounterAligned, Role::Unknown] {
            let n = self.options.iter().filter(|o| o.role == role).count();
            if n != 1 {
                out.push(format!("role {role:?} appears {n} times (expected exactly once)"));
            }
        }
        for o in &self.options {
            if o.text.trim().is_empty() {
                out.push(format!("option {} has empty text", o.letter));
            }
        }
        out
    }

    pub fn letter_for(&self, role: Role) -> Letter {
        self.options
            .iter()
            .find(|o| o.role == role)
            .map(|o| o.letter)
            .expect("validated instance has every role")
    }

    pub fn role_of(&self, letter: Letter) -> Option<Role> {
        self.options.iter().find(|o| o.letter == letter).map(|o| o.role)
    }

    pub fn context(&self, view: View) -> &str {
        match view {
            View::Ambiguous => &self.ambiguous_context,
            View::Disambiguated => &self.disambiguated_context,
        }
    }

    /// Role of the unbiased answer: unknown for ambiguous contexts, otherwise
    /// the group the evidence favours.
    pub fn correct_role(&self, view: View) -> Role {
        match (view, self.context_polarity) {
            (View::Ambiguous, _) => Role::Unknown,
            (View::Disambiguated, ContextPolarity::Stereotyped) => Role::StereoAligned,
            (View::Disambiguated, ContextPolarity::CounterStereotyped) => Role::CounterAligned,
        }
    }

    pub fn correct_letter(&self, view: View) -> Letter {
        self.letter_for(self.correct_role(view))
    }

    /// Options sorted by letter, as rendered in prompts.
    pub fn sorted_options(&self) -> Vec<&AnswerOption> {
        let mut opts: Vec<&AnswerOption> = self.options.iter().collect();
        opts.sort_by_key(|o| o.letter);
        opts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BbqReject {
    pub line: usize,
    pub id: Option<String>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct BbqLoad {
    pub instances: Vec<BbqInstance>,
    pub rejects: Vec<BbqReject>,
}

/// Load a BBQ JSONL file, validating every instance. More than
/// [`MAX_REJECT_RATE`] rejected rows aborts the load.
pub fn load_bbq(path: &Path) -> Result<BbqLoad> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = BbqLoad::default();
    let mut seen = HashSet::new();
    let mut total = 0usize;
    for (line_no, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let inst: BbqInstance = match serde_json::from_str(&line) {
            Ok(i) => i,
            Err(e) => {
                out.rejects.push(BbqReject {
                    line: line_no + 1,
                    id: None,
                    violations: vec![format!("schema: {e}")],
                });
                continue;
            }
        };
        let mut violations = inst.violations();
        if !seen.insert(inst.id.clone()) {
            violations.push(format!("duplicate instance id `{}`", inst.id));
        }
        if violations.is_empty() {
            out.instances.push(inst);
        } else {
            out.rejects.push(BbqReject {
                line: line_no + 1,
                id: Some(inst.id),
                violations,
            });
        }
    }
    if total > 0 && out.rejects.len() as f64 > MAX_REJECT_RATE * total as f64 {
        return Err(Error::TooManyRejects {
            path: path.to_path_buf(),
            rejected: out.rejects.len(),
            total,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy)]
pub struct EvalItem<'a> {
    pub instance: &'a BbqInstance,
    pub view: View,
}

#[derive(Debug, Clone, Default)]
pub struct SplitViews<'a> {
    pub ambiguous: Vec<EvalItem<'a>>,
    pub disambiguated: Vec<EvalItem<'a>>,
}

impl SplitViews<'_> {
    pub fn n_a(&self) -> usize {
        self.ambiguous.len()
    }

    pub fn n_s(&self) -> usize {
        self.count_polarity(ContextPolarity::Stereotyped)
    }

    pub fn n_c(&self) -> usize {
        self.count_polarity(ContextPolarity::CounterStereotyped)
    }

    fn count_polarity(&self, p: ContextPolarity) -> usize {
        self.disambiguated
            .iter()
            .filter(|i| i.instance.context_polarity == p)
            .count()
    }
}

/// One ambiguous and one disambiguated evaluation item per instance.
pub fn pair_split(instances: &[BbqInstance]) -> SplitViews<'_> {
    SplitViews {
        ambiguous: instances
            .iter()
            .map(|instance| EvalItem {
                instance,
                view: View::Ambiguous,
            })
            .collect(),
        disambiguated: instances
            .iter()
            .map(|instance| EvalItem {
                instance,
                view: View::Disambiguated,
            })
            .collect(),
    }
}
