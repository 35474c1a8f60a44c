use std::fmt;

use serde::{Deserialize, Serialize};

use crate::benchmark::Letter;
use crate::corpus::find_word;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Parsed {
    A,
    B,
    C,
    #[serde(rename = "invalid")]
    Invalid,
}

impl Parsed {
    pub fn letter(self) -> Option<Letter> {
        match self {
            Parsed::A => Some(Letter::A),
            Parsed::B => Some(Letter::B),
            Parsed::C => Some(Letter::C),
            Parsed::Invalid => None,
        }
    }
}

impl From<Letter> for Parsed {
    fn from(l: Letter) -> Self {
        match l {
            Letter::A => Parsed::A,
            Letter::B => Parsed::B,
            Letter::C => Parsed::C,
        }
    }
}

impl From<Option<Letter>> for Parsed {
    fn from(l: Option<Letter>) -> Self {
        l.map_or(Parsed::Invalid, Parsed::from)
    }
}

impl fmt::Display for Parsed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.letter() {
            Some(l) => write!(f, "{l}"),
            None => f.write_str("invalid"),
        }
    }
}

/// Letters standing alone in `raw`. Uppercase letters always count; a
/// lowercase one only inside parentheses or as the whole reply, so the
/// article "a" is not read as an answer.
fn standalone_letters(raw: &str) -> Vec<Letter> {
    let chars: Vec<char> = raw.chars().collect();
    let whole = raw.trim();
    let mut out = Vec::new();
    for (i, &c) in chars.iter().enumerate() {
        let Some(letter) = Letter::from_char(c) else {
            continue;
        };
        let prev = i.checked_sub(1).map(|j| chars[j]);
        let next = chars.get(i + 1).copied();
        if prev.is_some_and(char::is_alphanumeric) || next.is_some_and(char::is_alphanumeric) {
            continue;
        }
        let accepted = c.is_ascii_uppercase()
            || (prev == Some('(') && next == Some(')'))
            || whole.trim_end_matches(['.', ')', ':']).trim_start_matches('(') == c.to_string();
        if accepted {
            out.push(letter);
        }
    }
    out
}

/// Map a raw response to an option letter.
///
/// Rules, in order: a single distinct standalone letter; otherwise exactly one
/// option text found as a whole phrase (case-insensitive, a match contained
/// in a longer matching option is dropped); otherwise invalid.
pub fn parse_answer(raw: &str, options: &[(Letter, String)]) -> Parsed {
    let mut letters = standalone_letters(raw);
    letters.sort();
    letters.dedup();
    match letters.len() {
        1 => return letters[0].into(),
        n if n > 1 => return Parsed::Invalid,
        _ => {}
    }

    let hay = raw.to_lowercase();
    let matched: Vec<(Letter, String)> = options
        .iter()
        .map(|(l, t)| (*l, t.trim().to_lowercase()))
        .filter(|(_, t)| !t.is_empty() && find_word(&hay, t, 0).is_some())
        .collect();
    let maximal: Vec<Letter> = matched
        .iter()
        .filter(|(_, t)| !matched.iter().any(|(_, o)| o.len() > t.len() && o.contains(t.as_str())))
        .map(|(l, _)| *l)
        .collect();
    match maximal.as_slice() {
        [only] => (*only).into(),
        _ => Parsed::Invalid,
    }
}
