//! Strict parsers for model responses.
//!
//! Parsers tolerate presentation noise (whitespace, quotes, markdown fences,
//! trailing punctuation) but never guess: anything outside the answer format is
//! a [`ParseError`] carrying the offending text.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::taxonomy::{AnswerMode, TaxonomyDimension};
use crate::LabelSet;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("expected a single yes/no answer, got {text:?}")]
    NotBinary { text: String },
    #[error("unparseable structure: {text:?}")]
    Structure { text: String },
    #[error("missing keys {keys:?} in {text:?}")]
    MissingKeys { keys: Vec<String>, text: String },
    #[error("value {value:?} for `{key}` is not yes/no")]
    BadValue { key: String, value: String, text: String },
    #[error("unknown key `{key}` in {text:?}")]
    UnknownKey { key: String, text: String },
    #[error("unknown subclass index {indices:?} in {text:?}")]
    UnknownSubclass { indices: Vec<String>, text: String },
    #[error("dimension `{0}` has no response format")]
    NoResponseFormat(String),
}

impl ParseError {
    pub fn text(&self) -> &str {
        match self {
            ParseError::NotBinary { text }
            | ParseError::Structure { text }
            | ParseError::MissingKeys { text, .. }
            | ParseError::BadValue { text, .. }
            | ParseError::UnknownKey { text, .. }
            | ParseError::UnknownSubclass { text, .. } => text,
            ParseError::NoResponseFormat(_) => "",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryAnswer {
    Yes,
    No,
}

/// Removes a surrounding markdown code fence, keeping the fenced body.
fn strip_fences(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        let body = match rest.find('\n') {
            Some(nl) => &rest[nl + 1..],
            None => rest,
        };
        return body.trim_end().trim_end_matches("```").trim();
    }
    t.trim_matches('`').trim()
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\'' | '`' | '*' | '\u{201c}' | '\u{201d}' | '\u{2018}' | '\u{2019}')
}

fn clean_token(s: &str) -> &str {
    s.trim()
        .trim_matches(is_quote)
        .trim()
        .trim_end_matches(['.', '!', ',', ';', ':'])
        .trim()
        .trim_matches(is_quote)
        .trim()
}

pub fn parse_binary(text: &str) -> Result<BinaryAnswer, ParseError> {
    let token = clean_token(strip_fences(text));
    if token.eq_ignore_ascii_case("yes") {
        Ok(BinaryAnswer::Yes)
    } else if token.eq_ignore_ascii_case("no") {
        Ok(BinaryAnswer::No)
    } else {
        Err(ParseError::NotBinary { text: text.to_string() })
    }
}

/// Parses a `{Label: yes, Label: no, ...}` map. Every non-sentinel label must
/// appear exactly once; an all-no answer becomes the sentinel.
pub fn parse_labeled_multi(text: &str, dimension: &TaxonomyDimension) -> Result<LabelSet, ParseError> {
    let body = strip_fences(text);
    let structure = || ParseError::Structure { text: text.to_string() };
    let open = body.find('{').ok_or_else(structure)?;
    let close = body.rfind('}').filter(|&c| c > open).ok_or_else(structure)?;
    let inner = &body[open + 1..close];

    let mut answers: BTreeMap<String, bool> = BTreeMap::new();
    for part in inner.split([',', '\n']) {
        if part.trim().is_empty() {
            continue;
        }
        let (key, value) = part.split_once(':').ok_or_else(structure)?;
        let key = clean_token(key);
        let value = clean_token(value);
        let label = dimension
            .resolve_label(key)
            .filter(|l| !l.sentinel)
            .ok_or_else(|| ParseError::UnknownKey {
                key: key.to_string(),
                text: text.to_string(),
            })?;
        let yes = if value.eq_ignore_ascii_case("yes") {
            true
        } else if value.eq_ignore_ascii_case("no") {
            false
        } else {
            return Err(ParseError::BadValue {
                key: key.to_string(),
                value: value.to_string(),
                text: text.to_string(),
            });
        };
        if answers.insert(label.label.clone(), yes).is_some_and(|prev| prev != yes) {
            return Err(structure());
        }
    }

    let missing: Vec<String> = dimension
        .labels
        .iter()
        .filter(|l| !l.sentinel && !answers.contains_key(&l.label))
        .map(|l| l.label.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingKeys {
            keys: missing,
            text: text.to_string(),
        });
    }

    let labels: LabelSet = answers.into_iter().filter(|(_, yes)| *yes).map(|(l, _)| l).collect();
    Ok(if labels.is_empty() { dimension.sentinel_set() } else { labels })
}

/// Parses a `[1.2; 2.1]` subclass list. Commas are accepted as separators,
/// duplicates collapse, and an empty list becomes the sentinel subclass.
pub fn parse_subclass_list(text: &str, dimension: &TaxonomyDimension) -> Result<LabelSet, ParseError> {
    let body = strip_fences(text);
    let inner = body
        .strip_prefix('[')
        .and_then(|b| b.strip_suffix(']'))
        .ok_or_else(|| ParseError::Structure { text: text.to_string() })?;

    let mut labels = LabelSet::new();
    let mut unknown = Vec::new();
    for item in inner.split([';', ',']) {
        let item = clean_token(item);
        if item.is_empty() {
            continue;
        }
        if dimension.labels.iter().any(|l| l.subclass_index.as_deref() == Some(item)) {
            labels.insert(item.to_string());
        } else if !unknown.iter().any(|u| u == item) {
            unknown.push(item.to_string());
        }
    }
    if !unknown.is_empty() {
        return Err(ParseError::UnknownSubclass {
            indices: unknown,
            text: text.to_string(),
        });
    }
    Ok(if labels.is_empty() { dimension.sentinel_set() } else { labels })
}

/// Dispatches on the dimension's answer mode.
pub fn parse_response(text: &str, dimension: &TaxonomyDimension) -> Result<LabelSet, ParseError> {
    match dimension.answer_mode {
        AnswerMode::Binary => {
            let label = match parse_binary(text)? {
                BinaryAnswer::Yes => dimension.positive_label(),
                BinaryAnswer::No => dimension.negative_label(),
            };
            Ok(LabelSet::from([label.to_string()]))
        }
        AnswerMode::LabeledMulti => parse_labeled_multi(text, dimension),
        AnswerMode::SubclassIndexed => parse_subclass_list(text, dimension),
        AnswerMode::TextMapped => Err(ParseError::NoResponseFormat(dimension.dimension_id.clone())),
    }
}
