//! Delimited directive blocks exchanged with the language model.
//!
//! A directive is a block of `key: value` lines wrapped in a tag:
//!
//! ```text
//! <directive>
//! action: route_agent
//! target_agent: Logs
//! message: fetch logs of every pod
//! </directive>
//! ```
//!
//! Prose outside the block is ignored. Inside the block every non-blank line
//! must be a `key: value` pair and keys may not repeat.

use std::collections::BTreeMap;

use thiserror::Error;

pub const DIRECTIVE_TAG: &str = "directive";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum DirectiveError {
    #[error("no <{0}> block found")]
    Missing(String),
    #[error("expected exactly one <{tag}> block, found {count}")]
    Multiple { tag: String, count: usize },
    #[error("unterminated <{0}> block")]
    Unterminated(String),
    #[error("line {line}: expected `key: value`, got {text:?}")]
    BadLine { line: usize, text: String },
    #[error("duplicate key `{0}`")]
    DuplicateKey(String),
    #[error("unknown key `{0}`")]
    UnknownKey(String),
    #[error("missing required key `{0}`")]
    MissingKey(String),
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

/// Returns the raw bodies of every `<tag>...</tag>` block, in order.
pub fn blocks<'a>(text: &'a str, tag: &str) -> Result<Vec<&'a str>, DirectiveError> {
    let open = format!("<{tag}>");
    let close = format!("</{tag}>");
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(&open) {
        let body_start = start + open.len();
        let Some(end) = rest[body_start..].find(&close) else {
            return Err(DirectiveError::Unterminated(tag.to_string()));
        };
        out.push(&rest[body_start..body_start + end]);
        rest = &rest[body_start + end + close.len()..];
    }
    Ok(out)
}

/// Parsed key/value directive.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Directive {
    fields: BTreeMap<String, String>,
}

impl Directive {
    pub fn parse_body(body: &str) -> Result<Self, DirectiveError> {
        let mut fields = BTreeMap::new();
        for (idx, raw) in body.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() {
                continue;
            }
            let bad = || DirectiveError::BadLine {
                line: idx + 1,
                text: line.to_string(),
            };
            let (key, value) = line.split_once(':').ok_or_else(bad)?;
            let key = key.trim();
            let key_ok = !key.is_empty()
                && key
                    .chars()
                    .all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '.' || c == '-');
            if !key_ok {
                return Err(bad());
            }
            let key = key.to_ascii_lowercase();
            if fields.contains_key(&key) {
                return Err(DirectiveError::DuplicateKey(key));
            }
            fields.insert(key, value.trim().to_string());
        }
        Ok(Self { fields })
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.fields
            .get(key)
            .map(String::as_str)
            .filter(|v| !v.is_empty())
    }

    pub fn require(&self, key: &str) -> Result<&str, DirectiveError> {
        self.get(key)
            .ok_or_else(|| DirectiveError::MissingKey(key.to_string()))
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.fields.keys().map(String::as_str)
    }

    pub fn fields(&self) -> &BTreeMap<String, String> {
        &self.fields
    }

    /// Rejects any key that is not in `allowed` (or does not start with one of
    /// the `prefixes`).
    pub fn expect_keys(&self, allowed: &[&str], prefixes: &[&str]) -> Result<(), DirectiveError> {
        for key in self.keys() {
            let ok = allowed.contains(&key) || prefixes.iter().any(|p| key.starts_with(p));
            if !ok {
                return Err(DirectiveError::UnknownKey(key.to_string()));
            }
        }
        Ok(())
    }
}

/// Parses the single `<directive>` block in `text`.
pub fn parse_single(text: &str) -> Result<Directive, DirectiveError> {
    let found = blocks(text, DIRECTIVE_TAG)?;
    match found.len() {
        0 => Err(DirectiveError::Missing(DIRECTIVE_TAG.to_string())),
        1 => Directive::parse_body(found[0]),
        n => Err(DirectiveError::Multiple {
            tag: DIRECTIVE_TAG.to_string(),
            count: n,
        }),
    }
}

/// Parses every `<directive>` block; at least one is required.
pub fn parse_all(text: &str) -> Result<Vec<Directive>, DirectiveError> {
    let found = blocks(text, DIRECTIVE_TAG)?;
    if found.is_empty() {
        return Err(DirectiveError::Missing(DIRECTIVE_TAG.to_string()));
    }
    found.into_iter().map(Directive::parse_body).collect()
}

/// Splits a comma-separated list value, dropping empty items.
pub fn split_list(value: &str) -> Vec<String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(str::to_string)
        .collect()
}
