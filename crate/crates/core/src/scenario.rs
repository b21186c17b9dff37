//! Replay scenarios: a query, the cluster fixture it runs against, and the
//! scripted model responses that drive it.
//!
//! A scenario may name a `base` scenario whose entries are appended after
//! its own, so an overlay only lists the responses it changes.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::llm::{MockEntry, MockScenario, ScenarioError};

const BUILTIN: &[(&str, &str)] = &[
    ("pod-health", include_str!("../scenarios/pod-health.toml")),
    ("codegen-good", include_str!("../scenarios/codegen-good.toml")),
    ("codegen-retry", include_str!("../scenarios/codegen-retry.toml")),
    ("codegen-exhausted", include_str!("../scenarios/codegen-exhausted.toml")),
    ("codegen-approval", include_str!("../scenarios/codegen-approval.toml")),
];

const MAX_BASE_DEPTH: usize = 8;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioLoadError {
    #[error("scenario {0:?} not found")]
    NotFound(String),
    #[error("scenario {name}: {message}")]
    Invalid { name: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expectation {
    /// `response`, `interrupt`, `rejection` or `failure`.
    #[serde(default)]
    pub kind: Option<String>,
    #[serde(default)]
    pub contains: Vec<String>,
}

#[derive(Debug, Deserialize)]
struct Doc {
    #[serde(default)]
    base: Option<String>,
    #[serde(default = "default_fixture")]
    fixture: String,
    #[serde(default = "default_role")]
    role: String,
    query: Option<String>,
    #[serde(default)]
    hitl: bool,
    #[serde(default)]
    answers: Vec<String>,
    #[serde(default)]
    expect: Expectation,
}

fn default_fixture() -> String {
    "demo".into()
}

fn default_role() -> String {
    "admin".into()
}

#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub fixture: String,
    pub role: String,
    pub query: String,
    pub hitl: bool,
    /// Interrupt answers, consumed in order.
    pub answers: Vec<String>,
    pub expect: Expectation,
    pub mock: MockScenario,
}

pub fn builtin_names() -> impl Iterator<Item = &'static str> {
    BUILTIN.iter().map(|(n, _)| *n)
}

pub fn builtin(name: &str) -> Option<&'static str> {
    BUILTIN.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

/// Loads a built-in scenario by name, or a file by path. A file's `base`
/// resolves against its own directory first, then the built-ins.
pub fn load(name_or_path: &str) -> Result<Scenario, ScenarioLoadError> {
    let path = Path::new(name_or_path);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(name_or_path, e))?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or(name_or_path);
        return parse(stem, &text, path.parent());
    }
    let text = builtin(name_or_path).ok_or_else(|| ScenarioLoadError::NotFound(name_or_path.into()))?;
    parse(name_or_path, text, None)
}

pub fn parse(name: &str, text: &str, dir: Option<&Path>) -> Result<Scenario, ScenarioLoadError> {
    let doc: Doc = toml::from_str(text).map_err(|e| invalid(name, e))?;
    let query = doc
        .query
        .clone()
        .filter(|q| !q.trim().is_empty())
        .ok_or_else(|| invalid(name, "missing query"))?;
    let (mut entries, mut strict) = entries_of(name, text)?;
    let mut base = doc.base.clone();
    let mut depth = 0;
    while let Some(b) = base {
        depth += 1;
        if depth > MAX_BASE_DEPTH {
            return Err(invalid(name, "base chain too deep"));
        }
        let text = resolve_base(&b, dir)?;
        let parent: Doc = toml::from_str(&text).map_err(|e| invalid(&b, e))?;
        let (more, s) = entries_of(&b, &text)?;
        strict |= s;
        entries.extend(more);
        base = parent.base;
    }
    let mock = MockScenario::new(entries, strict).map_err(|e| invalid(name, e))?;
    Ok(Scenario {
        name: name.to_string(),
        fixture: doc.fixture,
        role: doc.role,
        query,
        hitl: doc.hitl,
        answers: doc.answers,
        expect: doc.expect,
        mock,
    })
}

fn entries_of(name: &str, text: &str) -> Result<(Vec<MockEntry>, bool), ScenarioLoadError> {
    match MockScenario::parse(text) {
        Ok(m) => Ok((m.entries, m.strict)),
        Err(ScenarioError::Empty) => Ok((Vec::new(), false)),
        Err(e) => Err(invalid(name, e)),
    }
}

fn resolve_base(name: &str, dir: Option<&Path>) -> Result<String, ScenarioLoadError> {
    if let Some(dir) = dir {
        let p = dir.join(format!("{name}.toml"));
        if p.is_file() {
            return std::fs::read_to_string(&p).map_err(|e| invalid(name, e));
        }
    }
    builtin(name)
        .map(str::to_string)
        .ok_or_else(|| ScenarioLoadError::NotFound(name.to_string()))
}

fn invalid(name: &str, e: impl std::fmt::Display) -> ScenarioLoadError {
    ScenarioLoadError::Invalid {
        name: name.to_string(),
        message: e.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_parse() {
        for name in builtin_names() {
            let s = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert!(!s.mock.entries.is_empty());
        }
    }

    #[test]
    fn overlays_come_first() {
        let s = load("codegen-exhausted").unwrap();
        let first = &s.mock.entries[0];
        assert!(first.substrings.iter().any(|m| m == "Attempt: 3"));
        let good = load("codegen-good").unwrap();
        assert_eq!(s.mock.entries.len(), good.mock.entries.len() + 3);
        assert!(load("codegen-approval").unwrap().hitl);
        assert!(matches!(load("nope"), Err(ScenarioLoadError::NotFound(_))));
    }
}
