//! Deterministic scripted provider.
//!
//! A scenario document lists entries; each entry has a matcher and a canned
//! response. A matcher is one or more substrings (all must occur in the
//! rendered prompt) and/or a sequence index (the zero-based number of the
//! call on this provider). The first matching entry answers. In strict mode
//! exactly one entry must match.
//!
//! ```toml
//! strict = false
//!
//! [[entries]]
//! match = ["[purpose:route]", "[agent:Configs]"]
//! response = "<directive>\naction: finish\n</directive>"
//!
//! [[entries]]
//! index = 0
//! response = "first call only"
//! ```

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{LlmProvider, LlmRequest, ProviderError};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ScenarioError {
    #[error("scenario parse error: {0}")]
    Parse(String),
    #[error("scenario has no entries")]
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
enum MatchSpec {
    One(String),
    All(Vec<String>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawEntry {
    #[serde(default, rename = "match")]
    matcher: Option<MatchSpec>,
    #[serde(default)]
    index: Option<u64>,
    response: String,
}

#[derive(Debug, Clone, Deserialize)]
struct RawScenario {
    #[serde(default)]
    strict: bool,
    #[serde(default)]
    entries: Vec<RawEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MockEntry {
    pub substrings: Vec<String>,
    pub index: Option<u64>,
    pub response: String,
}

impl MockEntry {
    pub fn new(substring: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            substrings: vec![substring.into()],
            index: None,
            response: response.into(),
        }
    }

    pub fn all(substrings: &[&str], response: impl Into<String>) -> Self {
        Self {
            substrings: substrings.iter().map(|s| s.to_string()).collect(),
            index: None,
            response: response.into(),
        }
    }

    pub fn matches(&self, prompt: &str, call_index: u64) -> bool {
        self.index.is_none_or(|i| i == call_index)
            && self.substrings.iter().all(|s| prompt.contains(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MockScenario {
    pub entries: Vec<MockEntry>,
    pub strict: bool,
}

impl MockScenario {
    pub fn new(entries: Vec<MockEntry>, strict: bool) -> Result<Self, ScenarioError> {
        if entries.is_empty() {
            return Err(ScenarioError::Empty);
        }
        let mut seen = BTreeSet::new();
        for e in &entries {
            if let Some(i) = e.index {
                if !seen.insert(i) {
                    return Err(ScenarioError::Parse(format!("duplicate sequence index {i}")));
                }
            }
        }
        Ok(Self { entries, strict })
    }

    /// Parses a TOML scenario document, or JSON when the text starts with `{`.
    pub fn parse(source: &str) -> Result<Self, ScenarioError> {
        let raw: RawScenario = if source.trim_start().starts_with('{') {
            serde_json::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?
        } else {
            toml::from_str(source).map_err(|e| ScenarioError::Parse(e.to_string()))?
        };
        let mut entries = Vec::with_capacity(raw.entries.len());
        for (n, e) in raw.entries.into_iter().enumerate() {
            let substrings = match e.matcher {
                Some(MatchSpec::One(s)) => vec![s],
                Some(MatchSpec::All(v)) => v,
                None => Vec::new(),
            };
            if substrings.is_empty() && e.index.is_none() {
                return Err(ScenarioError::Parse(format!(
                    "entry {n} has neither `match` nor `index`"
                )));
            }
            entries.push(MockEntry {
                substrings,
                index: e.index,
                response: e.response,
            });
        }
        Self::new(entries, raw.strict)
    }

    /// Response for a prompt, or why none applies.
    pub fn respond(&self, prompt: &str, call_index: u64) -> Result<&str, ProviderError> {
        let mut hits = self.entries.iter().filter(|e| e.matches(prompt, call_index));
        let first = hits.next();
        match first {
            None => Err(ProviderError::Unmatched(summarize_prompt(prompt))),
            Some(entry) => {
                if self.strict && hits.next().is_some() {
                    return Err(ProviderError::Unmatched(format!(
                        "ambiguous in strict mode: {}",
                        summarize_prompt(prompt)
                    )));
                }
                Ok(&entry.response)
            }
        }
    }
}

fn summarize_prompt(prompt: &str) -> String {
    let one_line: String = prompt.chars().map(|c| if c == '\n' { ' ' } else { c }).collect();
    one_line.chars().take(160).collect()
}

/// In-process provider replaying a [`MockScenario`].
#[derive(Debug)]
pub struct MockProvider {
    scenario: RwLock<Arc<MockScenario>>,
    cursor: AtomicU64,
    prompts: Mutex<Vec<String>>,
}

impl MockProvider {
    pub fn new(scenario: MockScenario) -> Self {
        Self {
            scenario: RwLock::new(Arc::new(scenario)),
            cursor: AtomicU64::new(0),
            prompts: Mutex::new(Vec::new()),
        }
    }

    /// Parses and installs a scenario, resetting the sequence cursor.
    pub fn load_scenario(&self, source: &str) -> Result<Arc<MockScenario>, ScenarioError> {
        let scenario = Arc::new(MockScenario::parse(source)?);
        *self.scenario.write() = scenario.clone();
        self.cursor.store(0, Ordering::SeqCst);
        self.prompts.lock().clear();
        Ok(scenario)
    }

    pub fn install(&self, scenario: MockScenario) {
        *self.scenario.write() = Arc::new(scenario);
        self.cursor.store(0, Ordering::SeqCst);
        self.prompts.lock().clear();
    }

    pub fn scenario(&self) -> Arc<MockScenario> {
        self.scenario.read().clone()
    }

    /// Number of provider invocations so far.
    pub fn calls(&self) -> u64 {
        self.cursor.load(Ordering::SeqCst)
    }

    /// Rendered prompts seen so far, in call order.
    pub fn prompts(&self) -> Vec<String> {
        self.prompts.lock().clone()
    }
}

impl LlmProvider for MockProvider {
    fn id(&self) -> &str {
        "mock"
    }

    fn invoke(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let prompt = request.render();
        let scenario = self.scenario.read().clone();
        let call_index = {
            let mut log = self.prompts.lock();
            let idx = self.cursor.fetch_add(1, Ordering::SeqCst);
            log.push(prompt.clone());
            idx
        };
        scenario.respond(&prompt, call_index).map(str::to_string)
    }
}
