//! Query validation: pre-filter, LLM classification, then the role gate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::directive::{self, Directive};
use crate::governance::{GovernanceError, RoleTable};
use crate::kube::VerbCategory;
use crate::llm::{ChatMessage, LlmError, LlmGateway, Purpose};
use crate::registry::DIRECTIVE_RETRIES;

pub const REASON_PERMISSION: &str = "permission";
pub const REASON_UNSUPPORTED: &str = "unsupported";

const MAX_NONPRINTABLE_RATIO: f64 = 0.30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryStatus {
    Accepted,
    Rejected,
    NeedsClarification,
}

/// Dominant verb category, tagged composite for multi-step requests.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Intent {
    pub category: VerbCategory,
    pub composite: bool,
    /// Every category the request touches, dominant one included.
    pub categories: Vec<VerbCategory>,
}

impl fmt::Display for Intent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.composite {
            write!(f, "Composite({})", self.category)
        } else {
            write!(f, "{}", self.category)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Namespaces {
    All,
    List(Vec<String>),
}

impl Default for Namespaces {
    fn default() -> Self {
        Self::All
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scope {
    pub namespaces: Namespaces,
    pub resource_kinds: Vec<String>,
    pub name_selectors: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StructuredQuery {
    pub raw_text: String,
    pub intent: Option<Intent>,
    pub scope: Scope,
    pub hints: BTreeMap<String, String>,
    pub role: String,
    pub status: QueryStatus,
    pub rejection_reason: Option<String>,
    pub clarification_prompt: Option<String>,
}

impl StructuredQuery {
    fn rejected(raw: &str, role: &str, reason: &str) -> Self {
        Self {
            raw_text: raw.to_string(),
            intent: None,
            scope: Scope::default(),
            hints: BTreeMap::new(),
            role: role.to_string(),
            status: QueryStatus::Rejected,
            rejection_reason: Some(reason.to_string()),
            clarification_prompt: None,
        }
    }
}

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("query is empty")]
    EmptyQuery,
    #[error("role {0:?} is not configured")]
    PolicyConfigMissing(String),
    #[error("llm failure: {0}")]
    Llm(#[from] LlmError),
    #[error("unusable classification directive: {0}")]
    Directive(String),
}

/// Cheap rejection before any model call: fewer than two tokens, or mostly
/// non-printable characters.
pub fn prefilter(raw: &str) -> bool {
    if raw.split_whitespace().count() < 2 {
        return false;
    }
    let total = raw.chars().count();
    let bad = raw
        .chars()
        .filter(|c| c.is_control() && !c.is_whitespace() || *c == '\u{fffd}')
        .count();
    (bad as f64) / (total as f64) <= MAX_NONPRINTABLE_RATIO
}

const SYSTEM_PROMPT: &str = "You classify requests sent to a Kubernetes operations assistant.
Verb categories: Read, Write/Modify, Delete, Execute/Proxy, Permission & Auth, Scale/Lifecycle, Custom/Advanced.
Reject greetings, gibberish and anything outside Kubernetes operations (reason: unsupported).
Ask for clarification only when an in-domain request cannot be acted on as stated.
Reply with exactly one block:
<directive>
status: accepted | rejected | needs_clarification
intent: <category> or Composite(<dominant category>)
categories: <every category involved, comma-separated>
namespaces: ALL or comma-separated names
kinds: comma-separated resource kinds
names: comma-separated object names
reason: <why, when rejected>
clarification: <question, when clarification is needed>
</directive>";

const KEYS: &[&str] = &[
    "status",
    "intent",
    "categories",
    "namespaces",
    "kinds",
    "names",
    "reason",
    "clarification",
];

fn parse_intent(text: &str) -> Result<(VerbCategory, bool), String> {
    let t = text.trim();
    let (inner, composite) = match t.get(..9) {
        Some(head) if head.eq_ignore_ascii_case("composite") => {
            let rest = t[9..].trim();
            let inner = rest
                .strip_prefix('(')
                .and_then(|r| r.strip_suffix(')'))
                .or_else(|| rest.strip_prefix(':'))
                .ok_or_else(|| format!("malformed composite intent {t:?}"))?;
            (inner, true)
        }
        _ => (t, false),
    };
    let cat = inner.trim().parse::<VerbCategory>().map_err(|e| e.to_string())?;
    Ok((cat, composite))
}

fn interpret(raw: &str, role: &str, d: &Directive) -> Result<StructuredQuery, String> {
    d.expect_keys(KEYS, &["hint."]).map_err(|e| e.to_string())?;
    let status = match d.require("status").map_err(|e| e.to_string())? {
        "accepted" => QueryStatus::Accepted,
        "rejected" => QueryStatus::Rejected,
        "needs_clarification" => QueryStatus::NeedsClarification,
        other => return Err(format!("unknown status {other:?}")),
    };
    let intent = match d.get("intent") {
        Some(text) => {
            let (category, composite) = parse_intent(text)?;
            let mut categories = vec![category];
            for c in d.get("categories").map(directive::split_list).unwrap_or_default() {
                let c = c.parse::<VerbCategory>().map_err(|e| e.to_string())?;
                if !categories.contains(&c) {
                    categories.push(c);
                }
            }
            Some(Intent {
                category,
                composite,
                categories,
            })
        }
        None if status == QueryStatus::Accepted => return Err("accepted query needs an intent".into()),
        None => None,
    };
    let namespaces = match d.get("namespaces") {
        None => Namespaces::All,
        Some(v) if v.eq_ignore_ascii_case("all") || v == "*" => Namespaces::All,
        Some(v) => Namespaces::List(directive::split_list(v)),
    };
    let hints = d
        .fields()
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("hint.").map(|k| (k.to_string(), v.clone())))
        .collect();
    let mut q = StructuredQuery {
        raw_text: raw.to_string(),
        intent,
        scope: Scope {
            namespaces,
            resource_kinds: d.get("kinds").map(directive::split_list).unwrap_or_default(),
            name_selectors: d.get("names").map(directive::split_list).unwrap_or_default(),
        },
        hints,
        role: role.to_string(),
        status,
        rejection_reason: None,
        clarification_prompt: None,
    };
    match status {
        QueryStatus::Accepted => {}
        QueryStatus::Rejected => {
            q.rejection_reason = Some(d.get("reason").unwrap_or(REASON_UNSUPPORTED).to_string());
        }
        QueryStatus::NeedsClarification => {
            q.clarification_prompt = Some(
                d.require("clarification")
                    .map_err(|e| e.to_string())?
                    .to_string(),
            );
        }
    }
    Ok(q)
}

/// Downgrades an accepted query whose categories the role does not hold.
pub fn apply_policy(mut q: StructuredQuery, roles: &RoleTable) -> Result<StructuredQuery, GatewayError> {
    let role = roles
        .get(&q.role)
        .map_err(|_| GatewayError::PolicyConfigMissing(q.role.clone()))?;
    if q.status != QueryStatus::Accepted {
        return Ok(q);
    }
    let denied = q
        .intent
        .as_ref()
        .is_some_and(|i| i.categories.iter().any(|c| !role.allows(*c)));
    if denied {
        q.status = QueryStatus::Rejected;
        q.rejection_reason = Some(REASON_PERMISSION.to_string());
    }
    Ok(q)
}

#[derive(Debug, Clone)]
pub struct QueryGateway {
    roles: RoleTable,
}

impl QueryGateway {
    pub fn new(roles: RoleTable) -> Self {
        Self { roles }
    }

    pub fn roles(&self) -> &RoleTable {
        &self.roles
    }

    pub fn validate_query(
        &self,
        llm: &LlmGateway,
        raw: &str,
        role: &str,
        session_id: Option<&str>,
    ) -> Result<StructuredQuery, GatewayError> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(GatewayError::EmptyQuery);
        }
        self.roles.get(role).map_err(|e| match e {
            GovernanceError::UnknownRole(r) => GatewayError::PolicyConfigMissing(r),
            other => GatewayError::PolicyConfigMissing(other.to_string()),
        })?;
        if !prefilter(raw) {
            return Ok(StructuredQuery::rejected(raw, role, REASON_UNSUPPORTED));
        }
        let mut feedback = String::new();
        let mut last = String::new();
        for _ in 0..=DIRECTIVE_RETRIES {
            let user = format!("Request: {raw}{feedback}");
            let req = llm
                .request(Purpose::Validate, vec![ChatMessage::system(SYSTEM_PROMPT), ChatMessage::user(user)])
                .with_session(session_id);
            let content = llm.complete(&req)?.content;
            match directive::parse_single(&content)
                .map_err(|e| e.to_string())
                .and_then(|d| interpret(raw, role, &d))
            {
                Ok(q) => return apply_policy(q, &self.roles),
                Err(e) => {
                    feedback = format!("\nYour previous reply was rejected: {e}");
                    last = e;
                }
            }
        }
        Err(GatewayError::Directive(last))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefilter_rules() {
        assert!(!prefilter("hello"));
        assert!(!prefilter("   "));
        assert!(prefilter("list pods"));
        assert!(!prefilter("a \u{1}\u{2}\u{3}\u{4}\u{5}"));
        assert!(prefilter("list all pods in demo \u{1}"));
    }

    #[test]
    fn intent_forms() {
        assert_eq!(parse_intent("Read").unwrap(), (VerbCategory::Read, false));
        assert_eq!(parse_intent("Composite(Read)").unwrap(), (VerbCategory::Read, true));
        assert_eq!(parse_intent("composite: Delete").unwrap(), (VerbCategory::Delete, true));
        assert_eq!(
            parse_intent("Composite(Write / Modify)").unwrap(),
            (VerbCategory::WriteModify, true)
        );
        assert!(parse_intent("Composite[Read").is_err());
        assert!(parse_intent("Teleport").is_err());
    }

    #[test]
    fn policy_only_downgrades() {
        let roles = RoleTable::default();
        let d = directive::parse_single(
            "<directive>\nstatus: accepted\nintent: Write/Modify\nkinds: secret\nnamespaces: demo\n</directive>",
        )
        .unwrap();
        let q = interpret("create a secret in ns demo", "viewer", &d).unwrap();
        let q = apply_policy(q, &roles).unwrap();
        assert_eq!(q.status, QueryStatus::Rejected);
        assert_eq!(q.rejection_reason.as_deref(), Some(REASON_PERMISSION));

        let d = directive::parse_single("<directive>\nstatus: rejected\nreason: unsupported\n</directive>").unwrap();
        let q = apply_policy(interpret("tell me a joke please", "admin", &d).unwrap(), &roles).unwrap();
        assert_eq!(q.rejection_reason.as_deref(), Some(REASON_UNSUPPORTED));
    }
}
