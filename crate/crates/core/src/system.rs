//! Builds a running system from [`Settings`]: provider, cluster backend,
//! stores, registry, sandbox and engine.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::codegen::{CodegenAgent, CodegenConfig};
use crate::config::Settings;
use crate::engine::{Engine, EngineConfig, EngineError, EngineParts, WorkflowOutcome};
use crate::gateway::QueryGateway;
use crate::governance::{AuditAction, AuditEntry, AuditLog, AuditOptions, RoleTable};
use crate::kube::{fixtures, ClusterBackend, ClusterModel, FakeCluster, RealCluster};
use crate::llm::{
    GatewayConfig, HttpProvider, HttpProviderConfig, LlmGateway, LlmProvider, MockProvider, MockScenario,
};
use crate::memory::{CheckpointStore, FileCheckpointStore, MemoryCheckpointStore};
use crate::registry::{AgentRegistry, ToolStore};
use crate::sandbox::{Sandbox, SandboxPolicy};
use crate::scenario::{self, Scenario, ScenarioLoadError};

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("storage: {0}")]
    Storage(String),
}

fn config_err(e: impl std::fmt::Display) -> SystemError {
    SystemError::Config(e.to_string())
}

fn storage_err(e: impl std::fmt::Display) -> SystemError {
    SystemError::Storage(e.to_string())
}

#[derive(Debug, Deserialize)]
struct TokenDoc {
    tokens: Vec<TokenEntry>,
}

#[derive(Debug, Deserialize)]
struct TokenEntry {
    token: String,
    role: String,
}

/// Bearer token to role name.
#[derive(Debug, Clone, Default)]
pub struct Tokens(BTreeMap<String, String>);

impl Tokens {
    pub fn parse(text: &str, roles: &RoleTable) -> Result<Self, SystemError> {
        let doc: TokenDoc = toml::from_str(text).map_err(config_err)?;
        let mut map = BTreeMap::new();
        for t in doc.tokens {
            roles.get(&t.role).map_err(config_err)?;
            if t.token.trim().is_empty() || map.insert(t.token.clone(), t.role).is_some() {
                return Err(SystemError::Config(format!("empty or duplicate token {:?}", t.token)));
            }
        }
        Ok(Self(map))
    }

    pub fn role_for(&self, token: &str) -> Option<&str> {
        self.0.get(token).map(String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Health {
    /// `ok` or `degraded`.
    pub status: String,
    pub components: BTreeMap<String, bool>,
}

pub struct System {
    pub engine: Arc<Engine>,
    pub settings: Settings,
    pub tokens: Option<Tokens>,
    /// Set when the scripted provider is in use.
    pub mock: Option<Arc<MockProvider>>,
    /// Set when the fake backend is in use.
    pub fake: Option<Arc<FakeCluster>>,
}

impl System {
    pub fn build(settings: Settings) -> Result<Self, SystemError> {
        Self::build_with_provider(settings, None)
    }

    /// Like [`build`](Self::build) with an explicit scripted provider.
    pub fn build_with_mock(settings: Settings, scenario: MockScenario) -> Result<Self, SystemError> {
        Self::build_with_provider(settings, Some(scenario))
    }

    fn build_with_provider(settings: Settings, mock: Option<MockScenario>) -> Result<Self, SystemError> {
        if let Some(dir) = &settings.data_dir {
            std::fs::create_dir_all(dir).map_err(storage_err)?;
        }
        let roles = match &settings.roles_file {
            Some(p) => RoleTable::load(p).map_err(config_err)?,
            None => RoleTable::default(),
        };
        roles.get(&settings.default_role).map_err(config_err)?;
        let tokens = match &settings.tokens_file {
            Some(p) => Some(Tokens::parse(&std::fs::read_to_string(p).map_err(config_err)?, &roles)?),
            None => None,
        };

        let audit = Arc::new(match settings.audit_file() {
            Some(p) => AuditLog::open(&p, AuditOptions::default()).map_err(storage_err)?,
            None => AuditLog::in_memory(),
        });
        let checkpoints: Arc<dyn CheckpointStore> = match settings.checkpoint_file() {
            Some(p) => Arc::new(FileCheckpointStore::open(&p).map_err(storage_err)?),
            None => Arc::new(MemoryCheckpointStore::new()),
        };

        let mock = match mock {
            Some(m) => Some(Arc::new(MockProvider::new(m))),
            None => match &settings.mock_scenario {
                Some(name) => Some(Arc::new(MockProvider::new(load_mock(name)?))),
                None => None,
            },
        };
        let provider: Arc<dyn LlmProvider> = match (&mock, &settings.llm_base_url) {
            (Some(m), _) => m.clone(),
            (None, Some(url)) => Arc::new(
                HttpProvider::new(HttpProviderConfig {
                    base_url: url.clone(),
                    api_key: settings.llm_api_key.clone(),
                    timeout_secs: 60,
                })
                .map_err(config_err)?,
            ),
            (None, None) => {
                return Err(SystemError::Config(
                    "no model provider: set KUBESTEER_MOCK_SCENARIO or KUBESTEER_LLM_BASE_URL".into(),
                ))
            }
        };
        let gateway_config = GatewayConfig {
            default_model: settings.llm_model.clone(),
            ..GatewayConfig::default()
        };
        let observer_audit = audit.clone();
        let llm = Arc::new(LlmGateway::new(provider, gateway_config).with_observer(move |req, res| {
            let outcome = match res {
                Ok(r) if r.from_cache => "cached",
                Ok(_) => "ok",
                Err(_) => "error",
            };
            let payload = json!({
                "purpose": req.purpose,
                "model": req.model_id,
                "error": res.as_ref().err().map(|e| e.to_string()),
            });
            let mut entry = AuditEntry::new(AuditAction::LlmCall, "llm-gateway", req.purpose.as_str(), payload, outcome);
            if let Some(s) = &req.session_id {
                entry = entry.session(s);
            }
            if let Err(e) = observer_audit.append(entry) {
                tracing::warn!("audit append failed: {e}");
            }
        }));

        let (cluster, fake) = build_cluster(&settings)?;

        let mut registry = AgentRegistry::with_defaults();
        if let Some(dir) = settings.tools_dir() {
            registry = registry
                .with_store(ToolStore::open(dir).map_err(storage_err)?)
                .map_err(storage_err)?;
        }

        let policy = SandboxPolicy {
            wall_timeout_ms: settings.sandbox_timeout_ms,
            ..SandboxPolicy::default()
        };
        let sandbox = match Sandbox::new(&settings.python, policy) {
            Ok(s) if s.available() => Some(Arc::new(s)),
            Ok(_) | Err(_) => {
                tracing::warn!("sandbox interpreter {:?} unavailable; generated tools disabled", settings.python);
                None
            }
        };

        let engine = Engine::new(EngineParts {
            llm,
            gateway: QueryGateway::new(roles),
            registry: Arc::new(registry),
            cluster,
            sandbox,
            audit,
            checkpoints,
            codegen: CodegenAgent::new(CodegenConfig {
                artifacts_dir: settings.artifacts_dir(),
                ..CodegenConfig::default()
            }),
            config: EngineConfig {
                loop_cap: settings.loop_cap,
                retry_cap: settings.retry_cap,
                hitl: settings.hitl,
            },
        });
        Ok(Self {
            engine: Arc::new(engine),
            settings,
            tokens,
            mock,
            fake,
        })
    }

    /// A system wired for `scenario`: its fixture, provider script and
    /// approval mode, with storage taken from `settings`.
    pub fn for_scenario(scenario: &Scenario, mut settings: Settings) -> Result<Self, SystemError> {
        settings.backend = format!("fake:{}", scenario.fixture);
        settings.hitl = scenario.hitl;
        Self::build_with_mock(settings, scenario.mock.clone())
    }

    /// Runs the scenario's query as one turn, answering interrupts from the
    /// scenario's answer list.
    pub fn replay(&self, scenario: &Scenario, session_id: &str) -> Result<WorkflowOutcome, EngineError> {
        let answers: Vec<&str> = scenario.answers.iter().map(String::as_str).collect();
        self.engine
            .run_turn_with_answers(session_id, &scenario.query, &scenario.role, &answers)
    }

    pub fn health(&self) -> Health {
        let e = &self.engine;
        let mut components = BTreeMap::new();
        components.insert("llm".to_string(), e.llm().provider_healthy());
        components.insert("checkpoint".to_string(), e.checkpoints().healthy());
        components.insert("registry".to_string(), e.registry().agents().next().is_some());
        components.insert("cluster".to_string(), e.cluster().healthy());
        components.insert("sandbox".to_string(), e.sandbox().is_some());
        let ok = ["llm", "checkpoint", "registry"].iter().all(|k| components[*k]);
        Health {
            status: if ok { "ok" } else { "degraded" }.to_string(),
            components,
        }
    }
}

/// A scenario name or file, or a bare mock document.
fn load_mock(name: &str) -> Result<MockScenario, SystemError> {
    match scenario::load(name) {
        Ok(s) => Ok(s.mock),
        Err(ScenarioLoadError::Invalid { .. }) | Err(ScenarioLoadError::NotFound(_)) if Path::new(name).is_file() => {
            let text = std::fs::read_to_string(name).map_err(config_err)?;
            MockScenario::parse(&text).map_err(config_err)
        }
        Err(e) => Err(config_err(e)),
    }
}

type Backend = (Arc<dyn ClusterBackend>, Option<Arc<FakeCluster>>);

fn build_cluster(settings: &Settings) -> Result<Backend, SystemError> {
    let (kind, arg) = settings
        .backend
        .split_once(':')
        .ok_or_else(|| SystemError::Config(format!("backend {:?} is not kind:arg", settings.backend)))?;
    match kind {
        "fake" => {
            let model = if arg == "seeded" {
                let path = settings
                    .seeded_cluster()
                    .ok_or_else(|| SystemError::Config("fake:seeded needs a data directory".into()))?;
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| SystemError::Config(format!("{}: {e} (run `seed` first)", path.display())))?;
                ClusterModel::from_toml(&text).map_err(config_err)?
            } else {
                fixtures::seed(arg, settings.fixture_dir.as_deref()).map_err(config_err)?
            };
            let fake = Arc::new(FakeCluster::new(arg, model));
            Ok((fake.clone(), Some(fake)))
        }
        "real" => Ok((Arc::new(RealCluster::from_file(Path::new(arg)).map_err(config_err)?), None)),
        other => Err(SystemError::Config(format!("unknown backend kind {other:?}"))),
    }
}
