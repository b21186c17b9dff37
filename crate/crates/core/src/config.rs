//! Process settings, read from flags or `KUBESTEER_*` environment variables.

use std::path::PathBuf;

use clap::{ArgAction, Args, Parser};

#[derive(Debug, Clone, Args)]
pub struct Settings {
    /// Root for checkpoints, audit log, generated tools and codegen artifacts.
    /// Without it everything lives in memory.
    #[arg(long, env = "KUBESTEER_DATA_DIR")]
    pub data_dir: Option<PathBuf>,

    /// Checkpoint log; defaults to `<data-dir>/checkpoints.log`.
    #[arg(long, env = "KUBESTEER_CHECKPOINT_PATH")]
    pub checkpoint_path: Option<PathBuf>,

    /// Audit log; defaults to `<data-dir>/audit.log`.
    #[arg(long, env = "KUBESTEER_AUDIT_PATH")]
    pub audit_path: Option<PathBuf>,

    /// `fake:<fixture>`, `fake:seeded`, or `real:<credentials file>`.
    #[arg(long, env = "KUBESTEER_BACKEND", default_value = "fake:demo")]
    pub backend: String,

    /// Extra fixture documents, looked up before the built-in ones.
    #[arg(long, env = "KUBESTEER_FIXTURE_DIR")]
    pub fixture_dir: Option<PathBuf>,

    /// Chat-completions endpoint, e.g. `https://api.openai.com/v1`.
    #[arg(long, env = "KUBESTEER_LLM_BASE_URL")]
    pub llm_base_url: Option<String>,

    #[arg(long, env = "KUBESTEER_LLM_API_KEY", hide_env_values = true)]
    pub llm_api_key: Option<String>,

    #[arg(long, env = "KUBESTEER_LLM_MODEL", default_value = "gpt-4o")]
    pub llm_model: String,

    /// Scripted provider: a built-in scenario name or a scenario file.
    /// Takes precedence over the HTTP endpoint.
    #[arg(long, env = "KUBESTEER_MOCK_SCENARIO")]
    pub mock_scenario: Option<String>,

    #[arg(long, env = "KUBESTEER_ROLES_FILE")]
    pub roles_file: Option<PathBuf>,

    /// Bearer tokens mapped to roles. Without it requests are unauthenticated
    /// and the role comes from `X-User-Role`.
    #[arg(long, env = "KUBESTEER_TOKENS_FILE")]
    pub tokens_file: Option<PathBuf>,

    #[arg(long, env = "KUBESTEER_DEFAULT_ROLE", default_value = "viewer")]
    pub default_role: String,

    /// Ask for approval before generating tools.
    #[arg(long, env = "KUBESTEER_HITL", default_value_t = true, action = ArgAction::Set)]
    pub hitl: bool,

    #[arg(long, env = "KUBESTEER_PYTHON", default_value = "python3 -I -B")]
    pub python: String,

    #[arg(long, env = "KUBESTEER_SANDBOX_TIMEOUT_MS", default_value_t = 10_000)]
    pub sandbox_timeout_ms: u64,

    #[arg(long, env = "KUBESTEER_LOOP_CAP", default_value_t = 25)]
    pub loop_cap: u32,

    #[arg(long, env = "KUBESTEER_RETRY_CAP", default_value_t = 3)]
    pub retry_cap: u32,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            data_dir: None,
            checkpoint_path: None,
            audit_path: None,
            backend: "fake:demo".into(),
            fixture_dir: None,
            llm_base_url: None,
            llm_api_key: None,
            llm_model: "gpt-4o".into(),
            mock_scenario: None,
            roles_file: None,
            tokens_file: None,
            default_role: "viewer".into(),
            hitl: true,
            python: "python3 -I -B".into(),
            sandbox_timeout_ms: 10_000,
            loop_cap: 25,
            retry_cap: 3,
        }
    }
}

#[derive(Parser)]
struct EnvOnly {
    #[command(flatten)]
    settings: Settings,
}

impl Settings {
    /// Settings from `KUBESTEER_*` variables alone, with defaults elsewhere.
    pub fn from_env() -> Result<Self, clap::Error> {
        EnvOnly::try_parse_from(["kubesteer"]).map(|e| e.settings)
    }

    fn under_data_dir(&self, explicit: &Option<PathBuf>, name: &str) -> Option<PathBuf> {
        explicit.clone().or_else(|| self.data_dir.as_ref().map(|d| d.join(name)))
    }

    pub fn checkpoint_file(&self) -> Option<PathBuf> {
        self.under_data_dir(&self.checkpoint_path, "checkpoints.log")
    }

    pub fn audit_file(&self) -> Option<PathBuf> {
        self.under_data_dir(&self.audit_path, "audit.log")
    }

    pub fn tools_dir(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("tools"))
    }

    pub fn artifacts_dir(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("codegen"))
    }

    /// Where `seed` writes the cluster model picked up by `fake:seeded`.
    pub fn seeded_cluster(&self) -> Option<PathBuf> {
        self.data_dir.as_ref().map(|d| d.join("cluster.toml"))
    }
}
