//! OpenAI-compatible chat-completions provider.

use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{ChatMessage, LlmProvider, LlmRequest, ProviderError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HttpProviderConfig {
    /// Base URL up to and including the version prefix, e.g. `https://api.openai.com/v1`.
    pub base_url: String,
    #[serde(default)]
    pub api_key: Option<String>,
    #[serde(default = "default_timeout_secs")]
    pub timeout_secs: u64,
}

fn default_timeout_secs() -> u64 {
    60
}

pub struct HttpProvider {
    config: HttpProviderConfig,
    client: reqwest::blocking::Client,
}

impl std::fmt::Debug for HttpProvider {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("HttpProvider")
            .field("base_url", &self.config.base_url)
            .finish_non_exhaustive()
    }
}

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [ChatMessage],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

impl HttpProvider {
    pub fn new(config: HttpProviderConfig) -> Result<Self, ProviderError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(config.timeout_secs))
            .build()
            .map_err(|e| ProviderError::Fatal(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn url(&self, path: &str) -> String {
        format!("{}/{}", self.config.base_url.trim_end_matches('/'), path)
    }

    fn authorized(&self, builder: reqwest::blocking::RequestBuilder) -> reqwest::blocking::RequestBuilder {
        match &self.config.api_key {
            Some(key) => builder.bearer_auth(key),
            None => builder,
        }
    }
}

impl LlmProvider for HttpProvider {
    fn id(&self) -> &str {
        "http"
    }

    fn invoke(&self, request: &LlmRequest) -> Result<String, ProviderError> {
        let body = WireRequest {
            model: &request.model_id,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let response = self
            .authorized(self.client.post(self.url("chat/completions")))
            .json(&body)
            .send()
            .map_err(|e| ProviderError::Transient(e.to_string()))?;
        let status = response.status();
        if status.as_u16() == 429 {
            return Err(ProviderError::RateLimited(status.to_string()));
        }
        if status.is_server_error() {
            return Err(ProviderError::Transient(status.to_string()));
        }
        if !status.is_success() {
            let text = response.text().unwrap_or_default();
            return Err(ProviderError::Fatal(format!("{status}: {text}")));
        }
        let wire: WireResponse = response
            .json()
            .map_err(|e| ProviderError::Fatal(format!("undecodable response: {e}")))?;
        Ok(wire
            .choices
            .into_iter()
            .next()
            .and_then(|c| c.message.content)
            .unwrap_or_default())
    }

    fn healthy(&self) -> bool {
        self.authorized(self.client.get(self.url("models")).timeout(Duration::from_secs(3)))
            .send()
            .map(|r| !r.status().is_server_error())
            .unwrap_or(false)
    }
}
