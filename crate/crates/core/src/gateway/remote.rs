//! OpenAI-compatible `POST {base_url}/chat/completions` client.

use std::time::Duration;

use async_trait::async_trait;
use serde::{Deserialize, Serialize};

use super::{BackendError, BackendKind, ChatBackend, ChatRequest, ChatResponse, GatewayConfig, GatewayError, Message};

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    messages: &'a [Message],
    temperature: f64,
    max_tokens: u32,
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
    #[serde(default)]
    finish_reason: Option<String>,
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
}

pub struct RemoteBackend {
    client: reqwest::Client,
    endpoint: String,
    api_key: String,
}

impl RemoteBackend {
    pub fn new(base_url: &str, api_key: String, timeout: Duration) -> Result<Self, GatewayError> {
        let client = reqwest::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::TransportError(e.to_string()))?;
        Ok(Self {
            client,
            endpoint: format!("{}/chat/completions", base_url.trim_end_matches('/')),
            api_key,
        })
    }

    /// Reads the credential from `config.api_key_env`.
    pub fn from_config(config: &GatewayConfig) -> Result<Self, GatewayError> {
        let key = std::env::var(&config.api_key_env)
            .ok()
            .filter(|k| !k.trim().is_empty())
            .ok_or_else(|| GatewayError::AuthMissing(config.api_key_env.clone()))?;
        Self::new(&config.base_url, key, Duration::from_secs(config.timeout_secs))
    }

    pub fn endpoint(&self) -> &str {
        &self.endpoint
    }
}

fn decode(body: &[u8]) -> Result<ChatResponse, GatewayError> {
    let wire: WireResponse =
        serde_json::from_slice(body).map_err(|e| GatewayError::MalformedResponse(e.to_string()))?;
    let choice = wire
        .choices
        .into_iter()
        .next()
        .ok_or_else(|| GatewayError::MalformedResponse("no choices".into()))?;
    let finish_reason = choice.finish_reason.unwrap_or_else(|| "unknown".into());
    let content = match choice.message.content {
        Some(c) => c,
        None if finish_reason == "stop" => {
            return Err(GatewayError::MalformedResponse("stop without content".into()))
        }
        None => String::new(),
    };
    let usage = wire.usage.unwrap_or_default();
    Ok(ChatResponse {
        content,
        finish_reason,
        prompt_tokens: usage.prompt_tokens,
        completion_tokens: usage.completion_tokens,
        backend: BackendKind::Remote,
        cached: false,
    })
}

#[async_trait]
impl ChatBackend for RemoteBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Remote
    }

    async fn send(&self, request: &ChatRequest) -> Result<ChatResponse, BackendError> {
        let body = WireRequest {
            model: &request.model,
            messages: &request.messages,
            temperature: request.temperature,
            max_tokens: request.max_tokens,
        };
        let resp = self
            .client
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&body)
            .send()
            .await
            .map_err(|e| BackendError::Transient(e.to_string()))?;
        let status = resp.status();
        let bytes = resp.bytes().await.map_err(|e| BackendError::Transient(e.to_string()))?;
        if status.as_u16() == 429 {
            return Err(BackendError::RateLimited);
        }
        if status.is_server_error() {
            return Err(BackendError::Transient(format!("HTTP {status}")));
        }
        if !status.is_success() {
            let snippet = String::from_utf8_lossy(&bytes[..bytes.len().min(200)]).into_owned();
            return Err(BackendError::Fatal(GatewayError::TransportError(format!(
                "HTTP {status}: {snippet}"
            ))));
        }
        decode(&bytes).map_err(BackendError::Fatal)
    }
}
