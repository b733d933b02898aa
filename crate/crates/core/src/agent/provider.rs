//! The provider abstraction and the chat-completions HTTP adapter.

use std::collections::BTreeMap;
use std::sync::Arc;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::message::{ChatMessage, ContentPart};
use super::prices::PriceTable;
use super::AgentError;
use crate::http::{HttpRequest, Secret, Transport};
use crate::store::AssetStore;

pub const OPENAI_API_KEY_ENV: &str = "OPENAI_API_KEY";
pub const DEEPSEEK_API_KEY_ENV: &str = "DEEPSEEK_API_KEY";
pub const OPENAI_BASE_URL_ENV: &str = "OPENAI_BASE_URL";
pub const DEEPSEEK_BASE_URL_ENV: &str = "DEEPSEEK_BASE_URL";
pub const DEFAULT_OPENAI_BASE_URL: &str = "https://api.openai.com/v1";
pub const DEFAULT_DEEPSEEK_BASE_URL: &str = "https://api.deepseek.com";

/// Provider-specific request parameters passed through untouched
/// (temperature, max_tokens, seed, ...).
pub type Sampling = BTreeMap<String, Value>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model: String,
    pub messages: Vec<ChatMessage>,
    #[serde(default)]
    pub sampling: Sampling,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Usage {
    /// All input tokens, cached ones included.
    pub prompt_tokens: u64,
    pub cached_prompt_tokens: u64,
    pub completion_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChatCompletion {
    pub content: String,
    pub usage: Usage,
}

/// A stateless chat-completions client. Agents own one each.
pub trait ChatProvider: Send {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError>;
}

/// Builds a fresh provider client for an agent.
pub trait ProviderFactory: Send + Sync {
    fn client_for(&self, agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError>;
}

impl<F> ProviderFactory for F
where
    F: Fn(&str, &str) -> Result<Box<dyn ChatProvider>, AgentError> + Send + Sync,
{
    fn client_for(&self, agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError> {
        self(agent_id, model_id)
    }
}

/// Encodes a request as a chat-completions document. Image parts are
/// resolved to base64 data URLs through `resolve`.
pub fn encode_request(
    request: &ChatRequest,
    mut resolve: impl FnMut(&str) -> Result<(String, Vec<u8>), AgentError>,
) -> Result<Value, AgentError> {
    let mut messages = Vec::with_capacity(request.messages.len());
    for m in &request.messages {
        let has_images = m.images().next().is_some();
        let content = if has_images {
            let mut parts = Vec::with_capacity(m.parts.len());
            for p in &m.parts {
                parts.push(match p {
                    ContentPart::Text { text } => json!({ "type": "text", "text": text }),
                    ContentPart::Image { asset_id, detail } => {
                        let (mime, bytes) = resolve(asset_id)?;
                        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
                        json!({
                            "type": "image_url",
                            "image_url": { "url": format!("data:{mime};base64,{data}"), "detail": detail.as_str() }
                        })
                    }
                });
            }
            Value::Array(parts)
        } else {
            Value::String(m.text())
        };
        messages.push(json!({ "role": m.role.as_str(), "content": content }));
    }
    let mut body = serde_json::Map::new();
    for (k, v) in &request.sampling {
        body.insert(k.clone(), v.clone());
    }
    body.insert("model".into(), Value::String(request.model.clone()));
    body.insert("messages".into(), Value::Array(messages));
    body.insert("stream".into(), Value::Bool(false));
    Ok(Value::Object(body))
}

#[derive(Deserialize)]
struct WireMessage {
    #[serde(default)]
    content: Option<String>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize, Default)]
struct WirePromptDetails {
    #[serde(default)]
    cached_tokens: u64,
}

#[derive(Deserialize, Default)]
struct WireUsage {
    #[serde(default)]
    prompt_tokens: u64,
    #[serde(default)]
    completion_tokens: u64,
    #[serde(default)]
    prompt_tokens_details: Option<WirePromptDetails>,
    /// DeepSeek's name for cached input.
    #[serde(default)]
    prompt_cache_hit_tokens: Option<u64>,
}

#[derive(Deserialize)]
struct WireCompletion {
    choices: Vec<WireChoice>,
    #[serde(default)]
    usage: Option<WireUsage>,
}

pub fn decode_completion(body: &[u8]) -> Result<ChatCompletion, AgentError> {
    let raw = String::from_utf8_lossy(body).into_owned();
    let parsed: WireCompletion = serde_json::from_slice(body).map_err(|e| AgentError::Parse {
        reason: e.to_string(),
        raw: raw.clone(),
    })?;
    let content = parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| AgentError::Parse {
            reason: "completion has no message content".into(),
            raw: raw.clone(),
        })?;
    let usage = parsed.usage.unwrap_or_default();
    let cached = usage
        .prompt_cache_hit_tokens
        .or(usage.prompt_tokens_details.map(|d| d.cached_tokens))
        .unwrap_or(0);
    Ok(ChatCompletion {
        content,
        usage: Usage {
            prompt_tokens: usage.prompt_tokens,
            cached_prompt_tokens: cached,
            completion_tokens: usage.completion_tokens,
        },
    })
}

/// Chat-completions client over HTTP. Works for every provider that speaks
/// the shared document shape; only base URL and bearer token differ.
pub struct HttpChatProvider {
    transport: Arc<dyn Transport>,
    base_url: String,
    api_key: Option<Secret>,
    store: Option<Arc<AssetStore>>,
}

impl HttpChatProvider {
    pub fn new(
        transport: Arc<dyn Transport>,
        base_url: impl Into<String>,
        api_key: Option<Secret>,
        store: Option<Arc<AssetStore>>,
    ) -> Self {
        HttpChatProvider {
            transport,
            base_url: base_url.into(),
            api_key,
            store,
        }
    }
}

impl ChatProvider for HttpChatProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        let body = encode_request(request, |asset_id| {
            let store = self
                .store
                .as_ref()
                .ok_or_else(|| AgentError::Config("image parts need an asset store".into()))?;
            let object = store
                .lookup(asset_id)
                .ok_or_else(|| AgentError::Config(format!("unknown asset {asset_id}")))?;
            let bytes = store.read(asset_id).map_err(|e| AgentError::Config(e.to_string()))?;
            Ok((object.media_type.mime().to_string(), bytes))
        })?;
        let bytes = serde_json::to_vec(&body).expect("json value");
        let http = HttpRequest::post_json(&self.base_url, "/chat/completions", bytes).secret_header(
            "authorization",
            self.api_key.as_ref().map(|k| Secret::new(format!("Bearer {}", k.expose()))),
        );
        let response = self.transport.send(&http)?;
        if !response.is_success() {
            return Err(AgentError::Http {
                status: response.status,
                excerpt: crate::maps::excerpt(&response.body),
            });
        }
        decode_completion(&response.body)
    }
}

#[derive(Debug, Clone)]
pub struct Endpoint {
    pub base_url: String,
    pub api_key: Option<Secret>,
}

/// Routes each model to its provider endpoint (by the price table's
/// `provider` column) and hands out one HTTP client per agent.
pub struct HttpProviderFactory {
    transport: Arc<dyn Transport>,
    prices: Arc<PriceTable>,
    endpoints: BTreeMap<String, Endpoint>,
    store: Option<Arc<AssetStore>>,
}

impl HttpProviderFactory {
    pub fn new(transport: Arc<dyn Transport>, prices: Arc<PriceTable>, store: Option<Arc<AssetStore>>) -> Self {
        HttpProviderFactory {
            transport,
            prices,
            endpoints: BTreeMap::new(),
            store,
        }
    }

    pub fn endpoint(mut self, provider: &str, endpoint: Endpoint) -> Self {
        self.endpoints.insert(provider.to_string(), endpoint);
        self
    }

    /// `openai` and `deepseek` endpoints from the standard environment variables.
    pub fn with_env_endpoints(self) -> Self {
        let env_or = |var: &str, default: &str| std::env::var(var).unwrap_or_else(|_| default.to_string());
        self.endpoint(
            "openai",
            Endpoint {
                base_url: env_or(OPENAI_BASE_URL_ENV, DEFAULT_OPENAI_BASE_URL),
                api_key: Secret::from_env(OPENAI_API_KEY_ENV),
            },
        )
        .endpoint(
            "deepseek",
            Endpoint {
                base_url: env_or(DEEPSEEK_BASE_URL_ENV, DEFAULT_DEEPSEEK_BASE_URL),
                api_key: Secret::from_env(DEEPSEEK_API_KEY_ENV),
            },
        )
    }
}

impl ProviderFactory for HttpProviderFactory {
    fn client_for(&self, _agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError> {
        let provider = &self.prices.get(model_id)?.provider;
        let ep = self
            .endpoints
            .get(provider)
            .ok_or_else(|| AgentError::Config(format!("no endpoint configured for provider {provider}")))?;
        if ep.api_key.is_none() {
            return Err(AgentError::Config(format!("no API key configured for provider {provider}")));
        }
        Ok(Box::new(HttpChatProvider::new(
            self.transport.clone(),
            ep.base_url.clone(),
            ep.api_key.clone(),
            self.store.clone(),
        )))
    }
}
