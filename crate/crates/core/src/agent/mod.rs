//! Multi-agent LLM orchestration.
//!
//! Providers are stateless; every [`Agent`] keeps its own [`Conversation`]
//! and replays it in full on each call. The keyword → aggregate → caption
//! pipeline fans out one keyword agent per image and fans back in to one
//! aggregator and one captioner.

mod engine;
mod ledger;
mod message;
pub mod mock;
mod pipeline;
mod prices;
mod prompts;
mod provider;

use thiserror::Error;

use crate::http::TransportError;

pub use engine::{parse_keywords, Agent, AgentSpec, Caption, KeywordSet, AGGREGATE_SOURCE};
pub use ledger::{ModelTokens, SharedLedger, TokenLedger};
pub use message::{ChatMessage, ContentPart, Conversation, ImageDetail, Role};
pub use pipeline::{select_caption_inputs, CaptionOutcome, CaptionPipeline, PipelineError, StageModels};
pub use prices::{estimate_cost, ImageCapability, ModelPrice, PriceTable};
pub use prompts::{render, PromptTemplates};
pub use provider::{
    decode_completion, encode_request, ChatCompletion, ChatProvider, ChatRequest, Endpoint, HttpChatProvider,
    HttpProviderFactory, ProviderFactory, Sampling, Usage, DEEPSEEK_API_KEY_ENV, DEEPSEEK_BASE_URL_ENV,
    DEFAULT_DEEPSEEK_BASE_URL, DEFAULT_OPENAI_BASE_URL, OPENAI_API_KEY_ENV, OPENAI_BASE_URL_ENV,
};

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("model {0} is not in the price table")]
    UnknownModel(String),
    #[error("model {model} cannot analyze images (image processing: {capability:?})")]
    Capability { model: String, capability: ImageCapability },
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error(transparent)]
    Transport(#[from] TransportError),
    #[error("provider returned HTTP {status}: {excerpt}")]
    Http { status: u16, excerpt: String },
    #[error("cannot parse provider reply ({reason}): {raw}")]
    Parse { reason: String, raw: String },
    #[error("provider error: {0}")]
    Provider(String),
}
