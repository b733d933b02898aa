//! Deterministic providers for offline runs and tests.

use std::collections::VecDeque;
use std::sync::{Arc, Mutex};

use sha2::{Digest, Sha256};

use super::message::{ImageDetail, Role};
use super::provider::{ChatCompletion, ChatProvider, ChatRequest, ProviderFactory, Usage};
use super::AgentError;

/// Rough token count used only by the mocks: one token per four characters,
/// plus a flat charge per image.
pub fn mock_usage(request: &ChatRequest, reply: &str) -> Usage {
    let mut prompt = 0u64;
    for m in &request.messages {
        prompt += (m.text().chars().count() as u64).div_ceil(4) + 4;
        for (_, detail) in m.images() {
            prompt += match detail {
                ImageDetail::Low => 85,
                ImageDetail::High => 765,
            };
        }
    }
    Usage {
        prompt_tokens: prompt,
        cached_prompt_tokens: 0,
        completion_tokens: (reply.chars().count() as u64).div_ceil(4),
    }
}

fn last_user_text(request: &ChatRequest) -> String {
    request
        .messages
        .iter()
        .rev()
        .find(|m| m.role == Role::User)
        .map(|m| m.text())
        .unwrap_or_default()
}

/// Replies with the text of the last user message.
pub struct EchoProvider;

impl ChatProvider for EchoProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        let content = last_user_text(request);
        Ok(ChatCompletion {
            usage: mock_usage(request, &content),
            content,
        })
    }
}

type ReplyFn = dyn Fn(&ChatRequest) -> Result<ChatCompletion, AgentError> + Send + Sync;

/// Replies from a fixed queue, or from a function of the request.
pub enum ScriptedProvider {
    Queue(Mutex<VecDeque<ChatCompletion>>),
    Func(Arc<ReplyFn>),
}

impl ScriptedProvider {
    pub fn replies<I, S>(replies: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        ScriptedProvider::Queue(Mutex::new(
            replies
                .into_iter()
                .map(|s| ChatCompletion {
                    content: s.into(),
                    usage: Usage::default(),
                })
                .collect(),
        ))
    }

    pub fn completions(replies: impl IntoIterator<Item = ChatCompletion>) -> Self {
        ScriptedProvider::Queue(Mutex::new(replies.into_iter().collect()))
    }

    pub fn from_fn(f: impl Fn(&ChatRequest) -> Result<ChatCompletion, AgentError> + Send + Sync + 'static) -> Self {
        ScriptedProvider::Func(Arc::new(f))
    }
}

impl ChatProvider for ScriptedProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        match self {
            ScriptedProvider::Queue(q) => q
                .lock()
                .expect("script lock")
                .pop_front()
                .ok_or_else(|| AgentError::Provider("scripted provider ran out of replies".into())),
            ScriptedProvider::Func(f) => f(request),
        }
    }
}

const VOCABULARY: &[&str] = &[
    "glass", "steel", "concrete", "brick", "stone", "timber", "facade", "curtain wall", "atrium", "cantilever",
    "flat roof", "pitched roof", "dome", "tower", "spire", "colonnade", "arches", "balconies", "terrace", "courtyard",
    "plaza", "parking lot", "trees", "lawn", "river", "street", "sidewalk", "modern", "gothic", "neoclassical",
    "brutalist", "contemporary", "high-rise", "low-rise", "mid-rise", "rectangular", "angular", "symmetrical",
    "windows", "entrance", "canopy", "rooftop garden", "solar panels", "retail", "office", "residential",
    "institutional", "landmark",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Stage {
    Keywords,
    Aggregate,
    Caption,
    Other,
}

/// Plausible, deterministic stand-in for a vision LLM. The reply depends on
/// the agent id (which the pipeline makes unique per run) and the request.
pub struct SyntheticProvider {
    salt: String,
    stage: Stage,
}

impl SyntheticProvider {
    pub fn for_agent(agent_id: &str) -> Self {
        let lower = agent_id.rsplit('/').next().unwrap_or(agent_id).to_ascii_lowercase();
        let stage = if lower.contains("keyword") {
            Stage::Keywords
        } else if lower.contains("aggregat") {
            Stage::Aggregate
        } else if lower.contains("caption") {
            Stage::Caption
        } else {
            Stage::Other
        };
        SyntheticProvider {
            salt: agent_id.to_string(),
            stage,
        }
    }

    fn words_in(text: &str) -> Vec<&'static str> {
        let lower = text.to_lowercase();
        let mut found: Vec<(usize, &'static str)> = VOCABULARY
            .iter()
            .filter_map(|w| lower.find(w).map(|pos| (pos, *w)))
            .collect();
        found.sort();
        found.into_iter().map(|(_, w)| w).collect()
    }
}

impl ChatProvider for SyntheticProvider {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        let prompt = last_user_text(request);
        let content = match self.stage {
            Stage::Keywords => {
                let mut hasher = Sha256::new();
                hasher.update(self.salt.as_bytes());
                for m in &request.messages {
                    for (asset, _) in m.images() {
                        hasher.update(asset.as_bytes());
                    }
                }
                let digest = hasher.finalize();
                let count = 6 + (digest[0] % 5) as usize;
                let mut picked: Vec<&str> = Vec::new();
                for b in digest.iter().skip(1) {
                    let w = VOCABULARY[*b as usize % VOCABULARY.len()];
                    if !picked.contains(&w) {
                        picked.push(w);
                    }
                    if picked.len() == count {
                        break;
                    }
                }
                picked.join(", ")
            }
            Stage::Aggregate => {
                let words = Self::words_in(&prompt);
                words.into_iter().take(12).collect::<Vec<_>>().join(", ")
            }
            Stage::Caption => {
                let words = Self::words_in(&prompt);
                match words.split_first() {
                    Some((first, rest)) if !rest.is_empty() => format!(
                        "A {first} building featuring {}. The structure is characterized by {}.",
                        rest.iter().take(4).copied().collect::<Vec<_>>().join(", "),
                        rest.iter().skip(4).take(4).copied().collect::<Vec<_>>().join(" and ")
                    ),
                    Some((first, _)) => format!("A {first} building."),
                    None => "A building.".to_string(),
                }
                .replace(" characterized by .", " unremarkable.")
            }
            Stage::Other => prompt,
        };
        Ok(ChatCompletion {
            usage: mock_usage(request, &content),
            content,
        })
    }
}

/// Factory for [`SyntheticProvider`]s.
pub fn synthetic_factory() -> Arc<dyn ProviderFactory> {
    Arc::new(|agent_id: &str, _model: &str| -> Result<Box<dyn ChatProvider>, AgentError> {
        Ok(Box::new(SyntheticProvider::for_agent(agent_id)))
    })
}

pub fn echo_factory() -> Arc<dyn ProviderFactory> {
    Arc::new(|_agent: &str, _model: &str| -> Result<Box<dyn ChatProvider>, AgentError> { Ok(Box::new(EchoProvider)) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoggedRequest {
    pub agent_id: String,
    pub request: ChatRequest,
}

/// Shared log of every outbound request, across all agents.
#[derive(Debug, Clone, Default)]
pub struct RequestLog(Arc<Mutex<Vec<LoggedRequest>>>);

impl RequestLog {
    pub fn entries(&self) -> Vec<LoggedRequest> {
        self.0.lock().expect("log lock").clone()
    }

    pub fn for_agent(&self, agent_id: &str) -> Vec<ChatRequest> {
        self.entries()
            .into_iter()
            .filter(|e| e.agent_id == agent_id)
            .map(|e| e.request)
            .collect()
    }

    pub fn len(&self) -> usize {
        self.0.lock().expect("log lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct Recording {
    agent_id: String,
    inner: Box<dyn ChatProvider>,
    log: RequestLog,
}

impl ChatProvider for Recording {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        self.log.0.lock().expect("log lock").push(LoggedRequest {
            agent_id: self.agent_id.clone(),
            request: request.clone(),
        });
        self.inner.complete(request)
    }
}

/// Wraps a factory so every request its clients send is captured.
pub struct RecordingFactory {
    inner: Arc<dyn ProviderFactory>,
    log: RequestLog,
}

impl RecordingFactory {
    pub fn new(inner: Arc<dyn ProviderFactory>) -> Self {
        RecordingFactory {
            inner,
            log: RequestLog::default(),
        }
    }

    pub fn log(&self) -> RequestLog {
        self.log.clone()
    }
}

impl ProviderFactory for RecordingFactory {
    fn client_for(&self, agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError> {
        Ok(Box::new(Recording {
            agent_id: agent_id.to_string(),
            inner: self.inner.client_for(agent_id, model_id)?,
            log: self.log.clone(),
        }))
    }
}

type FailPredicate = dyn Fn(&str, &ChatRequest) -> bool + Send + Sync;

struct Failing {
    agent_id: String,
    inner: Box<dyn ChatProvider>,
    when: Arc<FailPredicate>,
}

impl ChatProvider for Failing {
    fn complete(&self, request: &ChatRequest) -> Result<ChatCompletion, AgentError> {
        if (self.when)(&self.agent_id, request) {
            return Err(AgentError::Provider(format!("injected failure for {}", self.agent_id)));
        }
        self.inner.complete(request)
    }
}

/// Wraps a factory so that requests matching `when(agent_id, request)` fail.
pub struct FailingFactory {
    inner: Arc<dyn ProviderFactory>,
    when: Arc<FailPredicate>,
}

impl FailingFactory {
    pub fn new(
        inner: Arc<dyn ProviderFactory>,
        when: impl Fn(&str, &ChatRequest) -> bool + Send + Sync + 'static,
    ) -> Self {
        FailingFactory {
            inner,
            when: Arc::new(when),
        }
    }
}

impl ProviderFactory for FailingFactory {
    fn client_for(&self, agent_id: &str, model_id: &str) -> Result<Box<dyn ChatProvider>, AgentError> {
        Ok(Box::new(Failing {
            agent_id: agent_id.to_string(),
            inner: self.inner.client_for(agent_id, model_id)?,
            when: self.when.clone(),
        }))
    }
}
