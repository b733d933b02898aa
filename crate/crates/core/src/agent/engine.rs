use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ledger::SharedLedger;
use super::message::{ChatMessage, Conversation, ImageDetail, Role};
use super::prices::{ImageCapability, PriceTable};
use super::prompts::{render, PromptTemplates};
use super::provider::{ChatProvider, ChatRequest, ProviderFactory, Sampling};
use super::AgentError;
use crate::store::ImageAsset;

/// `source_asset` of a keyword set produced by aggregation.
pub const AGGREGATE_SOURCE: &str = "aggregate";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub agent_id: String,
    pub model_id: String,
    pub system_prompt: String,
    #[serde(default)]
    pub sampling: Sampling,
    #[serde(default)]
    pub image_detail: ImageDetail,
}

impl AgentSpec {
    pub fn new(agent_id: impl Into<String>, model_id: impl Into<String>, system_prompt: impl Into<String>) -> Self {
        AgentSpec {
            agent_id: agent_id.into(),
            model_id: model_id.into(),
            system_prompt: system_prompt.into(),
            sampling: Sampling::new(),
            image_detail: ImageDetail::High,
        }
    }
}

/// Lowercase, deduplicated, non-empty keywords in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordSet {
    pub source_asset: String,
    pub keywords: Vec<String>,
}

impl KeywordSet {
    pub fn new<I, S>(source_asset: impl Into<String>, keywords: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut out: Vec<String> = Vec::new();
        for k in keywords {
            let k = normalize_keyword(k.as_ref());
            if !k.is_empty() && !out.contains(&k) {
                out.push(k);
            }
        }
        KeywordSet {
            source_asset: source_asset.into(),
            keywords: out,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.keywords.is_empty()
    }

    pub fn len(&self) -> usize {
        self.keywords.len()
    }

    pub fn joined(&self) -> String {
        self.keywords.join(", ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Caption {
    pub text: String,
    pub contributing_keywords: KeywordSet,
    pub model_id: String,
    pub iteration: u32,
}

fn normalize_keyword(raw: &str) -> String {
    let t = raw.trim();
    let t = t.trim_start_matches(|c: char| matches!(c, '-' | '*' | '•') || c.is_whitespace());
    // "1." / "2)" list numbering
    let t = match t.find(['.', ')']) {
        Some(i) if i > 0 && t[..i].chars().all(|c| c.is_ascii_digit()) => &t[i + 1..],
        _ => t,
    };
    let t = t.trim().trim_end_matches('.').trim();
    t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Splits a reply on commas, semicolons and newlines.
pub fn parse_keywords(reply: &str) -> Vec<String> {
    KeywordSet::new("", reply.split([',', ';', '\n'])).keywords
}

/// One LLM agent: a spec, a private provider client and a private memory.
pub struct Agent {
    spec: AgentSpec,
    capability: ImageCapability,
    conversation: Conversation,
    client: Box<dyn ChatProvider>,
    ledger: Arc<SharedLedger>,
    templates: Arc<PromptTemplates>,
    calls: u64,
}

impl std::fmt::Debug for Agent {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("spec", &self.spec)
            .field("messages", &self.conversation.messages().len())
            .field("calls", &self.calls)
            .finish()
    }
}

impl Agent {
    pub fn new(
        spec: AgentSpec,
        prices: &PriceTable,
        factory: &dyn ProviderFactory,
        ledger: Arc<SharedLedger>,
    ) -> Result<Self, AgentError> {
        if spec.agent_id.trim().is_empty() {
            return Err(AgentError::Config("agent id is empty".into()));
        }
        let capability = prices.get(&spec.model_id)?.image_processing;
        let client = factory.client_for(&spec.agent_id, &spec.model_id)?;
        Ok(Agent {
            conversation: Conversation::new(spec.agent_id.clone(), Some(&spec.system_prompt)),
            spec,
            capability,
            client,
            ledger,
            templates: Arc::new(PromptTemplates::default()),
            calls: 0,
        })
    }

    pub fn with_templates(mut self, templates: Arc<PromptTemplates>) -> Self {
        self.templates = templates;
        self
    }

    pub fn spec(&self) -> &AgentSpec {
        &self.spec
    }

    pub fn id(&self) -> &str {
        &self.spec.agent_id
    }

    pub fn conversation(&self) -> &Conversation {
        &self.conversation
    }

    /// Provider calls issued by this agent, failed ones included.
    pub fn calls(&self) -> u64 {
        self.calls
    }

    /// Sends the stored history plus `user` and appends the exchange on
    /// success. A failed call leaves the conversation untouched.
    pub fn send(&mut self, user: ChatMessage) -> Result<ChatMessage, AgentError> {
        if user.role != Role::User {
            return Err(AgentError::InvalidMessage(format!(
                "send expects a user message, got {}",
                user.role.as_str()
            )));
        }
        let mut messages = self.conversation.messages().to_vec();
        messages.push(user.clone());
        let request = ChatRequest {
            model: self.spec.model_id.clone(),
            messages,
            sampling: self.spec.sampling.clone(),
        };
        self.calls += 1;
        let completion = self.client.complete(&request)?;
        self.ledger.record(&self.spec.model_id, completion.usage);
        let mut reply = ChatMessage::assistant(completion.content);
        reply.token_count = Some(completion.usage.completion_tokens);
        self.conversation.push_exchange(user, reply.clone())?;
        Ok(reply)
    }

    /// Asks this agent to write a system prompt for another agent.
    pub fn derive_system_prompt(&mut self, target_role: &str) -> Result<String, AgentError> {
        let body = render(&self.templates.meta_prompt, &[("role", target_role)]);
        let reply = self.send(ChatMessage::user(body))?;
        let text = reply.text().trim().to_string();
        if text.is_empty() {
            return Err(AgentError::Parse {
                reason: "empty system prompt".into(),
                raw: reply.text(),
            });
        }
        Ok(text)
    }

    pub fn extract_keywords(&mut self, image: &ImageAsset) -> Result<KeywordSet, AgentError> {
        if self.capability != ImageCapability::Analysis {
            return Err(AgentError::Capability {
                model: self.spec.model_id.clone(),
                capability: self.capability,
            });
        }
        let message = ChatMessage::user_with_image(
            self.templates.keyword_request.clone(),
            image.asset_id.clone(),
            self.spec.image_detail,
        );
        let reply = self.send(message)?;
        keyword_reply(&image.asset_id, &reply.text())
    }

    pub fn aggregate_keywords(&mut self, sets: &[KeywordSet]) -> Result<KeywordSet, AgentError> {
        if sets.is_empty() {
            return Err(AgentError::Precondition("aggregation needs at least one keyword set".into()));
        }
        let listing = sets
            .iter()
            .enumerate()
            .map(|(i, s)| format!("Image {}: {}", i + 1, s.joined()))
            .collect::<Vec<_>>()
            .join("\n");
        let count = sets.len().to_string();
        let body = render(
            &self.templates.aggregate_request,
            &[("image_count", count.as_str()), ("keywords", listing.as_str())],
        );
        let reply = self.send(ChatMessage::user(body))?;
        keyword_reply(AGGREGATE_SOURCE, &reply.text())
    }

    pub fn compose_caption(&mut self, agg: &KeywordSet, iteration: u32) -> Result<Caption, AgentError> {
        if agg.is_empty() {
            return Err(AgentError::Precondition("caption needs a non-empty keyword set".into()));
        }
        let body = render(&self.templates.caption_request, &[("keywords", agg.joined().as_str())]);
        let reply = self.send(ChatMessage::user(body))?;
        let text = reply.text().trim().to_string();
        if text.is_empty() {
            return Err(AgentError::Parse {
                reason: "empty caption".into(),
                raw: reply.text(),
            });
        }
        Ok(Caption {
            text,
            contributing_keywords: agg.clone(),
            model_id: self.spec.model_id.clone(),
            iteration,
        })
    }
}

fn keyword_reply(source: &str, raw: &str) -> Result<KeywordSet, AgentError> {
    let set = KeywordSet::new(source, raw.split([',', ';', '\n']));
    if set.is_empty() {
        return Err(AgentError::Parse {
            reason: "reply holds no keywords".into(),
            raw: raw.to_string(),
        });
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::mock::{echo_factory, RecordingFactory, ScriptedProvider};
    use crate::agent::provider::{ChatCompletion, Usage};
    use crate::store::{Acquisition, ImageKind, MediaType, StoredObject};
    use crate::{GeoPoint, StaticMapRequest};

    fn image(id: &str) -> ImageAsset {
        let obj = StoredObject {
            asset_id: id.into(),
            media_type: MediaType::Png,
            width_px: 4,
            height_px: 4,
            byte_len: 10,
            storage_path: format!("objects/{id}.png"),
        };
        let req = StaticMapRequest::new(
            GeoPoint::new(43.0, -80.0).unwrap(),
            crate::ZoomLevel::new(18).unwrap(),
            crate::maps::MapKind::Satellite,
            4,
            4,
        )
        .unwrap();
        ImageAsset::new(&obj, ImageKind::Satellite, Acquisition::Map(req)).unwrap()
    }

    fn scripted(replies: Vec<(&'static str, Usage)>) -> impl ProviderFactory {
        let replies = std::sync::Mutex::new(Some(replies));
        move |_: &str, _: &str| -> Result<Box<dyn ChatProvider>, AgentError> {
            let r = replies.lock().unwrap().take().unwrap_or_default();
            Ok(Box::new(ScriptedProvider::completions(r.into_iter().map(|(c, usage)| ChatCompletion {
                content: c.to_string(),
                usage,
            }))))
        }
    }

    fn agent(model: &str, factory: &dyn ProviderFactory) -> (Agent, Arc<SharedLedger>) {
        let ledger = Arc::new(SharedLedger::default());
        let a = Agent::new(AgentSpec::new("a", model, "S"), &PriceTable::builtin(), factory, ledger.clone()).unwrap();
        (a, ledger)
    }

    #[test]
    fn new_agent_holds_only_system_prompt() {
        let (a, _) = agent("gpt-4o", &*echo_factory());
        assert_eq!(a.conversation().messages(), &[ChatMessage::system("S")]);
    }

    #[test]
    fn unknown_model_is_config_error() {
        let err = Agent::new(
            AgentSpec::new("a", "nope", "S"),
            &PriceTable::builtin(),
            &*echo_factory(),
            Arc::default(),
        )
        .unwrap_err();
        assert!(matches!(err, AgentError::UnknownModel(_)));
    }

    #[test]
    fn usage_is_booked_exactly() {
        let usage = Usage {
            prompt_tokens: 120,
            cached_prompt_tokens: 0,
            completion_tokens: 45,
        };
        let f = scripted(vec![("hi", usage)]);
        let (mut a, ledger) = agent("gpt-4o", &f);
        a.send(ChatMessage::user("x")).unwrap();
        let t = ledger.snapshot().get("gpt-4o");
        assert_eq!((t.input_tokens, t.output_tokens, t.requests), (120, 45, 1));
    }

    #[test]
    fn keyword_normalization() {
        let f = scripted(vec![("Glass, steel, GLASS; atrium", Usage::default())]);
        let (mut a, _) = agent("gpt-4o", &f);
        let ks = a.extract_keywords(&image("img1")).unwrap();
        assert_eq!(ks.keywords, ["glass", "steel", "atrium"]);
        assert_eq!(ks.source_asset, "img1");
        assert_eq!(a.calls(), 1);
    }

    #[test]
    fn bullets_and_numbering_are_stripped() {
        assert_eq!(parse_keywords("- Glass\n* steel\n1. Flat roof.\n2) atrium"), ["glass", "steel", "flat roof", "atrium"]);
    }

    #[test]
    fn ocr_only_model_cannot_extract() {
        let (mut a, _) = agent("deepseek-chat", &*echo_factory());
        let err = a.extract_keywords(&image("x")).unwrap_err();
        assert!(matches!(err, AgentError::Capability { .. }));
        assert_eq!(a.calls(), 0);
    }

    #[test]
    fn derive_prompt_with_echo_returns_request_body() {
        let rec = RecordingFactory::new(echo_factory());
        let (mut author, _) = agent("gpt-4o", &rec);
        let prompt = author.derive_system_prompt("caption writer").unwrap();
        let expected = render(&PromptTemplates::default().meta_prompt, &[("role", "caption writer")]);
        assert_eq!(prompt, expected);
        assert_eq!(author.conversation().messages().len(), 3);

        let ledger = Arc::new(SharedLedger::default());
        let mut derived =
            Agent::new(AgentSpec::new("b", "gpt-4o", prompt.clone()), &PriceTable::builtin(), &rec, ledger).unwrap();
        derived.send(ChatMessage::user("go")).unwrap();
        let first = &rec.log().for_agent("b")[0];
        assert_eq!(first.messages[0], ChatMessage::system(prompt));
    }

    #[test]
    fn aggregate_prompt_lists_every_keyword() {
        let rec = RecordingFactory::new(echo_factory());
        let (mut a, _) = agent("gpt-4o", &rec);
        let sets = vec![KeywordSet::new("i1", ["glass", "steel"]), KeywordSet::new("i2", ["steel", "dome"])];
        let out = a.aggregate_keywords(&sets).unwrap();
        let sent = rec.log().for_agent("a")[0].messages.last().unwrap().text();
        for k in ["glass", "steel", "dome"] {
            assert!(sent.contains(k));
        }
        assert_eq!(out.source_asset, AGGREGATE_SOURCE);
        assert!(a.aggregate_keywords(&[]).is_err());
    }

    #[test]
    fn caption_guards_and_counts() {
        let f = scripted(vec![("A tall glass tower.", Usage::default())]);
        let (mut a, ledger) = agent("gpt-4o-mini", &f);
        assert!(matches!(
            a.compose_caption(&KeywordSet::new("x", Vec::<String>::new()), 0),
            Err(AgentError::Precondition(_))
        ));
        let c = a.compose_caption(&KeywordSet::new(AGGREGATE_SOURCE, ["glass"]), 3).unwrap();
        assert_eq!(c.text, "A tall glass tower.");
        assert_eq!(c.iteration, 3);
        assert_eq!(ledger.snapshot().total_requests(), 1);
    }

    #[test]
    fn failed_send_leaves_memory_untouched() {
        let f = scripted(vec![]);
        let (mut a, _) = agent("gpt-4o", &f);
        assert!(a.send(ChatMessage::user("x")).is_err());
        assert_eq!(a.conversation().messages().len(), 1);
        assert!(a.send(ChatMessage::assistant("x")).is_err());
    }
}
