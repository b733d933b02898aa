use serde::{Deserialize, Serialize};

use super::AgentError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageDetail {
    Low,
    #[default]
    High,
}

impl ImageDetail {
    pub fn as_str(self) -> &'static str {
        match self {
            ImageDetail::Low => "low",
            ImageDetail::High => "high",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ContentPart {
    Text { text: String },
    Image { asset_id: String, detail: ImageDetail },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub parts: Vec<ContentPart>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub token_count: Option<u64>,
}

impl ChatMessage {
    pub fn new(role: Role, parts: Vec<ContentPart>) -> Result<Self, AgentError> {
        if parts.is_empty() {
            return Err(AgentError::InvalidMessage("message has no content parts".into()));
        }
        if role != Role::User && parts.iter().any(|p| matches!(p, ContentPart::Image { .. })) {
            return Err(AgentError::InvalidMessage(format!(
                "image parts are only allowed in user messages, not {}",
                role.as_str()
            )));
        }
        Ok(ChatMessage {
            role,
            parts,
            token_count: None,
        })
    }

    fn text_message(role: Role, text: impl Into<String>) -> Self {
        ChatMessage {
            role,
            parts: vec![ContentPart::Text { text: text.into() }],
            token_count: None,
        }
    }

    pub fn system(text: impl Into<String>) -> Self {
        Self::text_message(Role::System, text)
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self::text_message(Role::User, text)
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self::text_message(Role::Assistant, text)
    }

    pub fn user_with_image(text: impl Into<String>, asset_id: impl Into<String>, detail: ImageDetail) -> Self {
        ChatMessage {
            role: Role::User,
            parts: vec![
                ContentPart::Text { text: text.into() },
                ContentPart::Image {
                    asset_id: asset_id.into(),
                    detail,
                },
            ],
            token_count: None,
        }
    }

    /// All text parts joined by newlines.
    pub fn text(&self) -> String {
        self.parts
            .iter()
            .filter_map(|p| match p {
                ContentPart::Text { text } => Some(text.as_str()),
                ContentPart::Image { .. } => None,
            })
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn images(&self) -> impl Iterator<Item = (&str, ImageDetail)> {
        self.parts.iter().filter_map(|p| match p {
            ContentPart::Image { asset_id, detail } => Some((asset_id.as_str(), *detail)),
            ContentPart::Text { .. } => None,
        })
    }
}

/// An agent's memory: an optional leading system message, then completed
/// user/assistant exchanges.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub agent_id: String,
    messages: Vec<ChatMessage>,
}

impl Conversation {
    pub fn new(agent_id: impl Into<String>, system_prompt: Option<&str>) -> Self {
        Conversation {
            agent_id: agent_id.into(),
            messages: system_prompt
                .filter(|s| !s.trim().is_empty())
                .map(|s| vec![ChatMessage::system(s)])
                .into_iter()
                .flatten()
                .collect(),
        }
    }

    pub fn messages(&self) -> &[ChatMessage] {
        &self.messages
    }

    pub fn system_prompt(&self) -> Option<String> {
        self.messages
            .first()
            .filter(|m| m.role == Role::System)
            .map(|m| m.text())
    }

    /// Appends one completed exchange.
    pub fn push_exchange(&mut self, user: ChatMessage, assistant: ChatMessage) -> Result<(), AgentError> {
        if user.role != Role::User || assistant.role != Role::Assistant {
            return Err(AgentError::InvalidMessage(
                "an exchange is one user message followed by one assistant message".into(),
            ));
        }
        self.messages.push(user);
        self.messages.push(assistant);
        Ok(())
    }

    pub fn exchanges(&self) -> usize {
        self.messages.iter().filter(|m| m.role == Role::Assistant).count()
    }

    /// Checks the role structure: at most one leading system message, then
    /// strictly alternating user/assistant pairs ending on assistant.
    pub fn is_well_formed(&self) -> bool {
        let body = match self.messages.first() {
            Some(m) if m.role == Role::System => &self.messages[1..],
            _ => &self.messages[..],
        };
        body.len() % 2 == 0
            && body.chunks(2).all(|pair| pair[0].role == Role::User && pair[1].role == Role::Assistant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn images_only_in_user_messages() {
        let img = ContentPart::Image {
            asset_id: "a".into(),
            detail: ImageDetail::High,
        };
        assert!(ChatMessage::new(Role::User, vec![img.clone()]).is_ok());
        assert!(ChatMessage::new(Role::Assistant, vec![img]).is_err());
        assert!(ChatMessage::new(Role::User, vec![]).is_err());
    }

    #[test]
    fn conversation_structure() {
        let mut c = Conversation::new("a", Some("be brief"));
        assert!(c.is_well_formed());
        c.push_exchange(ChatMessage::user("hi"), ChatMessage::assistant("hello")).unwrap();
        assert!(c.is_well_formed());
        assert_eq!(c.exchanges(), 1);
        assert!(c
            .push_exchange(ChatMessage::assistant("x"), ChatMessage::user("y"))
            .is_err());
        assert_eq!(Conversation::new("b", Some("  ")).messages().len(), 0);
    }

    #[test]
    fn content_part_wire_shape() {
        let m = ChatMessage::user_with_image("look", "abc", ImageDetail::Low);
        let v = serde_json::to_value(&m).unwrap();
        assert_eq!(v["parts"][1]["type"], "image");
        assert_eq!(v["parts"][1]["detail"], "low");
        assert_eq!(m.text(), "look");
    }
}
