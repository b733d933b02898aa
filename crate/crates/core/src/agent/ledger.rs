use std::collections::BTreeMap;
use std::ops::{Add, AddAssign};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::Usage;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelTokens {
    pub input_tokens: u64,
    pub cached_input_tokens: u64,
    pub output_tokens: u64,
    pub requests: u64,
}

impl AddAssign for ModelTokens {
    fn add_assign(&mut self, o: Self) {
        self.input_tokens += o.input_tokens;
        self.cached_input_tokens += o.cached_input_tokens;
        self.output_tokens += o.output_tokens;
        self.requests += o.requests;
    }
}

/// Per-model token counts. Counts only ever grow.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenLedger {
    models: BTreeMap<String, ModelTokens>,
}

impl TokenLedger {
    /// Books one provider request. Uncached input is `prompt - cached`.
    pub fn record(&mut self, model: &str, usage: Usage) {
        let cached = usage.cached_prompt_tokens.min(usage.prompt_tokens);
        *self.models.entry(model.to_string()).or_default() += ModelTokens {
            input_tokens: usage.prompt_tokens - cached,
            cached_input_tokens: cached,
            output_tokens: usage.completion_tokens,
            requests: 1,
        };
    }

    pub fn models(&self) -> impl Iterator<Item = (&str, &ModelTokens)> {
        self.models.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn get(&self, model: &str) -> ModelTokens {
        self.models.get(model).copied().unwrap_or_default()
    }

    pub fn total_requests(&self) -> u64 {
        self.models.values().map(|m| m.requests).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }
}

impl AddAssign<&TokenLedger> for TokenLedger {
    fn add_assign(&mut self, other: &TokenLedger) {
        for (model, tokens) in &other.models {
            *self.models.entry(model.clone()).or_default() += *tokens;
        }
    }
}

impl Add for TokenLedger {
    type Output = TokenLedger;

    fn add(mut self, other: TokenLedger) -> TokenLedger {
        self += &other;
        self
    }
}

/// A ledger that many agents can book into at once.
#[derive(Debug, Default)]
pub struct SharedLedger {
    inner: Mutex<TokenLedger>,
}

impl SharedLedger {
    pub fn record(&self, model: &str, usage: Usage) {
        self.inner.lock().expect("ledger lock").record(model, usage);
    }

    pub fn snapshot(&self) -> TokenLedger {
        self.inner.lock().expect("ledger lock").clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_passes_through() {
        let mut l = TokenLedger::default();
        l.record(
            "gpt-4o",
            Usage {
                prompt_tokens: 120,
                cached_prompt_tokens: 0,
                completion_tokens: 45,
            },
        );
        let t = l.get("gpt-4o");
        assert_eq!((t.input_tokens, t.output_tokens, t.requests), (120, 45, 1));
    }

    #[test]
    fn cached_tokens_split_out() {
        let mut l = TokenLedger::default();
        l.record(
            "deepseek-chat",
            Usage {
                prompt_tokens: 100,
                cached_prompt_tokens: 60,
                completion_tokens: 1,
            },
        );
        let t = l.get("deepseek-chat");
        assert_eq!((t.input_tokens, t.cached_input_tokens), (40, 60));
    }

    #[test]
    fn ledgers_add() {
        let mut a = TokenLedger::default();
        a.record("m", Usage { prompt_tokens: 1, cached_prompt_tokens: 0, completion_tokens: 2 });
        let b = a.clone();
        let sum = a + b;
        assert_eq!(sum.get("m").output_tokens, 4);
        assert_eq!(sum.total_requests(), 2);
    }
}
