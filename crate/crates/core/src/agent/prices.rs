//! Model price table and cost estimation in exact decimal arithmetic.

use std::collections::BTreeMap;
use std::path::Path;

use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::ledger::TokenLedger;
use super::AgentError;

const DEFAULT_TABLE: &str = include_str!("../../data/price_table.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ImageCapability {
    /// Full visual analysis of image inputs.
    Analysis,
    /// Text extraction only.
    Ocr,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPrice {
    /// Which provider endpoint serves the model (`openai`, `deepseek`, ...).
    pub provider: String,
    #[serde(default)]
    pub model_class: String,
    pub image_processing: ImageCapability,
    #[serde(with = "rust_decimal::serde::str")]
    pub input_usd_per_1m: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub output_usd_per_1m: Decimal,
    #[serde(with = "rust_decimal::serde::str")]
    pub cached_input_multiplier: Decimal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriceTable {
    #[serde(default)]
    pub compiled_on: Option<String>,
    pub models: BTreeMap<String, ModelPrice>,
}

impl PriceTable {
    pub fn from_toml(text: &str) -> Result<Self, AgentError> {
        let table: PriceTable = toml::from_str(text).map_err(|e| AgentError::Config(format!("price table: {e}")))?;
        table.validate()?;
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self, AgentError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| AgentError::Config(format!("cannot read price table {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// The built-in table of the models used in the experiments.
    pub fn builtin() -> Self {
        Self::from_toml(DEFAULT_TABLE).expect("built-in price table is valid")
    }

    pub fn validate(&self) -> Result<(), AgentError> {
        for (model, p) in &self.models {
            if p.input_usd_per_1m.is_sign_negative() || p.output_usd_per_1m.is_sign_negative() {
                return Err(AgentError::Config(format!("{model}: negative rate")));
            }
            if p.cached_input_multiplier < Decimal::ZERO || p.cached_input_multiplier > Decimal::ONE {
                return Err(AgentError::Config(format!("{model}: cached_input_multiplier outside [0, 1]")));
            }
        }
        Ok(())
    }

    pub fn get(&self, model: &str) -> Result<&ModelPrice, AgentError> {
        self.models
            .get(model)
            .ok_or_else(|| AgentError::UnknownModel(model.to_string()))
    }
}

/// Total USD for a ledger:
/// `sum(input * in_rate + cached * in_rate * multiplier + output * out_rate) / 1e6`.
pub fn estimate_cost(ledger: &TokenLedger, prices: &PriceTable) -> Result<Decimal, AgentError> {
    let million = Decimal::from(1_000_000u32);
    let mut total = Decimal::ZERO;
    for (model, tokens) in ledger.models() {
        let p = prices.get(model)?;
        let input = Decimal::from(tokens.input_tokens) * p.input_usd_per_1m;
        let cached = Decimal::from(tokens.cached_input_tokens) * p.input_usd_per_1m * p.cached_input_multiplier;
        let output = Decimal::from(tokens.output_tokens) * p.output_usd_per_1m;
        total += (input + cached + output) / million;
    }
    Ok(total.normalize())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::Usage;
    use std::str::FromStr;

    fn dec(s: &str) -> Decimal {
        Decimal::from_str(s).unwrap()
    }

    fn ledger(model: &str, input: u64, cached: u64, output: u64) -> TokenLedger {
        let mut l = TokenLedger::default();
        l.record(
            model,
            Usage {
                prompt_tokens: input + cached,
                cached_prompt_tokens: cached,
                completion_tokens: output,
            },
        );
        l
    }

    #[test]
    fn gpt_4o_mini_million_each() {
        let cost = estimate_cost(&ledger("gpt-4o-mini", 1_000_000, 0, 1_000_000), &PriceTable::builtin()).unwrap();
        assert_eq!(cost, dec("0.75"));
    }

    #[test]
    fn deepseek_chat_cached_input() {
        let cost = estimate_cost(&ledger("deepseek-chat", 0, 1_000_000, 0), &PriceTable::builtin()).unwrap();
        assert_eq!(cost, dec("0.014"));
    }

    #[test]
    fn empty_ledger_is_free() {
        assert_eq!(estimate_cost(&TokenLedger::default(), &PriceTable::builtin()).unwrap(), Decimal::ZERO);
    }

    #[test]
    fn unpriced_model_is_a_config_error() {
        let err = estimate_cost(&ledger("llama", 1, 0, 1), &PriceTable::builtin()).unwrap_err();
        assert!(matches!(err, AgentError::UnknownModel(_)));
    }

    #[test]
    fn multiplier_is_bounded() {
        let text = DEFAULT_TABLE.replace("cached_input_multiplier = \"0.1\"", "cached_input_multiplier = \"1.5\"");
        assert!(PriceTable::from_toml(&text).is_err());
    }

    #[test]
    fn capabilities_follow_the_model_table() {
        let t = PriceTable::builtin();
        assert_eq!(t.get("gpt-4o").unwrap().image_processing, ImageCapability::Analysis);
        assert_eq!(t.get("deepseek-chat").unwrap().image_processing, ImageCapability::Ocr);
        assert_eq!(t.get("gpt-o1").unwrap().image_processing, ImageCapability::None);
        assert_eq!(t.compiled_on.as_deref(), Some("2025-01-31"));
    }
}
