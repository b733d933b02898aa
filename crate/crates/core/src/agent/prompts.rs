//! Prompt templates with `{name}` placeholders.
//!
//! Built-in templates are compiled in; a directory holding files with the
//! same names overrides them one by one.

use std::path::Path;

use super::AgentError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplates {
    pub keyword_system: String,
    pub keyword_request: String,
    pub aggregate_system: String,
    /// Placeholders: `{keywords}`, `{image_count}`.
    pub aggregate_request: String,
    pub caption_system: String,
    /// Placeholder: `{keywords}`.
    pub caption_request: String,
    /// Placeholder: `{role}`.
    pub meta_prompt: String,
}

impl Default for PromptTemplates {
    fn default() -> Self {
        PromptTemplates {
            keyword_system: include_str!("../../prompts/keyword_system.txt").trim_end().to_string(),
            keyword_request: include_str!("../../prompts/keyword_request.txt").trim_end().to_string(),
            aggregate_system: include_str!("../../prompts/aggregate_system.txt").trim_end().to_string(),
            aggregate_request: include_str!("../../prompts/aggregate_request.txt").trim_end().to_string(),
            caption_system: include_str!("../../prompts/caption_system.txt").trim_end().to_string(),
            caption_request: include_str!("../../prompts/caption_request.txt").trim_end().to_string(),
            meta_prompt: include_str!("../../prompts/meta_prompt.txt").trim_end().to_string(),
        }
    }
}

impl PromptTemplates {
    /// Loads `<name>.txt` overrides from `dir`; missing files keep the defaults.
    pub fn load_dir(dir: &Path) -> Result<Self, AgentError> {
        if !dir.is_dir() {
            return Err(AgentError::Config(format!("prompt directory {} does not exist", dir.display())));
        }
        let mut t = PromptTemplates::default();
        let slots: [(&str, &mut String); 7] = [
            ("keyword_system", &mut t.keyword_system),
            ("keyword_request", &mut t.keyword_request),
            ("aggregate_system", &mut t.aggregate_system),
            ("aggregate_request", &mut t.aggregate_request),
            ("caption_system", &mut t.caption_system),
            ("caption_request", &mut t.caption_request),
            ("meta_prompt", &mut t.meta_prompt),
        ];
        for (name, slot) in slots {
            let path = dir.join(format!("{name}.txt"));
            if path.exists() {
                let text = std::fs::read_to_string(&path)
                    .map_err(|e| AgentError::Config(format!("cannot read {}: {e}", path.display())))?;
                *slot = text.trim_end().to_string();
            }
        }
        t.check()?;
        Ok(t)
    }

    fn check(&self) -> Result<(), AgentError> {
        let needs = [
            ("aggregate_request", &self.aggregate_request, "{keywords}"),
            ("caption_request", &self.caption_request, "{keywords}"),
            ("meta_prompt", &self.meta_prompt, "{role}"),
        ];
        for (name, text, placeholder) in needs {
            if !text.contains(placeholder) {
                return Err(AgentError::Config(format!("template {name} lacks {placeholder}")));
            }
        }
        Ok(())
    }
}

/// Replaces each `{name}` with its value. Unknown placeholders are left as is.
pub fn render(template: &str, vars: &[(&str, &str)]) -> String {
    let mut out = template.to_string();
    for (name, value) in vars {
        out = out.replace(&format!("{{{name}}}"), value);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_replaces_named_placeholders() {
        assert_eq!(render("{a} and {b} and {c}", &[("a", "1"), ("b", "2")]), "1 and 2 and {c}");
    }

    #[test]
    fn directory_overrides_single_files() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("caption_request.txt"), "Caption: {keywords}\n").unwrap();
        let t = PromptTemplates::load_dir(dir.path()).unwrap();
        assert_eq!(t.caption_request, "Caption: {keywords}");
        assert_eq!(t.keyword_system, PromptTemplates::default().keyword_system);
    }

    #[test]
    fn override_missing_placeholder_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("meta_prompt.txt"), "no placeholder").unwrap();
        assert!(PromptTemplates::load_dir(dir.path()).is_err());
    }
}
