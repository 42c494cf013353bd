//! Prompt templates with named placeholders.
//!
//! Templates are plain strings holding `{name}` slots. They can be loaded
//! from TOML so wording can change without a rebuild; a version field guards
//! against mixing cached model responses across incompatible wordings.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PromptError;

/// Bumped whenever a default wording changes incompatibly.
pub const TEMPLATE_VERSION: u32 = 1;

/// Markers wrapped around the mention inside prompt excerpts.
pub const MENTION_OPEN: &str = "[[";
pub const MENTION_CLOSE: &str = "]]";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSet {
    pub version: u32,
    /// Asks the model to describe a mention in context. Slots: `{context}`,
    /// `{surface}`.
    pub augmentation: String,
    /// Multiple-choice entity selection. Slots: `{context}`, `{aux}`,
    /// `{surface}`, `{options}`.
    pub selection: String,
    /// Free-form entity selection used when no candidate list is shown.
    /// Slots: `{context}`, `{aux}`, `{surface}`.
    pub selection_no_candidates: String,
    /// Task description placed in the system turn of instruction records.
    pub instruction: String,
    /// Generic multiple-choice question answering. Slots: `{question}`,
    /// `{options}`.
    pub qa: String,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self {
            version: TEMPLATE_VERSION,
            augmentation: "{context}\nWhat does {surface} represent?".to_string(),
            selection: "Context: {context}\n{aux}Mention: {surface}\nCandidates:\n{options}\nSelect the entity that the mention refers to. Answer with the letter of the correct option.".to_string(),
            selection_no_candidates: "Context: {context}\n{aux}Mention: {surface}\nAnswer with the knowledge-base entity name that the mention refers to, or None if no entity matches.".to_string(),
            instruction: "You are linking mentions in text to entities in a knowledge base. Given a context, a mention, and a list of candidate entities, answer with the name of the correct entity.".to_string(),
            qa: "{question}\nOptions:\n{options}\nAnswer with the letter of the correct option.".to_string(),
        }
    }
}

impl TemplateSet {
    /// Loads a template set from TOML, checking version and required slots.
    pub fn load(path: &Path) -> Result<Self, PromptError> {
        let text = std::fs::read_to_string(path)
            .map_err(|err| PromptError::Io(format!("{}: {err}", path.display())))?;
        let set: Self = toml::from_str(&text)
            .map_err(|err| PromptError::TemplateParse(format!("{}: {err}", path.display())))?;
        set.validate()?;
        Ok(set)
    }

    pub fn validate(&self) -> Result<(), PromptError> {
        if self.version != TEMPLATE_VERSION {
            return Err(PromptError::TemplateVersion {
                found: self.version,
                expected: TEMPLATE_VERSION,
            });
        }
        let required: [(&str, &str, &[&str]); 4] = [
            ("augmentation", &self.augmentation, &["context", "surface"]),
            ("selection", &self.selection, &["context", "aux", "surface", "options"]),
            ("selection_no_candidates", &self.selection_no_candidates, &["context", "aux", "surface"]),
            ("qa", &self.qa, &["question", "options"]),
        ];
        for (name, template, slots) in required {
            for slot in slots {
                if !template.contains(&format!("{{{slot}}}")) {
                    return Err(PromptError::MissingPlaceholder {
                        template: name.to_string(),
                        placeholder: (*slot).to_string(),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Substitutes `{name}` slots in a single pass. Unknown slots are left
/// verbatim and substituted values are never rescanned, so braces inside
/// document text cannot inject further expansion.
pub(crate) fn fill(template: &str, vars: &HashMap<&str, &str>) -> String {
    let mut out = String::with_capacity(template.len());
    let mut rest = template;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        match after.find(['{', '}']) {
            Some(close) if after.as_bytes()[close] == b'}' => {
                let name = &after[..close];
                match vars.get(name) {
                    Some(value) => out.push_str(value),
                    None => {
                        out.push('{');
                        out.push_str(name);
                        out.push('}');
                    }
                }
                rest = &after[close + 1..];
            }
            _ => {
                // Unterminated or nested brace: keep the '{' literally.
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
