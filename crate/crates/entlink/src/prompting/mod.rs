//! Prompt construction and response parsing.
//!
//! Three prompt shapes are produced here: an open question asking the model
//! to describe a mention in context, a multiple-choice prompt listing
//! candidate entities (always closed by a catch-all "None" option), and a
//! generic multiple-choice QA prompt. [`parse_selection`] maps a free-text
//! model response back onto the options of a choice prompt; it can only ever
//! yield targets that were actually offered.

pub mod templates;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::candidates::{char_len, char_slice, context_around, Document, Mention, MentionKey};
use crate::kb::KnowledgeBase;
pub use templates::{TemplateSet, MENTION_CLOSE, MENTION_OPEN, TEMPLATE_VERSION};

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("too many options: {count} exceeds the 26 labels A-Z")]
    TooManyOptions { count: usize },
    #[error("too few options: {count} (need at least 2)")]
    TooFewOptions { count: usize },
    #[error("gold entity {entity:?} is not in the knowledge base")]
    GoldMissing { entity: String },
    #[error("template version {found} does not match supported version {expected}")]
    TemplateVersion { found: u32, expected: u32 },
    #[error("template parse error: {0}")]
    TemplateParse(String),
    #[error("template {template:?} is missing required placeholder {{{placeholder}}}")]
    MissingPlaceholder { template: String, placeholder: String },
    #[error("mention span {start}..{end} is out of range in document {doc_id}")]
    SpanOutOfRange { doc_id: String, start: usize, end: usize },
    #[error("io error: {0}")]
    Io(String),
}

/// What an answer option stands for.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OptionTarget {
    /// A knowledge-base entity id, or the literal option text for QA prompts.
    Entity(String),
    /// The catch-all "none of the above" option.
    None,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptOption {
    pub label: char,
    pub target: OptionTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PromptKind {
    Selection,
    Qa,
}

/// A rendered multiple-choice prompt together with its option map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChoicePrompt {
    pub text: String,
    pub options: Vec<PromptOption>,
    pub mention: Option<MentionKey>,
    pub kind: PromptKind,
}

impl ChoicePrompt {
    pub fn option_for_letter(&self, letter: char) -> Option<&PromptOption> {
        let wanted = letter.to_ascii_uppercase();
        self.options.iter().find(|o| o.label == wanted)
    }

    fn none_option(&self) -> Option<&PromptOption> {
        self.options.iter().find(|o| o.target == OptionTarget::None)
    }
}

/// Model-written description of a mention, produced by the augmentation step
/// and spliced into the selection prompt.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuxiliaryContext {
    pub mention: MentionKey,
    pub text: String,
    pub model_id: String,
    pub token_usage: u64,
    /// True when the request failed and the pipeline continued without a
    /// description.
    pub failed: bool,
}

/// Outcome of interpreting a selection response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "kebab-case")]
pub enum Decision {
    Entity(String),
    None,
    Unparseable(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub decision: Decision,
    pub raw_response: String,
    /// Label of the option the response resolved to, whichever rule matched.
    pub matched_label: Option<char>,
    pub mention: Option<MentionKey>,
}

/// Context and size limits shared by the prompt renderers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptLayout {
    /// Characters of document text kept on each side of the mention before
    /// any overall budget applies.
    pub context_window: usize,
    /// Overall character budget for the marked excerpt; `0` disables it.
    pub max_excerpt_chars: usize,
}

impl Default for PromptLayout {
    fn default() -> Self {
        Self { context_window: 200, max_excerpt_chars: 4000 }
    }
}

fn take_first_chars(s: &str, n: usize) -> &str {
    match s.char_indices().nth(n) {
        Some((idx, _)) => &s[..idx],
        None => s,
    }
}

fn take_last_chars(s: &str, n: usize) -> &str {
    let len = char_len(s);
    if len <= n {
        return s;
    }
    // `nth(len - n)` only misses when n == 0, where nothing is kept.
    match s.char_indices().nth(len - n) {
        Some((idx, _)) => &s[idx..],
        None => "",
    }
}

/// Extracts the mention with `window` characters of context on each side and
/// wraps it in [`MENTION_OPEN`]/[`MENTION_CLOSE`]. When the result exceeds
/// `max_chars` the context is trimmed symmetrically (unused budget on a short
/// side spills to the other); the marked mention itself is never trimmed.
pub fn mention_excerpt(
    doc: &Document,
    mention: &Mention,
    layout: PromptLayout,
) -> Result<String, PromptError> {
    if mention.start >= mention.end || char_slice(&doc.text, mention.start, mention.end).is_none() {
        return Err(PromptError::SpanOutOfRange {
            doc_id: doc.id.clone(),
            start: mention.start,
            end: mention.end,
        });
    }
    let (left, right) =
        context_around(&doc.text, mention.start, mention.end, layout.context_window);
    let marked = format!("{MENTION_OPEN}{}{MENTION_CLOSE}", mention.surface);
    let max_chars = layout.max_excerpt_chars;
    let (mut left_take, mut right_take) = (char_len(left), char_len(right));
    if max_chars > 0 && left_take + char_len(&marked) + right_take > max_chars {
        let budget = max_chars.saturating_sub(char_len(&marked));
        let half = budget / 2;
        if left_take <= half {
            right_take = budget - left_take;
        } else if right_take <= half {
            left_take = budget - right_take;
        } else {
            left_take = half;
            right_take = budget - half;
        }
    }
    Ok(format!(
        "{}{marked}{}",
        take_last_chars(left, left_take),
        take_first_chars(right, right_take)
    ))
}

fn aux_slot(aux_text: Option<&str>) -> String {
    match aux_text {
        Some(text) if !text.trim().is_empty() => format!("Mention description: {}\n", text.trim()),
        _ => String::new(),
    }
}

fn label_for(index: usize) -> Result<char, PromptError> {
    if index >= 26 {
        return Err(PromptError::TooManyOptions { count: index + 1 });
    }
    Ok((b'A' + index as u8) as char)
}

/// Renders the open "what does this mention represent?" question.
pub fn render_augmentation_prompt(
    doc: &Document,
    mention: &Mention,
    layout: PromptLayout,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    let excerpt = mention_excerpt(doc, mention, layout)?;
    let vars: HashMap<&str, &str> =
        [("context", excerpt.as_str()), ("surface", mention.surface.as_str())].into();
    Ok(templates::fill(&templates.augmentation, &vars))
}

fn option_line(label: char, entity_id: &str, kb: &KnowledgeBase) -> String {
    match kb.resolve(entity_id) {
        Some(record) if !record.first_sentence().is_empty() => {
            format!("{label}. {entity_id}: {}", record.first_sentence())
        }
        _ => format!("{label}. {entity_id}"),
    }
}

/// Renders the multiple-choice selection prompt: one lettered option per
/// candidate (with its knowledge-base first sentence when available) plus a
/// final "None of the above" option.
pub fn render_selection_prompt(
    doc: &Document,
    mention: &Mention,
    aux_text: Option<&str>,
    candidate_ids: &[String],
    kb: &KnowledgeBase,
    layout: PromptLayout,
    templates: &TemplateSet,
) -> Result<ChoicePrompt, PromptError> {
    if candidate_ids.len() + 1 > 26 {
        return Err(PromptError::TooManyOptions { count: candidate_ids.len() + 1 });
    }
    let excerpt = mention_excerpt(doc, mention, layout)?;
    let mut options = Vec::with_capacity(candidate_ids.len() + 1);
    let mut lines = Vec::with_capacity(candidate_ids.len() + 1);
    for (idx, id) in candidate_ids.iter().enumerate() {
        let label = label_for(idx)?;
        lines.push(option_line(label, id, kb));
        options.push(PromptOption { label, target: OptionTarget::Entity(id.clone()) });
    }
    let none_label = label_for(candidate_ids.len())?;
    lines.push(format!("{none_label}. None of the above"));
    options.push(PromptOption { label: none_label, target: OptionTarget::None });

    let aux = aux_slot(aux_text);
    let joined = lines.join("\n");
    let vars: HashMap<&str, &str> = [
        ("context", excerpt.as_str()),
        ("aux", aux.as_str()),
        ("surface", mention.surface.as_str()),
        ("options", joined.as_str()),
    ]
    .into();
    Ok(ChoicePrompt {
        text: templates::fill(&templates.selection, &vars),
        options,
        mention: Some(mention.key()),
        kind: PromptKind::Selection,
    })
}

/// Renders the free-form selection prompt used when no candidate list is
/// shown; the response is interpreted as an entity name rather than a letter.
pub fn render_free_selection_prompt(
    doc: &Document,
    mention: &Mention,
    aux_text: Option<&str>,
    layout: PromptLayout,
    templates: &TemplateSet,
) -> Result<String, PromptError> {
    let excerpt = mention_excerpt(doc, mention, layout)?;
    let aux = aux_slot(aux_text);
    let vars: HashMap<&str, &str> = [
        ("context", excerpt.as_str()),
        ("aux", aux.as_str()),
        ("surface", mention.surface.as_str()),
    ]
    .into();
    Ok(templates::fill(&templates.selection_no_candidates, &vars))
}

/// Renders a generic multiple-choice question (no "None" option).
pub fn render_qa_prompt(
    question: &str,
    answers: &[String],
    templates: &TemplateSet,
) -> Result<ChoicePrompt, PromptError> {
    if answers.len() < 2 {
        return Err(PromptError::TooFewOptions { count: answers.len() });
    }
    if answers.len() > 26 {
        return Err(PromptError::TooManyOptions { count: answers.len() });
    }
    let mut options = Vec::with_capacity(answers.len());
    let mut lines = Vec::with_capacity(answers.len());
    for (idx, answer) in answers.iter().enumerate() {
        let label = label_for(idx)?;
        lines.push(format!("{label}. {answer}"));
        options.push(PromptOption { label, target: OptionTarget::Entity(answer.clone()) });
    }
    let joined = lines.join("\n");
    let vars: HashMap<&str, &str> =
        [("question", question), ("options", joined.as_str())].into();
    Ok(ChoicePrompt {
        text: templates::fill(&templates.qa, &vars),
        options,
        mention: None,
        kind: PromptKind::Qa,
    })
}

/// Matches a leading option letter: `A`, `A.`, `A)`, `(A)`, or a letter
/// followed by whitespace, case-insensitively.
fn leading_letter(response: &str) -> Option<char> {
    let trimmed = response.trim_start();
    let (body, parenthesized) = match trimmed.strip_prefix('(') {
        Some(rest) => (rest, true),
        None => (trimmed, false),
    };
    let mut chars = body.chars();
    let letter = chars.next()?;
    if !letter.is_ascii_alphabetic() {
        return None;
    }
    let follower = chars.next();
    let ok = if parenthesized {
        follower == Some(')')
    } else {
        matches!(follower, None | Some('.') | Some(')')) || follower.is_some_and(char::is_whitespace)
    };
    ok.then(|| letter.to_ascii_uppercase())
}

/// Finds the option whose entity target occurs earliest in the response,
/// matching both the raw id and its underscore-to-space form,
/// case-insensitively. Ties at the same position prefer the longer id, then
/// option order.
fn earliest_entity_match(response: &str, prompt: &ChoicePrompt) -> Option<usize> {
    let haystack = response.to_lowercase();
    let mut best: Option<(usize, usize, usize)> = None; // (pos, id_len, option_idx)
    for (idx, option) in prompt.options.iter().enumerate() {
        let OptionTarget::Entity(id) = &option.target else { continue };
        let raw = id.to_lowercase();
        let spaced = raw.replace('_', " ");
        let pos = [raw.as_str(), spaced.as_str()]
            .iter()
            .filter_map(|needle| haystack.find(needle))
            .min();
        let Some(pos) = pos else { continue };
        let len = id.chars().count();
        let better = match best {
            None => true,
            Some((bp, bl, _)) => pos < bp || (pos == bp && len > bl),
        };
        if better {
            best = Some((pos, len, idx));
        }
    }
    best.map(|(_, _, idx)| idx)
}

/// True if the word `none` occurs in the response with non-alphanumeric
/// characters (or string edges) on both sides.
fn contains_word_none(response: &str) -> bool {
    let haystack = response.to_lowercase();
    let mut search_from = 0;
    while let Some(offset) = haystack[search_from..].find("none") {
        let pos = search_from + offset;
        let before_ok =
            haystack[..pos].chars().next_back().map_or(true, |c| !c.is_alphanumeric());
        let after_ok =
            haystack[pos + 4..].chars().next().map_or(true, |c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        search_from = pos + 4;
    }
    false
}

/// Interprets a model response against a choice prompt.
///
/// Rules, in order: a leading option letter; the earliest case-insensitive
/// occurrence of an offered entity id (underscores matching spaces); the
/// literal word "none" when the prompt offers a None option; otherwise the
/// response is unparseable. The result can only reference offered options.
pub fn parse_selection(response: &str, prompt: &ChoicePrompt) -> SelectionResult {
    let mut result = SelectionResult {
        decision: Decision::Unparseable(response.to_string()),
        raw_response: response.to_string(),
        matched_label: None,
        mention: prompt.mention.clone(),
    };

    if let Some(option) = leading_letter(response).and_then(|l| prompt.option_for_letter(l)) {
        result.matched_label = Some(option.label);
        result.decision = match &option.target {
            OptionTarget::Entity(id) => Decision::Entity(id.clone()),
            OptionTarget::None => Decision::None,
        };
        return result;
    }

    if let Some(idx) = earliest_entity_match(response, prompt) {
        let option = &prompt.options[idx];
        result.matched_label = Some(option.label);
        if let OptionTarget::Entity(id) = &option.target {
            result.decision = Decision::Entity(id.clone());
        }
        return result;
    }

    if let Some(none_option) = prompt.none_option() {
        if contains_word_none(response) {
            result.matched_label = Some(none_option.label);
            result.decision = Decision::None;
            return result;
        }
    }

    result
}
