//! Candidate generation: prior-index lookup merged with a pluggable
//! retrieval backup, capped at the top k.

mod lexical;
mod subprocess;

pub use lexical::LexicalRetriever;
pub use subprocess::SubprocessRetriever;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::kb::{entity_names_match, PriorEntry, PriorIndex};

#[derive(Debug, thiserror::Error)]
pub enum CandidateError {
    #[error("doc `{doc_id}`: mention {start}..{end} is out of range (text has {len} chars)")]
    SpanOutOfRange { doc_id: String, start: usize, end: usize, len: usize },
    #[error("doc `{doc_id}`: mention {start}..{end} has start >= end")]
    EmptySpan { doc_id: String, start: usize, end: usize },
    #[error(
        "doc `{doc_id}`: mention {start}..{end} surface `{surface}` does not match text slice `{slice}`"
    )]
    SurfaceMismatch { doc_id: String, start: usize, end: usize, surface: String, slice: String },
    #[error("doc `{doc_id}`: mention carries doc_id `{mention_doc_id}`")]
    DocIdMismatch { doc_id: String, mention_doc_id: String },
}

#[derive(Debug, thiserror::Error)]
pub enum RetrieverError {
    #[error("lexical index not built")]
    IndexNotBuilt,
    #[error("retrieval backend failed: {0}")]
    Backend(String),
}

/// Stable identifier for a mention: document id plus character span.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MentionKey {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

/// A mention span to disambiguate. Offsets are character (not byte)
/// positions into the document text; `surface` must equal the spanned slice.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mention {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold_entity: Option<String>,
}

impl Mention {
    pub fn key(&self) -> MentionKey {
        MentionKey { doc_id: self.doc_id.clone(), start: self.start, end: self.end }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub mentions: Vec<Mention>,
}

impl Document {
    /// Checks every mention span: in range, non-empty, surface equal to the
    /// spanned text, and doc_id agreeing with the document.
    pub fn validate(&self) -> Result<(), CandidateError> {
        let len = char_len(&self.text);
        for m in &self.mentions {
            if m.doc_id != self.id {
                return Err(CandidateError::DocIdMismatch {
                    doc_id: self.id.clone(),
                    mention_doc_id: m.doc_id.clone(),
                });
            }
            if m.start >= m.end {
                return Err(CandidateError::EmptySpan {
                    doc_id: self.id.clone(),
                    start: m.start,
                    end: m.end,
                });
            }
            if m.end > len {
                return Err(CandidateError::SpanOutOfRange {
                    doc_id: self.id.clone(),
                    start: m.start,
                    end: m.end,
                    len,
                });
            }
            let slice = char_slice(&self.text, m.start, m.end).unwrap_or_default();
            if slice != m.surface {
                return Err(CandidateError::SurfaceMismatch {
                    doc_id: self.id.clone(),
                    start: m.start,
                    end: m.end,
                    surface: m.surface.clone(),
                    slice: slice.to_string(),
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn char_len(s: &str) -> usize {
    s.chars().count()
}

/// Slice by character offsets; `None` when out of range.
pub(crate) fn char_slice(s: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let mut indices = s.char_indices().map(|(i, _)| i).chain(std::iter::once(s.len()));
    let start_byte = indices.by_ref().nth(start)?;
    let end_byte = if end == start {
        start_byte
    } else {
        indices.nth(end - start - 1)?
    };
    Some(&s[start_byte..end_byte])
}

/// Up to `window` characters of raw text on each side of the span.
pub(crate) fn context_around(text: &str, start: usize, end: usize, window: usize) -> (&str, &str) {
    let len = char_len(text);
    let left_from = start.saturating_sub(window);
    let right_to = (end + window).min(len);
    let left = char_slice(text, left_from, start).unwrap_or_default();
    let right = char_slice(text, end.min(len), right_to).unwrap_or_default();
    (left, right)
}

/// One candidate entity. A score is present iff the candidate came from
/// that source, so the source flags are the `is_some` of each score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub prior_score: Option<f64>,
    pub retrieval_score: Option<f64>,
}

impl Candidate {
    pub fn is_prior_sourced(&self) -> bool {
        self.prior_score.is_some()
    }

    pub fn is_retrieval_sourced(&self) -> bool {
        self.retrieval_score.is_some()
    }
}

/// Ranked candidates for one mention; never more than `k` entries and never
/// two entries for the same entity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub mention: MentionKey,
    pub k: usize,
    pub candidates: Vec<Candidate>,
}

impl CandidateSet {
    pub fn empty(mention: MentionKey, k: usize) -> Self {
        Self { mention, k, candidates: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    /// Whether any candidate matches `name` under entity-name normalization.
    pub fn contains_entity(&self, name: &str) -> bool {
        self.candidates.iter().any(|c| entity_names_match(&c.entity_id, name))
    }
}

/// Retrieval backup used when the prior index comes up short. Results must
/// be deterministic for fixed inputs, with scores non-increasing and ties
/// broken by entity id ascending.
pub trait Retriever: Send + Sync {
    fn retrieve(
        &self,
        surface: &str,
        context: &str,
        n: usize,
    ) -> Result<Vec<(String, f64)>, RetrieverError>;
}

/// Merges prior-sourced and retrieval-sourced candidates. Entities in both
/// lists are deduplicated into one candidate keeping both scores. Ordering:
/// prior-sourced candidates by prior descending, then retrieval-only
/// candidates by retrieval score descending, ties by entity id ascending;
/// the result is truncated to `k`.
pub fn merge_candidates(
    mention: MentionKey,
    prior: &[PriorEntry],
    retrieval: &[(String, f64)],
    k: usize,
) -> CandidateSet {
    let mut by_id: HashMap<&str, usize> = HashMap::new();
    let mut merged: Vec<Candidate> = Vec::with_capacity(prior.len() + retrieval.len());
    for entry in prior {
        if by_id.contains_key(entry.entity_id.as_str()) {
            continue; // defensively ignore duplicates within one list
        }
        by_id.insert(&entry.entity_id, merged.len());
        merged.push(Candidate {
            entity_id: entry.entity_id.clone(),
            prior_score: Some(entry.prior),
            retrieval_score: None,
        });
    }
    for (entity_id, score) in retrieval {
        match by_id.get(entity_id.as_str()) {
            Some(&i) => {
                if merged[i].retrieval_score.is_none() {
                    merged[i].retrieval_score = Some(*score);
                }
            }
            None => {
                by_id.insert(entity_id, merged.len());
                merged.push(Candidate {
                    entity_id: entity_id.clone(),
                    prior_score: None,
                    retrieval_score: Some(*score),
                });
            }
        }
    }
    merged.sort_by(|a, b| {
        match (a.prior_score, b.prior_score) {
            (Some(pa), Some(pb)) => pb.total_cmp(&pa).then_with(|| a.entity_id.cmp(&b.entity_id)),
            (Some(_), None) => std::cmp::Ordering::Less,
            (None, Some(_)) => std::cmp::Ordering::Greater,
            (None, None) => {
                let ra = a.retrieval_score.unwrap_or(f64::NEG_INFINITY);
                let rb = b.retrieval_score.unwrap_or(f64::NEG_INFINITY);
                rb.total_cmp(&ra).then_with(|| a.entity_id.cmp(&b.entity_id))
            }
        }
    });
    merged.truncate(k);
    CandidateSet { mention, k, candidates: merged }
}

/// Knobs for [`generate_candidates`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateGenConfig {
    /// Candidate cap.
    pub k: usize,
    /// Invoke the retriever when the best prior falls below this.
    pub min_top_prior: f64,
    /// Characters of document text on each side of the mention that join
    /// the retrieval query.
    pub retrieval_context_window: usize,
}

impl Default for CandidateGenConfig {
    fn default() -> Self {
        Self { k: 10, min_top_prior: 0.0, retrieval_context_window: 64 }
    }
}

/// A candidate set plus how retrieval went while producing it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedCandidates {
    pub set: CandidateSet,
    pub retriever_invoked: bool,
    /// A retrieval failure degrades to prior-only candidates; the message is
    /// kept so callers can surface a warning.
    pub retriever_error: Option<String>,
}

/// Step 1: look up prior candidates for the mention surface and, when the
/// prior list has fewer than `k` entries or its best prior is below the
/// configured floor, back it up with the retriever.
pub fn generate_candidates(
    mention: &Mention,
    doc: &Document,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    cfg: &CandidateGenConfig,
) -> GeneratedCandidates {
    debug_assert_eq!(mention.doc_id, doc.id, "mention paired with wrong document");
    let prior = index.lookup(&mention.surface);
    let top_prior = prior.first().map(|e| e.prior).unwrap_or(0.0);
    let needs_backup = prior.len() < cfg.k || top_prior < cfg.min_top_prior;

    let mut retriever_invoked = false;
    let mut retriever_error = None;
    let mut retrieved = Vec::new();
    if needs_backup {
        if let Some(r) = retriever {
            retriever_invoked = true;
            let (left, right) = context_around(
                &doc.text,
                mention.start,
                mention.end,
                cfg.retrieval_context_window,
            );
            let context = format!("{left} {right}");
            match r.retrieve(&mention.surface, &context, cfg.k) {
                Ok(hits) => retrieved = hits,
                Err(e) => retriever_error = Some(e.to_string()),
            }
        }
    }
    let set = merge_candidates(mention.key(), prior, &retrieved, cfg.k);
    GeneratedCandidates { set, retriever_invoked, retriever_error }
}

/// Fraction of mentions whose gold entity appears in their candidate set
/// (the Step-1 recall ceiling for the whole pipeline). `None` when there are
/// no pairs.
pub fn candidate_recall<'a>(
    pairs: impl IntoIterator<Item = (&'a CandidateSet, &'a str)>,
) -> Option<f64> {
    let mut total = 0u64;
    let mut hits = 0u64;
    for (set, gold) in pairs {
        total += 1;
        if set.contains_entity(gold) {
            hits += 1;
        }
    }
    (total > 0).then(|| hits as f64 / total as f64)
}
