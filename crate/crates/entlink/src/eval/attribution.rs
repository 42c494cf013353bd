//! Attribution of evaluation errors to the pipeline step that caused them.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::metrics::{MentionOutcome, MentionRow};
use crate::candidates::{CandidateSet, MentionKey};

/// The pipeline step an error is charged to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorSource {
    /// The gold entity never made it into the candidate set.
    Step1Candidates,
    /// Candidates were fine but no auxiliary description was available.
    Step2Augmentation,
    /// Candidates and description were available; the selection still missed.
    Step3Selection,
    /// Reserved for manual review: the gold label itself looks wrong.
    GroundTruthFlagged,
}

impl ErrorSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Step1Candidates => "step1-candidates",
            Self::Step2Augmentation => "step2-augmentation",
            Self::Step3Selection => "step3-selection",
            Self::GroundTruthFlagged => "ground-truth-flagged",
        }
    }
}

/// One wrongly handled mention with its attributed cause.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRow {
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
    pub surface: String,
    pub gold: String,
    pub predicted: Option<String>,
    pub source: ErrorSource,
    /// Free-text tag added during manual review; never set automatically.
    pub severity: Option<String>,
}

/// Charges every non-correct row to a step: step 1 if the gold entity is
/// missing from the candidate set, step 2 if no (non-failed, non-empty)
/// auxiliary description backed the selection, step 3 otherwise. Row order
/// is preserved.
pub fn attribute_errors(
    rows: &[MentionRow],
    candidate_sets: &HashMap<MentionKey, CandidateSet>,
    aux_present: &HashMap<MentionKey, bool>,
    no_augmentation_run: bool,
) -> Vec<ErrorRow> {
    let mut errors = Vec::new();
    for row in rows {
        if row.outcome == MentionOutcome::Correct {
            continue;
        }
        let key = row.key();
        let gold_in_candidates =
            candidate_sets.get(&key).is_some_and(|set| set.contains_entity(&row.gold));
        let source = if !gold_in_candidates {
            ErrorSource::Step1Candidates
        } else if no_augmentation_run || !aux_present.get(&key).copied().unwrap_or(false) {
            ErrorSource::Step2Augmentation
        } else {
            ErrorSource::Step3Selection
        };
        errors.push(ErrorRow {
            doc_id: row.doc_id.clone(),
            start: row.start,
            end: row.end,
            surface: row.surface.clone(),
            gold: row.gold.clone(),
            predicted: row.predicted.clone(),
            source,
            severity: None,
        });
    }
    errors
}
