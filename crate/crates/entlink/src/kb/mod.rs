//! Knowledge-base store: entity records with cached first sentences and the
//! anchor-statistics prior index.

mod normalize;
mod prior;
mod sentence;

pub use normalize::{entity_names_match, normalize_entity_name, normalize_surface};
pub use prior::{
    build_prior_index, build_prior_index_from_tsv, AnchorRow, IndexFormat, PriorBuildStats,
    PriorEntry, PriorIndex,
};
pub use sentence::first_sentence;

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::Deserialize;

#[derive(Debug, thiserror::Error)]
pub enum KbError {
    #[error("entity id must not be empty")]
    EmptyId,
    #[error("duplicate entity id `{0}`")]
    DuplicateId(String),
    #[error("entity `{id}`: first_sentence is not a prefix of the description")]
    SentenceNotPrefix { id: String },
    #[error("entity `{id}`: first_sentence is empty but the description is not")]
    SentenceEmpty { id: String },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("prior index file {path}: {msg}")]
    IndexFormat { path: String, msg: String },
}

/// One knowledge-base entity. The first sentence of the description is
/// extracted once at construction and cached; it is always a prefix of the
/// description and non-empty whenever the description is non-empty.
#[derive(Debug, Clone, PartialEq)]
pub struct EntityRecord {
    pub id: String,
    pub description: String,
    first_sentence: String,
}

impl EntityRecord {
    pub fn new(id: impl Into<String>, description: impl Into<String>) -> Result<Self, KbError> {
        let id = id.into();
        if id.is_empty() {
            return Err(KbError::EmptyId);
        }
        let description = description.into();
        let first_sentence = sentence::first_sentence(&description).to_string();
        Ok(Self { id, description, first_sentence })
    }

    /// Builds a record with a precomputed first sentence, e.g. from a dump
    /// that already ships one. The override must still be a prefix of the
    /// description and non-empty when the description is.
    pub fn with_first_sentence(
        id: impl Into<String>,
        description: impl Into<String>,
        first_sentence: impl Into<String>,
    ) -> Result<Self, KbError> {
        let id = id.into();
        if id.is_empty() {
            return Err(KbError::EmptyId);
        }
        let description = description.into();
        let first_sentence = first_sentence.into();
        if !description.starts_with(&first_sentence) {
            return Err(KbError::SentenceNotPrefix { id });
        }
        if first_sentence.is_empty() && !description.is_empty() {
            return Err(KbError::SentenceEmpty { id });
        }
        Ok(Self { id, description, first_sentence })
    }

    pub fn first_sentence(&self) -> &str {
        &self.first_sentence
    }
}

/// In-memory entity store keyed by exact id, with a secondary index of
/// normalized names for resolving loosely formatted references.
#[derive(Debug, Default, Clone)]
pub struct KnowledgeBase {
    entities: HashMap<String, EntityRecord>,
    by_normalized: HashMap<String, String>,
}

impl KnowledgeBase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, record: EntityRecord) -> Result<(), KbError> {
        if self.entities.contains_key(&record.id) {
            return Err(KbError::DuplicateId(record.id));
        }
        self.by_normalized
            .entry(normalize_entity_name(&record.id))
            .or_insert_with(|| record.id.clone());
        self.entities.insert(record.id.clone(), record);
        Ok(())
    }

    /// Exact-id lookup.
    pub fn get(&self, id: &str) -> Option<&EntityRecord> {
        self.entities.get(id)
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entities.contains_key(id)
    }

    /// Exact-id lookup, falling back to normalized-name matching so that
    /// `george w. bush` resolves to `George_W._Bush`. When two ids share a
    /// normalized form the first one inserted wins.
    pub fn resolve(&self, name: &str) -> Option<&EntityRecord> {
        self.entities.get(name).or_else(|| {
            self.by_normalized
                .get(&normalize_entity_name(name))
                .and_then(|id| self.entities.get(id))
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &EntityRecord> {
        self.entities.values()
    }

    /// Loads a KB from JSON-Lines, one `{"id", "description",
    /// "first_sentence"?}` object per line. Unknown fields are ignored;
    /// blank lines are skipped; duplicate ids are rejected.
    pub fn load_jsonl(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::read_jsonl(BufReader::new(file), &path.display().to_string())
    }

    pub fn read_jsonl(reader: impl BufRead, path_label: &str) -> Result<Self, KbError> {
        #[derive(Deserialize)]
        struct Raw {
            id: String,
            #[serde(default)]
            description: String,
            #[serde(default)]
            first_sentence: Option<String>,
        }

        let mut kb = Self::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(|source| KbError::Io {
                path: path_label.to_string(),
                source,
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let raw: Raw = serde_json::from_str(&line).map_err(|e| KbError::Parse {
                path: path_label.to_string(),
                line: idx + 1,
                msg: e.to_string(),
            })?;
            let record = match raw.first_sentence {
                Some(fs) => EntityRecord::with_first_sentence(raw.id, raw.description, fs)?,
                None => EntityRecord::new(raw.id, raw.description)?,
            };
            kb.insert(record)?;
        }
        Ok(kb)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kb_from(lines: &str) -> Result<KnowledgeBase, KbError> {
        KnowledgeBase::read_jsonl(lines.as_bytes(), "test.jsonl")
    }

    #[test]
    fn caches_first_sentence() {
        let rec = EntityRecord::new("X", "First part. Second part.").unwrap();
        assert_eq!(rec.first_sentence(), "First part.");
    }

    #[test]
    fn accepts_prefix_override() {
        let rec =
            EntityRecord::with_first_sentence("X", "St. Louis is a city. More.", "St. Louis is a city.")
                .unwrap();
        assert_eq!(rec.first_sentence(), "St. Louis is a city.");
    }

    #[test]
    fn rejects_non_prefix_override() {
        let err = EntityRecord::with_first_sentence("X", "Some text.", "Other text.").unwrap_err();
        assert!(matches!(err, KbError::SentenceNotPrefix { .. }));
    }

    #[test]
    fn rejects_empty_override_for_nonempty_description() {
        let err = EntityRecord::with_first_sentence("X", "Some text.", "").unwrap_err();
        assert!(matches!(err, KbError::SentenceEmpty { .. }));
    }

    #[test]
    fn rejects_empty_id() {
        assert!(matches!(EntityRecord::new("", "x"), Err(KbError::EmptyId)));
    }

    #[test]
    fn rejects_duplicate_ids() {
        let mut kb = KnowledgeBase::new();
        kb.insert(EntityRecord::new("A", "a.").unwrap()).unwrap();
        let err = kb.insert(EntityRecord::new("A", "b.").unwrap()).unwrap_err();
        assert!(matches!(err, KbError::DuplicateId(id) if id == "A"));
    }

    #[test]
    fn get_is_exact_resolve_is_normalized() {
        let mut kb = KnowledgeBase::new();
        kb.insert(EntityRecord::new("George_W._Bush", "He was president.").unwrap())
            .unwrap();
        assert!(kb.get("george w. bush").is_none());
        assert_eq!(kb.resolve("george w. bush").unwrap().id, "George_W._Bush");
        assert_eq!(kb.resolve("George_W._Bush").unwrap().id, "George_W._Bush");
        assert!(kb.resolve("Unknown").is_none());
    }

    #[test]
    fn loads_jsonl_with_overrides_and_blank_lines() {
        let kb = kb_from(
            r#"{"id": "A", "description": "Alpha entry. Tail."}

{"id": "B", "description": "Beta entry. Tail.", "first_sentence": "Beta entry.", "extra": 1}
"#,
        )
        .unwrap();
        assert_eq!(kb.len(), 2);
        assert_eq!(kb.get("A").unwrap().first_sentence(), "Alpha entry.");
        assert_eq!(kb.get("B").unwrap().first_sentence(), "Beta entry.");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = kb_from("{\"id\": \"A\"}\nnot json\n").unwrap_err();
        match err {
            KbError::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected error: {other}"),
        }
    }
}
