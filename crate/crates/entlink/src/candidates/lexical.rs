//! Reference retriever: cosine similarity over character-trigram count
//! vectors of the query (surface + context) against each entity's id and
//! first knowledge-base sentence.

use super::{Retriever, RetrieverError};
use crate::kb::{normalize_entity_name, normalize_surface, KnowledgeBase};

/// Sparse trigram index over the knowledge base. Build once with
/// [`LexicalRetriever::build`]; a default-constructed retriever answers
/// [`RetrieverError::IndexNotBuilt`].
#[derive(Debug, Default)]
pub struct LexicalRetriever {
    built: bool,
    entries: Vec<IndexedEntity>,
}

#[derive(Debug)]
struct IndexedEntity {
    entity_id: String,
    grams: Vec<(String, f64)>,
    norm: f64,
}

impl LexicalRetriever {
    pub fn build(kb: &KnowledgeBase) -> Self {
        let mut entries: Vec<IndexedEntity> = kb
            .iter()
            .map(|rec| {
                let text = format!(
                    "{} {}",
                    normalize_entity_name(&rec.id),
                    normalize_surface(rec.first_sentence())
                );
                let grams = trigram_counts(&text);
                let norm = vector_norm(&grams);
                IndexedEntity { entity_id: rec.id.clone(), grams, norm }
            })
            .collect();
        entries.sort_by(|a, b| a.entity_id.cmp(&b.entity_id));
        Self { built: true, entries }
    }
}

impl Retriever for LexicalRetriever {
    fn retrieve(
        &self,
        surface: &str,
        context: &str,
        n: usize,
    ) -> Result<Vec<(String, f64)>, RetrieverError> {
        if !self.built {
            return Err(RetrieverError::IndexNotBuilt);
        }
        if n == 0 {
            return Ok(Vec::new());
        }
        let query = normalize_surface(&format!("{surface} {context}"));
        let q_grams = trigram_counts(&query);
        let q_norm = vector_norm(&q_grams);
        if q_norm == 0.0 {
            return Ok(Vec::new());
        }
        let mut scored: Vec<(String, f64)> = self
            .entries
            .iter()
            .filter_map(|entry| {
                let score = cosine(&q_grams, q_norm, &entry.grams, entry.norm);
                (score > 0.0).then(|| (entry.entity_id.clone(), score))
            })
            .collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        scored.truncate(n);
        Ok(scored)
    }
}

/// Character-trigram counts as a sorted sparse vector. Texts shorter than
/// three characters contribute themselves as a single gram.
fn trigram_counts(text: &str) -> Vec<(String, f64)> {
    let chars: Vec<char> = text.chars().collect();
    let mut counts = std::collections::BTreeMap::new();
    if chars.is_empty() {
        return Vec::new();
    }
    if chars.len() < 3 {
        counts.insert(text.to_string(), 1.0);
    } else {
        for window in chars.windows(3) {
            *counts.entry(window.iter().collect::<String>()).or_insert(0.0) += 1.0;
        }
    }
    counts.into_iter().collect()
}

fn vector_norm(grams: &[(String, f64)]) -> f64 {
    grams.iter().map(|(_, c)| c * c).sum::<f64>().sqrt()
}

/// Cosine over two sorted sparse vectors via a merge join, so the summation
/// order (and therefore the result) is deterministic.
fn cosine(a: &[(String, f64)], na: f64, b: &[(String, f64)], nb: f64) -> f64 {
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let mut dot = 0.0;
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                dot += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    dot / (na * nb)
}
