//! Shared world for CLI tests: a 12-entity knowledge base, anchor counts,
//! and a six-document corpus with hand-checkable outcomes.
#![allow(dead_code)]

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use entlink::candidates::{Document, Mention};
use entlink::eval::BenchmarkDataset;
use entlink::kb::{build_prior_index_from_tsv, IndexFormat, KnowledgeBase, PriorIndex};

pub fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

pub fn entlink_cmd() -> Command {
    Command::new(env!("CARGO_BIN_EXE_entlink"))
}

/// `(doc id, text, [(surface, nth occurrence, gold entity)])`.
///
/// With the fixture anchors, a scripted backend that always answers "A."
/// (the top candidate) gets 6 of the 12 clean mentions right. The wrong
/// six: d1's second "George Bush" (prior prefers the son), d2's "Paris"
/// (prior prefers the city), d3's "Dubya" (its ten anchored candidates
/// exclude the gold, so the list is full and wrong), d4's two Jordan
/// mentions (prior prefers the athlete), and d4's "Windy City" (no prior,
/// and retrieval ranks the Jordans above Chicago because the query carries
/// the surrounding context — Chicago still makes the list, at rank 3).
/// d5 has an out-of-knowledge-base gold and d6 duplicates d1's text;
/// preprocessing drops both.
pub const CORPUS: &[(&str, &str, &[(&str, usize, &str)])] = &[
    (
        "d1",
        "George Bush addressed the nation from Texas. Years earlier George Bush had led the coalition.",
        &[
            ("George Bush", 1, "George_W._Bush"),
            ("Texas", 1, "Texas"),
            ("George Bush", 2, "George_H._W._Bush"),
        ],
    ),
    (
        "d2",
        "Obama praised the myth of Paris while strolling along the Seine.",
        &[
            ("Obama", 1, "Barack_Obama"),
            ("Paris", 1, "Paris_(mythology)"),
            ("Seine", 1, "Seine"),
        ],
    ),
    (
        "d3",
        "Dubya spoke about the Gulf War at a rally in Chicago.",
        &[
            ("Dubya", 1, "George_W._Bush"),
            ("Gulf War", 1, "Gulf_War"),
            ("Chicago", 1, "Chicago"),
        ],
    ),
    (
        "d4",
        "Michael Jordan gave a lecture on learning machines in the Windy City, far from Jordan.",
        &[
            ("Michael Jordan", 1, "Michael_I._Jordan"),
            ("Windy City", 1, "Chicago"),
            ("Jordan", 2, "Michael_I._Jordan"),
        ],
    ),
    ("d5", "Atlantis remains undiscovered.", &[("Atlantis", 1, "Atlantis")]),
    (
        "d6",
        "George Bush addressed the nation from Texas. Years earlier George Bush had led the coalition.",
        &[
            ("George Bush", 1, "George_W._Bush"),
            ("Texas", 1, "Texas"),
            ("George Bush", 2, "George_H._W._Bush"),
        ],
    ),
];

fn nth_offset(text: &str, needle: &str, nth: usize) -> usize {
    assert!(text.is_ascii(), "corpus text must be ASCII so byte offsets are char offsets");
    let mut from = 0;
    for _ in 1..nth {
        let pos = text[from..].find(needle).expect("needle occurrence") + from;
        from = pos + needle.len();
    }
    text[from..].find(needle).expect("needle occurrence") + from
}

pub fn corpus_documents(spec: &[(&str, &str, &[(&str, usize, &str)])]) -> Vec<Document> {
    spec.iter()
        .map(|(id, text, mentions)| Document {
            id: id.to_string(),
            text: text.to_string(),
            mentions: mentions
                .iter()
                .map(|(surface, nth, gold)| {
                    let start = nth_offset(text, surface, *nth);
                    Mention {
                        doc_id: id.to_string(),
                        start,
                        end: start + surface.len(),
                        surface: surface.to_string(),
                        gold_entity: Some(gold.to_string()),
                    }
                })
                .collect(),
        })
        .collect()
}

/// All six documents, including the two that preprocessing removes.
pub fn full_dataset() -> BenchmarkDataset {
    BenchmarkDataset { name: "toy-benchmark".to_string(), documents: corpus_documents(CORPUS) }
}

/// The four documents that survive preprocessing (12 mentions).
pub fn clean_dataset() -> BenchmarkDataset {
    BenchmarkDataset {
        name: "toy-benchmark".to_string(),
        documents: corpus_documents(&CORPUS[..4]),
    }
}

pub fn dataset_json(dataset: &BenchmarkDataset) -> String {
    let documents: Vec<serde_json::Value> = dataset
        .documents
        .iter()
        .map(|doc| {
            serde_json::json!({
                "id": doc.id,
                "text": doc.text,
                "mentions": doc.mentions.iter().map(|m| serde_json::json!({
                    "start": m.start,
                    "end": m.end,
                    "gold": m.gold_entity,
                })).collect::<Vec<_>>(),
            })
        })
        .collect();
    format!(
        "{}\n",
        serde_json::json!({ "name": dataset.name, "documents": documents })
    )
}

pub fn load_kb() -> KnowledgeBase {
    KnowledgeBase::load_jsonl(fixture("kb.jsonl")).expect("fixture kb")
}

pub fn load_index(kb: &KnowledgeBase) -> PriorIndex {
    let (index, stats) = build_prior_index_from_tsv(fixture("anchors.tsv"), kb).expect("anchors");
    assert_eq!(stats.dropped_unresolved, 0, "fixture anchors must all resolve");
    index
}

pub struct World {
    pub kb_path: PathBuf,
    pub index_path: PathBuf,
    pub corpus_path: PathBuf,
    pub clean_corpus_path: PathBuf,
    pub config_path: PathBuf,
}

/// Materializes the world under `dir`: a binary prior index, the corpus in
/// both raw and preprocessed form, and a run config pointing at them.
pub fn setup_world(dir: &Path) -> World {
    let kb_path = fixture("kb.jsonl");
    let kb = load_kb();
    let index = load_index(&kb);
    let index_path = dir.join("index.bin");
    index.save(&index_path, IndexFormat::Binary).expect("save index");

    let corpus_path = dir.join("corpus.json");
    fs::write(&corpus_path, dataset_json(&full_dataset())).expect("write corpus");
    let clean_corpus_path = dir.join("corpus_clean.json");
    fs::write(&clean_corpus_path, dataset_json(&clean_dataset())).expect("write clean corpus");

    let config_path = dir.join("run.toml");
    write_config(&config_path, &kb_path, &index_path, "");
    World { kb_path, index_path, corpus_path, clean_corpus_path, config_path }
}

/// Writes a run config; `llm_extra` is appended inside the `[llm]` section
/// (start it with a section header to leave `[llm]`).
pub fn write_config(path: &Path, kb: &Path, index: &Path, llm_extra: &str) {
    let text = format!(
        "kb_path = {kb:?}\nindex_path = {index:?}\n\n[llm]\nparallelism = 2\n{llm_extra}",
        kb = kb.display().to_string(),
        index = index.display().to_string(),
    );
    fs::write(path, text).expect("write config");
}
