//! Instruction-tuning dataset construction and export.
//!
//! Each gold-labelled mention becomes one record: the fixed task
//! description, a rendered selection prompt as input, and the canonical gold
//! entity id as output. When the gold entity is missing from the generated
//! candidate list it is appended as an extra option so every record is
//! answerable. Records export as chat-format JSONL plus a manifest holding
//! the file hash and tuning hyperparameters.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::candidates::{generate_candidates, CandidateGenConfig, Document, Retriever};
use crate::kb::{normalize_entity_name, KnowledgeBase, PriorIndex};
use crate::llm::ChatMessage;
use crate::prompting::{
    render_free_selection_prompt, render_selection_prompt, PromptError, PromptLayout, TemplateSet,
};

#[derive(Debug, Error)]
pub enum InstructError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("refusing to export an empty dataset")]
    EmptyDataset,
}

fn io_err(path: &Path, source: std::io::Error) -> InstructError {
    InstructError::Io { path: path.display().to_string(), source }
}

/// Where a record's mention came from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub dataset: String,
    pub doc_id: String,
    pub start: usize,
    pub end: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
    pub provenance: Provenance,
}

/// Sidecar written next to an exported dataset.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineTuneManifest {
    pub base_model: String,
    pub epochs: u32,
    pub record_count: usize,
    /// Hex SHA-256 of the exported JSONL bytes.
    pub sha256: String,
    /// RFC 3339 creation timestamp.
    pub created_at: String,
}

#[derive(Debug, Clone)]
pub struct InstructOptions {
    pub gen: CandidateGenConfig,
    pub layout: PromptLayout,
    /// When false the prompt omits the candidate list and the model is asked
    /// for a free-form entity name.
    pub include_candidates: bool,
}

impl Default for InstructOptions {
    fn default() -> Self {
        Self {
            gen: CandidateGenConfig::default(),
            layout: PromptLayout::default(),
            include_candidates: true,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct InstructBuildStats {
    pub records: usize,
    /// Mentions dropped because they had no gold label or the label was not
    /// in the knowledge base.
    pub skipped_gold_missing: usize,
    pub retriever_failures: usize,
}

/// Builds one instruction record per resolvable gold mention, in document
/// order and by span within each document.
pub fn build_instruction_dataset(
    dataset_name: &str,
    documents: &[Document],
    kb: &KnowledgeBase,
    index: &PriorIndex,
    retriever: Option<&dyn Retriever>,
    templates: &TemplateSet,
    opts: &InstructOptions,
) -> Result<(Vec<InstructionRecord>, InstructBuildStats), InstructError> {
    let mut records = Vec::new();
    let mut stats = InstructBuildStats::default();
    for doc in documents {
        let mut order: Vec<usize> = (0..doc.mentions.len()).collect();
        order.sort_by_key(|&i| (doc.mentions[i].start, doc.mentions[i].end));
        for idx in order {
            let mention = &doc.mentions[idx];
            let Some(gold) = mention.gold_entity.as_deref().and_then(|g| kb.resolve(g)) else {
                stats.skipped_gold_missing += 1;
                continue;
            };
            let gold_id = gold.id.clone();

            let input = if opts.include_candidates {
                let generated = generate_candidates(mention, doc, index, retriever, &opts.gen);
                if generated.retriever_error.is_some() {
                    stats.retriever_failures += 1;
                }
                let mut ids: Vec<String> =
                    generated.set.candidates.iter().map(|c| c.entity_id.clone()).collect();
                let gold_norm = normalize_entity_name(&gold_id);
                if !ids.iter().any(|id| normalize_entity_name(id) == gold_norm) {
                    ids.push(gold_id.clone());
                }
                render_selection_prompt(doc, mention, None, &ids, kb, opts.layout, templates)?
                    .text
            } else {
                render_free_selection_prompt(doc, mention, None, opts.layout, templates)?
            };

            records.push(InstructionRecord {
                instruction: templates.instruction.clone(),
                input,
                output: gold_id,
                provenance: Provenance {
                    dataset: dataset_name.to_string(),
                    doc_id: doc.id.clone(),
                    start: mention.start,
                    end: mention.end,
                },
            });
        }
    }
    stats.records = records.len();
    Ok((records, stats))
}

#[derive(Debug, Serialize, Deserialize)]
struct ChatLine {
    messages: Vec<ChatMessage>,
}

/// Path of the manifest written next to an export:
/// `train.jsonl` -> `train.jsonl.manifest.json`.
pub fn manifest_path(export_path: &Path) -> PathBuf {
    let mut name = export_path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    export_path.with_file_name(name)
}

/// Writes records as chat-format JSONL (system = instruction, user = input,
/// assistant = output), then writes a manifest sidecar with the file's
/// SHA-256 and returns it.
pub fn export_chat_jsonl(
    records: &[InstructionRecord],
    path: &Path,
    base_model: &str,
    epochs: u32,
) -> Result<FineTuneManifest, InstructError> {
    if records.is_empty() {
        return Err(InstructError::EmptyDataset);
    }
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = BufWriter::new(file);
    for record in records {
        let line = ChatLine {
            messages: vec![
                ChatMessage::system(&record.instruction),
                ChatMessage::user(&record.input),
                ChatMessage::assistant(&record.output),
            ],
        };
        let json = serde_json::to_string(&line).map_err(|e| InstructError::Parse {
            path: path.display().to_string(),
            line: 0,
            msg: e.to_string(),
        })?;
        writeln!(writer, "{json}").map_err(|e| io_err(path, e))?;
    }
    writer.flush().map_err(|e| io_err(path, e))?;

    let manifest = FineTuneManifest {
        base_model: base_model.to_string(),
        epochs,
        record_count: records.len(),
        sha256: sha256_file(path)?,
        created_at: chrono::Utc::now().to_rfc3339(),
    };
    let sidecar = manifest_path(path);
    let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    std::fs::write(&sidecar, json).map_err(|e| io_err(&sidecar, e))?;
    Ok(manifest)
}

fn sha256_file(path: &Path) -> Result<String, InstructError> {
    let mut file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 8192];
    loop {
        let n = file.read(&mut buf).map_err(|e| io_err(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

/// Reads an exported chat JSONL file back into message transcripts.
pub fn read_chat_jsonl(path: &Path) -> Result<Vec<Vec<ChatMessage>>, InstructError> {
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut transcripts = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| io_err(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: ChatLine = serde_json::from_str(&line).map_err(|e| InstructError::Parse {
            path: path.display().to_string(),
            line: idx + 1,
            msg: e.to_string(),
        })?;
        transcripts.push(parsed.messages);
    }
    Ok(transcripts)
}
