//! Benchmark datasets, scoring, and error attribution.

pub mod ablation;
pub mod attribution;
pub mod metrics;

pub use attribution::{attribute_errors, ErrorRow, ErrorSource};
pub use metrics::{
    read_predictions, score_ed, score_qa, write_errors_csv, write_predictions, EvalReport,
    MentionOutcome, MentionRow, Prediction, PredictionSource, ScoreOptions,
};

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;

use crate::candidates::{char_slice, Document, Mention};
use crate::kb::KnowledgeBase;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("{path}:{line}: {msg}")]
    Parse { path: String, line: usize, msg: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("mention span {start}..{end} is out of range in document {doc_id}")]
    SpanOutOfRange { doc_id: String, start: usize, end: usize },
    #[error("duplicate document id `{0}`")]
    DuplicateDocId(String),
    #[error("no prediction for mention {doc_id} {start}..{end}")]
    MissingPrediction { doc_id: String, start: usize, end: usize },
    #[error("duplicate prediction for mention {doc_id} {start}..{end}")]
    DuplicatePrediction { doc_id: String, start: usize, end: usize },
    #[error("prediction references unknown mention {doc_id} {start}..{end}")]
    UnknownMention { doc_id: String, start: usize, end: usize },
    #[error("cannot score an empty set")]
    EmptySet,
    #[error("prediction count {got} does not match gold count {expected}")]
    LengthMismatch { got: usize, expected: usize },
}

fn io_err(path: &Path, source: std::io::Error) -> EvalError {
    EvalError::Io { path: path.display().to_string(), source }
}

/// A named collection of documents with gold-labelled mentions.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct BenchmarkDataset {
    pub name: String,
    pub documents: Vec<Document>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
pub struct DatasetStats {
    pub documents: usize,
    pub mentions: usize,
}

impl BenchmarkDataset {
    pub fn stats(&self) -> DatasetStats {
        DatasetStats {
            documents: self.documents.len(),
            mentions: self.documents.iter().map(|d| d.mentions.len()).sum(),
        }
    }

    pub fn iter_mentions(&self) -> impl Iterator<Item = (&Document, &Mention)> {
        self.documents.iter().flat_map(|d| d.mentions.iter().map(move |m| (d, m)))
    }

    pub fn validate(&self) -> Result<(), EvalError> {
        let mut seen = HashSet::new();
        for doc in &self.documents {
            if !seen.insert(doc.id.as_str()) {
                return Err(EvalError::DuplicateDocId(doc.id.clone()));
            }
            doc.validate().map_err(|err| EvalError::Parse {
                path: self.name.clone(),
                line: 0,
                msg: err.to_string(),
            })?;
        }
        Ok(())
    }
}

/// On-disk dataset encodings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    /// One JSON object: `{"name", "documents": [{"id", "text", "mentions":
    /// [{"start", "end", "gold"?}]}]}` with character offsets.
    NativeJson,
    /// Line-oriented TSV: `D<TAB>doc_id<TAB>text` declares a document
    /// (text with `\t`, `\n`, `\\` escapes) and `M<TAB>doc_id<TAB>start
    /// <TAB>end<TAB>gold` adds a mention (empty gold means unlabelled).
    TsvSpans,
}

impl FromStr for DatasetFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "native-json" => Ok(Self::NativeJson),
            "tsv-spans" => Ok(Self::TsvSpans),
            other => Err(format!("unknown dataset format `{other}` (expected native-json or tsv-spans)")),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::NativeJson => "native-json",
            Self::TsvSpans => "tsv-spans",
        })
    }
}

#[derive(Debug, Deserialize)]
struct RawDataset {
    name: String,
    documents: Vec<RawDocument>,
}

#[derive(Debug, Deserialize)]
struct RawDocument {
    id: String,
    text: String,
    #[serde(default)]
    mentions: Vec<RawMention>,
}

#[derive(Debug, Deserialize)]
struct RawMention {
    start: usize,
    end: usize,
    #[serde(default)]
    gold: Option<String>,
}

fn build_mention(
    doc_id: &str,
    text: &str,
    start: usize,
    end: usize,
    gold: Option<String>,
) -> Result<Mention, EvalError> {
    let span_err = || EvalError::SpanOutOfRange { doc_id: doc_id.to_string(), start, end };
    if start >= end {
        return Err(span_err());
    }
    let surface = char_slice(text, start, end).ok_or_else(span_err)?;
    Ok(Mention {
        doc_id: doc_id.to_string(),
        start,
        end,
        surface: surface.to_string(),
        gold_entity: gold.filter(|g| !g.is_empty()),
    })
}

pub fn load_dataset(path: &Path, format: DatasetFormat) -> Result<BenchmarkDataset, EvalError> {
    let dataset = match format {
        DatasetFormat::NativeJson => load_native_json(path)?,
        DatasetFormat::TsvSpans => load_tsv_spans(path)?,
    };
    dataset.validate()?;
    Ok(dataset)
}

fn load_native_json(path: &Path) -> Result<BenchmarkDataset, EvalError> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let raw: RawDataset = serde_json::from_str(&text).map_err(|e| EvalError::Parse {
        path: path.display().to_string(),
        line: e.line(),
        msg: e.to_string(),
    })?;
    let mut documents = Vec::with_capacity(raw.documents.len());
    for raw_doc in raw.documents {
        let mut mentions = Vec::with_capacity(raw_doc.mentions.len());
        for m in raw_doc.mentions {
            mentions.push(build_mention(&raw_doc.id, &raw_doc.text, m.start, m.end, m.gold)?);
        }
        documents.push(Document { id: raw_doc.id, text: raw_doc.text, mentions });
    }
    Ok(BenchmarkDataset { name: raw.name, documents })
}

fn unescape_tsv(field: &str, path: &Path, line: usize) -> Result<String, EvalError> {
    let mut out = String::with_capacity(field.len());
    let mut chars = field.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('\\') => out.push('\\'),
            other => {
                return Err(EvalError::Parse {
                    path: path.display().to_string(),
                    line,
                    msg: format!("invalid escape `\\{}`", other.map(String::from).unwrap_or_default()),
                })
            }
        }
    }
    Ok(out)
}

pub(crate) fn escape_tsv(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            other => out.push(other),
        }
    }
    out
}

fn load_tsv_spans(path: &Path) -> Result<BenchmarkDataset, EvalError> {
    let parse_err = |line: usize, msg: String| EvalError::Parse {
        path: path.display().to_string(),
        line,
        msg,
    };
    let file = File::open(path).map_err(|e| io_err(path, e))?;
    let mut documents: Vec<Document> = Vec::new();
    let mut doc_index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| io_err(path, e))?;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        match fields[0] {
            "D" => {
                if fields.len() != 3 {
                    return Err(parse_err(line_no, format!("D row has {} fields, expected 3", fields.len())));
                }
                let id = fields[1].to_string();
                if id.is_empty() {
                    return Err(parse_err(line_no, "empty document id".to_string()));
                }
                if doc_index.contains_key(&id) {
                    return Err(EvalError::DuplicateDocId(id));
                }
                let text = unescape_tsv(fields[2], path, line_no)?;
                doc_index.insert(id.clone(), documents.len());
                documents.push(Document { id, text, mentions: Vec::new() });
            }
            "M" => {
                if fields.len() != 5 {
                    return Err(parse_err(line_no, format!("M row has {} fields, expected 5", fields.len())));
                }
                let doc_id = fields[1];
                let Some(&doc_pos) = doc_index.get(doc_id) else {
                    return Err(parse_err(line_no, format!("mention references undeclared document `{doc_id}`")));
                };
                let start: usize = fields[2]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid start offset `{}`", fields[2])))?;
                let end: usize = fields[3]
                    .parse()
                    .map_err(|_| parse_err(line_no, format!("invalid end offset `{}`", fields[3])))?;
                let gold = if fields[4].is_empty() { None } else { Some(fields[4].to_string()) };
                let doc = &mut documents[doc_pos];
                let mention = build_mention(&doc.id, &doc.text, start, end, gold)?;
                doc.mentions.push(mention);
            }
            other => {
                return Err(parse_err(line_no, format!("unknown row tag `{other}` (expected D or M)")));
            }
        }
    }
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("dataset").to_string();
    Ok(BenchmarkDataset { name, documents })
}

/// Writes a dataset in the TSV spans encoding (the inverse of loading it).
pub fn save_tsv_spans(dataset: &BenchmarkDataset, path: &Path) -> Result<(), EvalError> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut writer = std::io::BufWriter::new(file);
    for doc in &dataset.documents {
        writeln!(writer, "D\t{}\t{}", doc.id, escape_tsv(&doc.text)).map_err(|e| io_err(path, e))?;
        for m in &doc.mentions {
            writeln!(
                writer,
                "M\t{}\t{}\t{}\t{}",
                doc.id,
                m.start,
                m.end,
                m.gold_entity.as_deref().unwrap_or_default()
            )
            .map_err(|e| io_err(path, e))?;
        }
    }
    writer.flush().map_err(|e| io_err(path, e))
}

/// What [`preprocess`] removed.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct PreprocessReport {
    pub dropped_duplicate_documents: usize,
    pub dropped_out_of_kb_mentions: usize,
    pub dropped_empty_documents: usize,
}

/// Standard evaluation filtering: drops byte-identical duplicate documents
/// (keeping the first), drops mentions whose gold entity is absent from the
/// knowledge base or unlabelled, then drops documents left with no mentions.
/// Running it twice changes nothing.
pub fn preprocess(
    dataset: &BenchmarkDataset,
    kb: &KnowledgeBase,
) -> (BenchmarkDataset, PreprocessReport) {
    let mut report = PreprocessReport::default();
    let mut seen_texts = HashSet::new();
    let mut documents = Vec::with_capacity(dataset.documents.len());
    for doc in &dataset.documents {
        if !seen_texts.insert(doc.text.as_str()) {
            report.dropped_duplicate_documents += 1;
            continue;
        }
        let kept: Vec<Mention> = doc
            .mentions
            .iter()
            .filter(|m| m.gold_entity.as_deref().is_some_and(|g| kb.resolve(g).is_some()))
            .cloned()
            .collect();
        report.dropped_out_of_kb_mentions += doc.mentions.len() - kept.len();
        if kept.is_empty() {
            report.dropped_empty_documents += 1;
            continue;
        }
        documents.push(Document { id: doc.id.clone(), text: doc.text.clone(), mentions: kept });
    }
    (BenchmarkDataset { name: dataset.name.clone(), documents }, report)
}
