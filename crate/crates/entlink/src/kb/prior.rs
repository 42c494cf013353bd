//! Prior index: P(entity | surface form) estimated from hyperlink anchor
//! counts. Per surface, priors sum to 1 and entries are sorted by prior
//! descending with ties broken by entity id ascending.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{normalize_surface, KbError, KnowledgeBase};

const JSONL_FORMAT: &str = "entlink.prior-index";
const BINARY_MAGIC: &[u8; 4] = b"EPIX";
const VERSION: u32 = 1;

/// One anchor-count observation: `surface` linked to `entity_id` `count`
/// times in the source corpus.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnchorRow {
    pub surface: String,
    pub entity_id: String,
    pub count: u64,
}

impl AnchorRow {
    pub fn new(surface: impl Into<String>, entity_id: impl Into<String>, count: u64) -> Self {
        Self { surface: surface.into(), entity_id: entity_id.into(), count }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorEntry {
    pub entity_id: String,
    pub prior: f64,
}

/// Tallies accumulated while building an index; rows that cannot be used are
/// skipped, never fatal.
#[derive(Debug, Default, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PriorBuildStats {
    pub rows: u64,
    /// Rows whose (surface, entity) was already seen; their counts were summed.
    pub merged_duplicate_rows: u64,
    /// Rows naming an entity that does not resolve in the knowledge base.
    pub dropped_unresolved: u64,
    /// Rows whose surface normalizes to the empty string.
    pub skipped_empty_surface: u64,
    /// Rows with a zero count.
    pub skipped_zero_count: u64,
    /// TSV lines that did not parse (wrong arity or non-numeric count).
    pub malformed_lines: u64,
}

/// Surface form -> candidate entities with prior probabilities.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PriorIndex {
    table: BTreeMap<String, Vec<PriorEntry>>,
}

/// On-disk encodings for [`PriorIndex::save`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexFormat {
    Jsonl,
    Binary,
}

impl std::str::FromStr for IndexFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "binary" => Ok(Self::Binary),
            other => Err(format!("unknown index format `{other}` (expected jsonl or binary)")),
        }
    }
}

/// Builds the index from a stream of anchor rows. Counts for the same
/// (normalized surface, resolved entity) pair are summed; rows with
/// unresolvable entities, empty surfaces, or zero counts are skipped and
/// tallied. Priors are count sums divided by the per-surface total, so the
/// result is independent of row order.
pub fn build_prior_index(
    rows: impl IntoIterator<Item = AnchorRow>,
    kb: &KnowledgeBase,
) -> (PriorIndex, PriorBuildStats) {
    let mut stats = PriorBuildStats::default();
    let mut counts: BTreeMap<String, BTreeMap<String, u64>> = BTreeMap::new();
    for row in rows {
        stats.rows += 1;
        if row.count == 0 {
            stats.skipped_zero_count += 1;
            continue;
        }
        let surface = normalize_surface(&row.surface);
        if surface.is_empty() {
            stats.skipped_empty_surface += 1;
            continue;
        }
        let Some(record) = kb.resolve(&row.entity_id) else {
            stats.dropped_unresolved += 1;
            continue;
        };
        let slot = counts.entry(surface).or_default().entry(record.id.clone()).or_insert(0);
        if *slot > 0 {
            stats.merged_duplicate_rows += 1;
        }
        *slot += row.count;
    }

    let mut table = BTreeMap::new();
    for (surface, per_entity) in counts {
        let total: u64 = per_entity.values().sum();
        let mut entries: Vec<PriorEntry> = per_entity
            .into_iter()
            .map(|(entity_id, count)| PriorEntry { entity_id, prior: count as f64 / total as f64 })
            .collect();
        entries.sort_by(|a, b| {
            b.prior.total_cmp(&a.prior).then_with(|| a.entity_id.cmp(&b.entity_id))
        });
        table.insert(surface, entries);
    }
    (PriorIndex { table }, stats)
}

/// Builds the index straight from a TSV file of `surface \t entity \t count`
/// lines. Malformed lines are skipped and tallied; blank lines are ignored.
pub fn build_prior_index_from_tsv(
    path: impl AsRef<Path>,
    kb: &KnowledgeBase,
) -> Result<(PriorIndex, PriorBuildStats), KbError> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let mut malformed = 0u64;
    let mut rows = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|source| KbError::Io {
            path: path.display().to_string(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields.as_slice() {
            [surface, entity, count] => count
                .trim()
                .parse::<u64>()
                .ok()
                .map(|count| AnchorRow::new(*surface, *entity, count)),
            _ => None,
        };
        match parsed {
            Some(row) => rows.push(row),
            None => malformed += 1,
        }
    }
    let (index, mut stats) = build_prior_index(rows, kb);
    stats.malformed_lines = malformed;
    Ok((index, stats))
}

impl PriorIndex {
    /// Entities linked from `surface`, highest prior first. The surface is
    /// normalized before lookup; unknown surfaces yield an empty slice.
    pub fn lookup(&self, surface: &str) -> &[PriorEntry] {
        self.table.get(&normalize_surface(surface)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn surfaces(&self) -> usize {
        self.table.len()
    }

    pub fn distinct_entities(&self) -> usize {
        let mut ids: Vec<&str> = self
            .table
            .values()
            .flat_map(|entries| entries.iter().map(|e| e.entity_id.as_str()))
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[PriorEntry])> {
        self.table.iter().map(|(s, e)| (s.as_str(), e.as_slice()))
    }

    pub fn save(&self, path: impl AsRef<Path>, format: IndexFormat) -> Result<(), KbError> {
        let path = path.as_ref();
        let io_err = |source| KbError::Io { path: path.display().to_string(), source };
        let file = File::create(path).map_err(io_err)?;
        let mut out = BufWriter::new(file);
        match format {
            IndexFormat::Jsonl => {
                writeln!(out, "{}", serde_json::json!({"format": JSONL_FORMAT, "version": VERSION}))
                    .map_err(io_err)?;
                #[derive(Serialize)]
                struct Line<'a> {
                    surface: &'a str,
                    entries: &'a [PriorEntry],
                }
                for (surface, entries) in &self.table {
                    let line = serde_json::to_string(&Line { surface, entries })
                        .expect("prior entries serialize");
                    writeln!(out, "{line}").map_err(io_err)?;
                }
            }
            IndexFormat::Binary => {
                out.write_all(BINARY_MAGIC).map_err(io_err)?;
                out.write_all(&VERSION.to_le_bytes()).map_err(io_err)?;
                let bytes = bincode::serialize(&self.table).map_err(|e| KbError::IndexFormat {
                    path: path.display().to_string(),
                    msg: e.to_string(),
                })?;
                out.write_all(&bytes).map_err(io_err)?;
            }
        }
        out.flush().map_err(io_err)
    }

    /// Loads either on-disk encoding, sniffing the binary magic bytes first.
    /// A mismatched format version is rejected.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let label = path.display().to_string();
        let io_err = |source| KbError::Io { path: label.clone(), source };
        let bytes = std::fs::read(path).map_err(io_err)?;
        if bytes.starts_with(BINARY_MAGIC) {
            let rest = &bytes[BINARY_MAGIC.len()..];
            if rest.len() < 4 {
                return Err(KbError::IndexFormat { path: label, msg: "truncated header".into() });
            }
            let version = u32::from_le_bytes(rest[..4].try_into().expect("four bytes"));
            if version != VERSION {
                return Err(KbError::IndexFormat {
                    path: label,
                    msg: format!("unsupported version {version} (expected {VERSION})"),
                });
            }
            let table = bincode::deserialize(&rest[4..]).map_err(|e| KbError::IndexFormat {
                path: label,
                msg: e.to_string(),
            })?;
            return Ok(Self { table });
        }

        #[derive(Deserialize)]
        struct Header {
            format: String,
            version: u32,
        }
        #[derive(Deserialize)]
        struct Line {
            surface: String,
            entries: Vec<PriorEntry>,
        }
        let mut reader = BufReader::new(bytes.as_slice());
        let mut header_line = String::new();
        reader.read_line(&mut header_line).map_err(io_err)?;
        let header: Header = serde_json::from_str(&header_line).map_err(|e| KbError::IndexFormat {
            path: label.clone(),
            msg: format!("bad header: {e}"),
        })?;
        if header.format != JSONL_FORMAT || header.version != VERSION {
            return Err(KbError::IndexFormat {
                path: label,
                msg: format!(
                    "unsupported format `{}` version {} (expected `{JSONL_FORMAT}` version {VERSION})",
                    header.format, header.version
                ),
            });
        }
        let mut table = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line.map_err(io_err)?;
            if line.trim().is_empty() {
                continue;
            }
            let parsed: Line = serde_json::from_str(&line).map_err(|e| KbError::Parse {
                path: label.clone(),
                line: idx + 2,
                msg: e.to_string(),
            })?;
            table.insert(parsed.surface, parsed.entries);
        }
        Ok(Self { table })
    }
}
