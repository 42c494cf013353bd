//! Record/replay of chat completions as JSONL cassettes.
//!
//! Each line stores one request fingerprint together with the request and the
//! response text. Fingerprints are unique within a cassette: recording skips
//! requests it has already captured, and loading rejects duplicates.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{estimate_usage, fingerprint, ChatBackend, ChatRequest, ChatResponse, LlmError};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CassetteEntry {
    pub fp: String,
    pub request: ChatRequest,
    pub response: String,
}

/// Reads a cassette, rejecting malformed lines and duplicate fingerprints.
pub fn load_cassette(path: &Path) -> Result<Vec<CassetteEntry>, LlmError> {
    let file = File::open(path)?;
    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let entry: CassetteEntry = serde_json::from_str(&line).map_err(|err| {
            LlmError::CassetteCorrupt(format!("{}:{}: {err}", path.display(), idx + 1))
        })?;
        if !seen.insert(entry.fp.clone()) {
            return Err(LlmError::CassetteCorrupt(format!(
                "{}:{}: duplicate fingerprint {}",
                path.display(),
                idx + 1,
                entry.fp
            )));
        }
        entries.push(entry);
    }
    Ok(entries)
}

struct RecorderState {
    writer: BufWriter<File>,
    seen: HashSet<String>,
}

/// Passes calls through to the inner backend and appends each *new*
/// fingerprint's exchange to the cassette file. Repeats of an already
/// captured request are served but not re-written, and failures are never
/// recorded.
pub struct RecordingBackend<B> {
    inner: B,
    state: Mutex<RecorderState>,
}

impl<B: ChatBackend> RecordingBackend<B> {
    pub fn create(inner: B, path: &Path) -> Result<Self, LlmError> {
        let file = File::create(path)?;
        Ok(Self {
            inner,
            state: Mutex::new(RecorderState { writer: BufWriter::new(file), seen: HashSet::new() }),
        })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }
}

impl<B: ChatBackend> ChatBackend for RecordingBackend<B> {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let response = self.inner.complete(request)?;
        let fp = fingerprint(request);
        let mut state = self.state.lock().expect("recorder lock poisoned");
        if state.seen.insert(fp.clone()) {
            let entry =
                CassetteEntry { fp, request: request.clone(), response: response.content.clone() };
            let line = serde_json::to_string(&entry)
                .map_err(|err| LlmError::CassetteCorrupt(err.to_string()))?;
            writeln!(state.writer, "{line}")?;
            state.writer.flush()?;
        }
        Ok(response)
    }
}

/// Serves responses from a cassette by request fingerprint. In strict mode a
/// miss is an error; in permissive mode misses fall through to a live
/// backend.
pub struct ReplayBackend {
    responses: HashMap<String, String>,
    strict: bool,
    fallback: Option<Box<dyn ChatBackend>>,
}

impl ReplayBackend {
    pub fn strict(path: &Path) -> Result<Self, LlmError> {
        Ok(Self { responses: Self::index(path)?, strict: true, fallback: None })
    }

    pub fn permissive(path: &Path, fallback: Box<dyn ChatBackend>) -> Result<Self, LlmError> {
        Ok(Self { responses: Self::index(path)?, strict: false, fallback: Some(fallback) })
    }

    fn index(path: &Path) -> Result<HashMap<String, String>, LlmError> {
        Ok(load_cassette(path)?.into_iter().map(|e| (e.fp, e.response)).collect())
    }

    pub fn len(&self) -> usize {
        self.responses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.responses.is_empty()
    }
}

impl ChatBackend for ReplayBackend {
    fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
        let fp = fingerprint(request);
        if let Some(content) = self.responses.get(&fp) {
            return Ok(ChatResponse {
                content: content.clone(),
                finish_reason: "stop".to_string(),
                usage: estimate_usage(request, content),
            });
        }
        match (&self.fallback, self.strict) {
            (Some(fallback), false) => fallback.complete(request),
            _ => Err(LlmError::CassetteMiss(fp)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedBackend;

    fn request(user: &str) -> ChatRequest {
        ChatRequest::single_turn("m", Some("sys"), user, 0.0, 32)
    }

    #[test]
    fn records_each_distinct_fingerprint_once() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let backend = RecordingBackend::create(ScriptedBackend::always("A."), &path).unwrap();

        backend.complete(&request("one")).unwrap();
        backend.complete(&request("two")).unwrap();
        backend.complete(&request("one")).unwrap();

        let entries = load_cassette(&path).unwrap();
        assert_eq!(entries.len(), 2);
        assert_eq!(entries[0].fp, fingerprint(&request("one")));
        assert_eq!(entries[1].fp, fingerprint(&request("two")));
        assert!(entries.iter().all(|e| e.response == "A."));
    }

    #[test]
    fn strict_replay_round_trips_and_misses_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let script = ScriptedBackend::new()
            .respond_to(fingerprint(&request("alpha")), "first")
            .respond_to(fingerprint(&request("beta")), "second");
        let recorder = RecordingBackend::create(script, &path).unwrap();
        recorder.complete(&request("alpha")).unwrap();
        recorder.complete(&request("beta")).unwrap();

        let replay = ReplayBackend::strict(&path).unwrap();
        assert_eq!(replay.len(), 2);
        assert_eq!(replay.complete(&request("alpha")).unwrap().content, "first");
        assert_eq!(replay.complete(&request("beta")).unwrap().content, "second");
        let err = replay.complete(&request("gamma")).unwrap_err();
        assert!(matches!(err, LlmError::CassetteMiss(_)), "got {err}");
    }

    #[test]
    fn permissive_replay_prefers_cassette_over_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let recorder =
            RecordingBackend::create(ScriptedBackend::always("taped"), &path).unwrap();
        recorder.complete(&request("hit")).unwrap();

        let calls = std::sync::Arc::new(std::sync::atomic::AtomicU64::new(0));
        struct CountThrough(std::sync::Arc<std::sync::atomic::AtomicU64>, ScriptedBackend);
        impl ChatBackend for CountThrough {
            fn complete(&self, request: &ChatRequest) -> Result<ChatResponse, LlmError> {
                self.0.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                self.1.complete(request)
            }
        }
        let replay = ReplayBackend::permissive(
            &path,
            Box::new(CountThrough(std::sync::Arc::clone(&calls), ScriptedBackend::always("live"))),
        )
        .unwrap();

        assert_eq!(replay.complete(&request("hit")).unwrap().content, "taped");
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 0);
        assert_eq!(replay.complete(&request("miss")).unwrap().content, "live");
        assert_eq!(calls.load(std::sync::atomic::Ordering::SeqCst), 1);
    }

    #[test]
    fn load_rejects_garbage_lines() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        std::fs::write(&path, "not json at all\n").unwrap();
        let err = load_cassette(&path).unwrap_err();
        assert!(matches!(err, LlmError::CassetteCorrupt(msg) if msg.contains(":1:")));
    }

    #[test]
    fn load_rejects_duplicate_fingerprints() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("dupe.jsonl");
        let entry = CassetteEntry {
            fp: "abc".to_string(),
            request: request("x"),
            response: "y".to_string(),
        };
        let mut file = File::create(&path).unwrap();
        let line = serde_json::to_string(&entry).unwrap();
        writeln!(file, "{line}").unwrap();
        writeln!(file, "{line}").unwrap();
        let err = load_cassette(&path).unwrap_err();
        assert!(
            matches!(err, LlmError::CassetteCorrupt(ref msg) if msg.contains("duplicate fingerprint")),
            "got {err}"
        );
    }

    #[test]
    fn recording_skips_failures() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("tape.jsonl");
        let script = ScriptedBackend::new().respond_to(fingerprint(&request("good")), "ok");
        let recorder = RecordingBackend::create(script, &path).unwrap();
        assert!(recorder.complete(&request("bad")).is_err());
        recorder.complete(&request("good")).unwrap();
        let entries = load_cassette(&path).unwrap();
        assert_eq!(entries.len(), 1);
        assert_eq!(entries[0].response, "ok");
    }
}
