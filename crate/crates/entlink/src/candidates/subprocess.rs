//! Adapter for external retrievers that run as a subprocess: one JSON
//! request object on stdin, one `{"entity_id", "score"}` JSON object per
//! stdout line back.

use std::io::Write;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use super::{Retriever, RetrieverError};

/// Runs `program args...` once per retrieval. The child receives
/// `{"surface", "context", "n"}` on stdin and must print up to `n` JSON
/// lines of `{"entity_id", "score"}`. Results are re-sorted by score
/// descending (ties by entity id) so a sloppy child still satisfies the
/// retriever contract; determinism is the child's responsibility.
#[derive(Debug, Clone)]
pub struct SubprocessRetriever {
    program: String,
    args: Vec<String>,
}

#[derive(Serialize)]
struct Request<'a> {
    surface: &'a str,
    context: &'a str,
    n: usize,
}

#[derive(Deserialize)]
struct ResponseLine {
    entity_id: String,
    score: f64,
}

impl SubprocessRetriever {
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        Self { program: program.into(), args }
    }
}

impl Retriever for SubprocessRetriever {
    fn retrieve(
        &self,
        surface: &str,
        context: &str,
        n: usize,
    ) -> Result<Vec<(String, f64)>, RetrieverError> {
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| RetrieverError::Backend(format!("spawning {}: {e}", self.program)))?;
        let request = serde_json::to_string(&Request { surface, context, n })
            .expect("request serializes");
        child
            .stdin
            .take()
            .expect("stdin piped")
            .write_all(request.as_bytes())
            .map_err(|e| RetrieverError::Backend(format!("writing request: {e}")))?;
        let output = child
            .wait_with_output()
            .map_err(|e| RetrieverError::Backend(format!("waiting for child: {e}")))?;
        if !output.status.success() {
            let stderr = String::from_utf8_lossy(&output.stderr);
            return Err(RetrieverError::Backend(format!(
                "{} exited with {}: {}",
                self.program,
                output.status,
                stderr.trim()
            )));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let mut hits = Vec::new();
        for (idx, line) in stdout.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: ResponseLine = serde_json::from_str(line).map_err(|e| {
                RetrieverError::Backend(format!("bad output line {}: {e}", idx + 1))
            })?;
            hits.push((parsed.entity_id, parsed.score));
        }
        hits.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        hits.truncate(n);
        Ok(hits)
    }
}
