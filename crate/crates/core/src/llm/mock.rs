use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use serde::{Deserialize, Serialize};

use super::{ChatRequest, Transport, TransportError};

/// One line of a mock script.
///
/// `run_index` may be omitted to answer every run of that (paper, dimension).
/// A `status` entry makes the mock fail with that HTTP status instead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockEntry {
    pub paper_id: String,
    pub dimension_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_index: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
}

type Key = (String, String, Option<u32>);

/// Deterministic provider replaying a script keyed by
/// (paper_id, dimension_id, run_index). Reentrant.
#[derive(Debug, Default)]
pub struct MockProvider {
    script: BTreeMap<Key, MockEntry>,
    calls: AtomicUsize,
}

impl MockProvider {
    pub fn from_entries(entries: impl IntoIterator<Item = MockEntry>) -> Self {
        let script = entries
            .into_iter()
            .map(|e| ((e.paper_id.clone(), e.dimension_id.clone(), e.run_index), e))
            .collect();
        Self {
            script,
            calls: AtomicUsize::new(0),
        }
    }

    /// Parses a JSON-lines script; blank lines and `#` comments are skipped.
    pub fn from_jsonl(text: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let entry: MockEntry =
                serde_json::from_str(line).map_err(|e| format!("mock script line {}: {e}", n + 1))?;
            if entry.response.is_none() && entry.status.is_none() {
                return Err(format!("mock script line {}: needs `response` or `status`", n + 1));
            }
            entries.push(entry);
        }
        Ok(Self::from_entries(entries))
    }

    pub fn from_file(path: &Path) -> Result<Self, String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_jsonl(&text)
    }

    /// Number of `send` calls served so far, including failures.
    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn lookup(&self, paper_id: &str, dimension_id: &str, run_index: u32) -> Option<&MockEntry> {
        let exact = (paper_id.to_string(), dimension_id.to_string(), Some(run_index));
        self.script
            .get(&exact)
            .or_else(|| self.script.get(&(exact.0, exact.1, None)))
    }
}

impl Transport for MockProvider {
    fn send(&self, request: &ChatRequest<'_>) -> Result<String, TransportError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let ctx = request.context;
        let entry = self.lookup(&ctx.paper_id, &ctx.dimension_id, ctx.run_index).ok_or_else(|| {
            TransportError::NoScript(format!("({}, {}, {})", ctx.paper_id, ctx.dimension_id, ctx.run_index))
        })?;
        match (&entry.status, &entry.response) {
            (Some(code), _) => Err(TransportError::Status {
                code: *code,
                body: entry.response.clone().unwrap_or_default(),
            }),
            (None, Some(text)) => Ok(text.clone()),
            (None, None) => unreachable!("validated on load"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::{Gateway, ProviderConfig, RequestContext};
    use std::sync::Arc;

    const SCRIPT: &str = r#"
# paper P7 is a pricing-model paper
{"paper_id":"P7","dimension_id":"pricing_model","response":"Yes"}
{"paper_id":"P7","dimension_id":"underlying","run_index":2,"response":"{Stocks: no}"}
{"paper_id":"P8","dimension_id":"pricing_model","status":429}
"#;

    fn ctx(paper: &str, dim: &str, run: u32) -> RequestContext {
        RequestContext {
            paper_id: paper.into(),
            dimension_id: dim.into(),
            run_index: run,
        }
    }

    #[test]
    fn scripted_answer_is_returned_verbatim() {
        let mock = Arc::new(MockProvider::from_jsonl(SCRIPT).unwrap());
        let gw = Gateway::new(ProviderConfig::mock("mock"), mock.clone());
        for run in 1..=3 {
            let resp = gw.complete("prompt", &ctx("P7", "pricing_model", run)).unwrap();
            assert_eq!(resp.text, "Yes");
            assert_eq!(resp.model_name, "mock");
        }
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn exact_run_wins_over_wildcard_and_missing_is_an_error() {
        let mock = MockProvider::from_jsonl(SCRIPT).unwrap();
        assert_eq!(mock.lookup("P7", "underlying", 2).unwrap().response.as_deref(), Some("{Stocks: no}"));
        assert!(mock.lookup("P7", "underlying", 1).is_none());
    }

    #[test]
    fn scripted_status_fails() {
        let mock = Arc::new(MockProvider::from_jsonl(SCRIPT).unwrap());
        let mut cfg = ProviderConfig::mock("mock");
        cfg.max_retries = 2;
        cfg.backoff_base_ms = 0;
        let gw = Gateway::new(cfg, mock.clone());
        let err = gw.complete("prompt", &ctx("P8", "pricing_model", 1)).unwrap_err();
        assert_eq!(err, crate::llm::GatewayError::RateLimited { attempts: 3 });
        assert_eq!(mock.calls(), 3);
    }

    #[test]
    fn bad_script_lines_are_reported() {
        assert!(MockProvider::from_jsonl("{\"paper_id\":\"a\",\"dimension_id\":\"b\"}").is_err());
        assert!(MockProvider::from_jsonl("not json").is_err());
    }
}
