use std::collections::HashMap;
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{normalize_target, RetrievalError};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("transport: {0}")]
    Transport(String),
    #[error("bad response: {0}")]
    BadResponse(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    pub snippet: String,
    pub url: String,
}

/// A web search backend returning ranked hits.
pub trait SearchClient: Send + Sync {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError>;
}

/// One line of a fixture file: a query and its ranked hits.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureRecord {
    pub query: String,
    pub hits: Vec<SearchHit>,
}

pub fn load_fixtures(path: &Path) -> Result<Vec<FixtureRecord>, RetrievalError> {
    let io = |source| RetrievalError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::open(path).map_err(io)?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| RetrievalError::CorruptFixture {
            path: path.to_path_buf(),
            line: idx + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

/// Fixture-backed client. Queries are matched after target normalization;
/// unknown queries return no hits. Every call is counted.
#[derive(Debug, Default)]
pub struct MockSearchClient {
    table: HashMap<String, Vec<SearchHit>>,
    calls: AtomicUsize,
    queries: Mutex<Vec<String>>,
    failures: Mutex<HashMap<String, usize>>,
    latency: Option<Duration>,
}

impl MockSearchClient {
    pub fn from_records(records: Vec<FixtureRecord>) -> Self {
        let table = records
            .into_iter()
            .filter_map(|r| normalize_target(&r.query).ok().map(|q| (q, r.hits)))
            .collect();
        Self {
            table,
            ..Self::default()
        }
    }

    pub fn from_file(path: &Path) -> Result<Self, RetrievalError> {
        Ok(Self::from_records(load_fixtures(path)?))
    }

    /// The next `count` searches for `query` fail with a transport error.
    pub fn with_failures(self, query: &str, count: usize) -> Self {
        let key = normalize_target(query).unwrap_or_default();
        self.failures.lock().unwrap().insert(key, count);
        self
    }

    pub fn with_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn queries(&self) -> Vec<String> {
        self.queries.lock().unwrap().clone()
    }

    pub fn reset_calls(&self) {
        self.calls.store(0, Ordering::SeqCst);
        self.queries.lock().unwrap().clear();
    }
}

impl SearchClient for MockSearchClient {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.queries.lock().unwrap().push(query.to_string());
        if let Some(latency) = self.latency {
            std::thread::sleep(latency);
        }
        let key = normalize_target(query).unwrap_or_default();
        {
            let mut failures = self.failures.lock().unwrap();
            if let Some(left) = failures.get_mut(&key) {
                if *left > 0 {
                    *left -= 1;
                    return Err(SearchError::Transport(format!("injected failure for `{key}`")));
                }
            }
        }
        Ok(self
            .table
            .get(&key)
            .map(|hits| hits.iter().take(top_k).cloned().collect())
            .unwrap_or_default())
    }
}

/// Google results through the Serper API, via the system `curl` binary.
#[derive(Debug, Clone)]
pub struct SerperClient {
    api_key: String,
    endpoint: String,
    timeout: Duration,
}

#[derive(Deserialize)]
struct SerperResponse {
    #[serde(default)]
    organic: Vec<SerperItem>,
}

#[derive(Deserialize)]
struct SerperItem {
    #[serde(default)]
    title: String,
    #[serde(default)]
    link: String,
    #[serde(default)]
    snippet: String,
}

impl SerperClient {
    pub const DEFAULT_ENDPOINT: &'static str = "https://google.serper.dev/search";

    pub fn new(api_key: String) -> Self {
        Self {
            api_key,
            endpoint: Self::DEFAULT_ENDPOINT.to_string(),
            timeout: Duration::from_secs(20),
        }
    }

    pub fn with_endpoint(mut self, endpoint: impl Into<String>) -> Self {
        self.endpoint = endpoint.into();
        self
    }

    fn parse(body: &[u8], top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let resp: SerperResponse =
            serde_json::from_slice(body).map_err(|e| SearchError::BadResponse(e.to_string()))?;
        Ok(resp
            .organic
            .into_iter()
            .take(top_k)
            .map(|item| SearchHit {
                title: item.title,
                snippet: item.snippet,
                url: item.link,
            })
            .collect())
    }
}

impl SearchClient for SerperClient {
    fn search(&self, query: &str, top_k: usize) -> Result<Vec<SearchHit>, SearchError> {
        let body = serde_json::json!({ "q": query, "num": top_k }).to_string();
        let output = Command::new("curl")
            .args(["-sS", "--fail", "-X", "POST"])
            .arg("--max-time")
            .arg(self.timeout.as_secs().to_string())
            .arg("-H")
            .arg(format!("X-API-KEY: {}", self.api_key))
            .args(["-H", "Content-Type: application/json", "--data-binary", "@-"])
            .arg(&self.endpoint)
            .stdin(std::process::Stdio::piped())
            .stdout(std::process::Stdio::piped())
            .stderr(std::process::Stdio::piped())
            .spawn()
            .and_then(|mut child| {
                use std::io::Write;
                child
                    .stdin
                    .take()
                    .expect("piped stdin")
                    .write_all(body.as_bytes())?;
                child.wait_with_output()
            })
            .map_err(|e| SearchError::Transport(format!("curl: {e}")))?;
        if !output.status.success() {
            return Err(SearchError::Transport(
                String::from_utf8_lossy(&output.stderr).trim().to_string(),
            ));
        }
        Self::parse(&output.stdout, top_k)
    }
}
