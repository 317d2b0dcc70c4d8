//! External knowledge per target: search-client abstraction, snippet
//! cleaning and truncation, a persistent line-delimited cache, and a store
//! that deduplicates fetches by normalized target.

mod cache;
mod client;
mod store;

use std::path::PathBuf;
use std::sync::OnceLock;
use std::time::Duration;

use chrono::{DateTime, Utc};
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::KnowledgeCache;
pub use client::{load_fixtures, FixtureRecord, MockSearchClient, SearchClient, SearchError, SearchHit, SerperClient};
pub use store::{Clock, KnowledgeStore, Origin, RateLimiter, WarmStats};

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("target is empty")]
    EmptyTarget,
    #[error("search for `{target_key}` failed after {attempts} attempt(s): {message}")]
    Network {
        target_key: String,
        attempts: u32,
        message: String,
    },
    #[error("{path}: line {line}: corrupt cache record: {message}")]
    CorruptCache {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: line {line}: corrupt fixture record: {message}")]
    CorruptFixture {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Retrieved background text for one normalized target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeDoc {
    pub target_key: String,
    pub text: String,
    pub sources: Vec<String>,
    pub fetched_at: DateTime<Utc>,
    pub truncated: bool,
}

impl KnowledgeDoc {
    pub fn empty_marker(target_key: String, fetched_at: DateTime<Utc>) -> Self {
        Self {
            target_key,
            text: String::new(),
            sources: Vec::new(),
            fetched_at,
            truncated: false,
        }
    }

    pub fn is_empty_marker(&self) -> bool {
        self.text.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub top_k: usize,
    /// Maximum knowledge length in characters.
    pub max_knowledge_len: usize,
    pub parallelism: usize,
    /// Requests per second across all workers; 0 disables limiting.
    pub rate_per_sec: f64,
    /// Total attempts per query, including the first.
    pub retries: u32,
    pub backoff_ms: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub query_suffix: Option<String>,
    /// Knowledge cache file; defaults to `<runs_root>/knowledge_cache.jsonl`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cache: Option<PathBuf>,
    /// Fixture table for the mock search client.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixtures: Option<PathBuf>,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        Self {
            top_k: 5,
            max_knowledge_len: 1000,
            parallelism: 4,
            rate_per_sec: 5.0,
            retries: 3,
            backoff_ms: 250,
            query_suffix: None,
            cache: None,
            fixtures: None,
        }
    }
}

impl RetrievalConfig {
    pub fn query_for(&self, target: &str) -> String {
        match self.query_suffix.as_deref().map(str::trim) {
            Some(suffix) if !suffix.is_empty() => format!("{} {suffix}", target.trim()),
            _ => target.trim().to_string(),
        }
    }
}

/// Lowercase, collapse internal whitespace runs to one space, trim.
pub fn normalize_target(target: &str) -> Result<String, RetrievalError> {
    let key = target
        .split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ");
    if key.is_empty() {
        return Err(RetrievalError::EmptyTarget);
    }
    Ok(key)
}

fn tag_pattern() -> &'static Regex {
    static TAGS: OnceLock<Regex> = OnceLock::new();
    TAGS.get_or_init(|| Regex::new(r"</?\s*([A-Za-z0-9]*)[^>]*>").expect("valid tag regex"))
}

fn is_inline_tag(name: &str) -> bool {
    const INLINE: [&str; 10] = ["a", "b", "i", "em", "strong", "span", "u", "mark", "sub", "sup"];
    INLINE.iter().any(|t| t.eq_ignore_ascii_case(name))
}

/// Drops HTML tags, decodes the common entities and collapses whitespace.
pub fn strip_markup(snippet: &str) -> String {
    let without_tags = tag_pattern().replace_all(snippet, |caps: &regex::Captures| {
        if is_inline_tag(&caps[1]) { "" } else { " " }
    });
    let decoded = without_tags
        .replace("&nbsp;", " ")
        .replace("&lt;", "<")
        .replace("&gt;", ">")
        .replace("&quot;", "\"")
        .replace("&#39;", "'")
        .replace("&apos;", "'")
        .replace("&amp;", "&");
    decoded.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cuts `text` to at most `max_chars` characters, preferring the last
/// whitespace at or before the limit. Returns the kept prefix and whether
/// anything was dropped.
pub fn truncate_at_whitespace(text: &str, max_chars: usize) -> (&str, bool) {
    let Some((limit_byte, _)) = text.char_indices().nth(max_chars) else {
        return (text, false);
    };
    // Window covers characters 0..=max_chars so a space sitting exactly at the
    // limit counts as a cut point.
    let limit_char_len = text[limit_byte..].chars().next().map_or(0, char::len_utf8);
    let window = &text[..limit_byte + limit_char_len];
    let cut = window
        .char_indices()
        .rev()
        .find(|(_, c)| c.is_whitespace())
        .map_or(limit_byte, |(i, _)| i);
    (text[..cut].trim_end(), true)
}

/// Builds the knowledge document for a target from a single query. Transient
/// client failures are retried with exponential backoff.
pub fn retrieve_knowledge(
    target: &str,
    client: &dyn SearchClient,
    cfg: &RetrievalConfig,
    now: DateTime<Utc>,
) -> Result<KnowledgeDoc, RetrievalError> {
    let target_key = normalize_target(target)?;
    let query = cfg.query_for(target);
    let attempts = cfg.retries.max(1);
    let mut last_error = String::new();
    let mut hits = None;
    for attempt in 1..=attempts {
        match client.search(&query, cfg.top_k.max(1)) {
            Ok(found) => {
                hits = Some(found);
                break;
            }
            Err(err) => {
                log::warn!("search `{query}` attempt {attempt}/{attempts} failed: {err}");
                last_error = err.to_string();
                if attempt < attempts && cfg.backoff_ms > 0 {
                    let delay = cfg.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                    std::thread::sleep(Duration::from_millis(delay));
                }
            }
        }
    }
    let Some(hits) = hits else {
        return Err(RetrievalError::Network {
            target_key,
            attempts,
            message: last_error,
        });
    };
    let hits: Vec<_> = hits.into_iter().take(cfg.top_k.max(1)).collect();
    let joined = hits
        .iter()
        .map(|h| strip_markup(&h.snippet))
        .filter(|s| !s.is_empty())
        .collect::<Vec<_>>()
        .join(" ");
    if joined.is_empty() {
        return Ok(KnowledgeDoc::empty_marker(target_key, now));
    }
    let (text, truncated) = truncate_at_whitespace(&joined, cfg.max_knowledge_len);
    Ok(KnowledgeDoc {
        target_key,
        text: text.to_string(),
        sources: hits.into_iter().map(|h| h.url).collect(),
        fetched_at: now,
        truncated,
    })
}
