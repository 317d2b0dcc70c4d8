#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use stancekit::retrieval::{MockSearchClient, SearchClient};
use stancekit::runner::SearchSetup;
use stancekit::RunConfig;

pub fn fixtures() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

/// The toy config with its runs root moved under `root`.
pub fn toy_config(root: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixtures().join("toy.toml")).expect("toy config loads");
    cfg.runs_root = root.to_path_buf();
    cfg
}

/// Mock search setup that keeps a typed handle on the client for call counting.
pub fn counted_search(cfg: &RunConfig) -> (SearchSetup, Arc<MockSearchClient>) {
    let client = Arc::new(
        MockSearchClient::from_file(cfg.search.fixtures.as_ref().expect("fixtures configured"))
            .expect("fixtures load"),
    );
    let setup = SearchSetup {
        client: client.clone() as Arc<dyn SearchClient>,
        clock: Arc::new(|| DateTime::<Utc>::UNIX_EPOCH),
    };
    (setup, client)
}
