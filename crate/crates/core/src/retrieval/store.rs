use std::collections::{BTreeSet, HashMap};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};

use super::{normalize_target, retrieve_knowledge, KnowledgeCache, KnowledgeDoc, RetrievalConfig, RetrievalError, SearchClient};
use crate::par::{self, Parallelism};

pub type Clock = Arc<dyn Fn() -> DateTime<Utc> + Send + Sync>;

/// Spaces out acquisitions so that no more than `rate_per_sec` pass per second.
#[derive(Debug)]
pub struct RateLimiter {
    interval: Option<Duration>,
    next_slot: Mutex<Option<Instant>>,
}

impl RateLimiter {
    pub fn new(rate_per_sec: f64) -> Self {
        let interval = (rate_per_sec.is_finite() && rate_per_sec > 0.0)
            .then(|| Duration::from_secs_f64(1.0 / rate_per_sec));
        Self {
            interval,
            next_slot: Mutex::new(None),
        }
    }

    pub fn acquire(&self) {
        let Some(interval) = self.interval else {
            return;
        };
        let wait = {
            let mut next = self.next_slot.lock().unwrap();
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Cache,
    Fetched,
}

/// Counts reported by [`KnowledgeStore::warm`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct WarmStats {
    pub unique_targets: usize,
    pub fetched: usize,
    pub cached: usize,
    pub empty: usize,
}

/// Cache-first knowledge lookup. At most one fetch is in flight per target
/// key, and a key already in the cache is never fetched again.
pub struct KnowledgeStore {
    cache: KnowledgeCache,
    cfg: RetrievalConfig,
    clock: Clock,
    limiter: RateLimiter,
    inflight: Mutex<HashMap<String, Arc<Mutex<()>>>>,
    fetches: AtomicUsize,
}

impl KnowledgeStore {
    pub fn new(cache: KnowledgeCache, cfg: RetrievalConfig) -> Self {
        Self {
            cache,
            limiter: RateLimiter::new(cfg.rate_per_sec),
            cfg,
            clock: Arc::new(Utc::now),
            inflight: Mutex::new(HashMap::new()),
            fetches: AtomicUsize::new(0),
        }
    }

    pub fn with_clock(mut self, clock: Clock) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &RetrievalConfig {
        &self.cfg
    }

    pub fn cache(&self) -> &KnowledgeCache {
        &self.cache
    }

    /// Fetches performed by this store since construction.
    pub fn fetch_count(&self) -> usize {
        self.fetches.load(Ordering::SeqCst)
    }

    pub fn get(&self, target: &str) -> Result<Option<KnowledgeDoc>, RetrievalError> {
        Ok(self.cache.get(&normalize_target(target)?))
    }

    pub fn get_or_fetch(
        &self,
        target: &str,
        client: &dyn SearchClient,
    ) -> Result<(KnowledgeDoc, Origin), RetrievalError> {
        let key = normalize_target(target)?;
        if let Some(doc) = self.cache.get(&key) {
            return Ok((doc, Origin::Cache));
        }
        let gate = self
            .inflight
            .lock()
            .unwrap()
            .entry(key.clone())
            .or_default()
            .clone();
        let _guard = gate.lock().unwrap();
        // another worker may have filled it while we waited on the gate
        if let Some(doc) = self.cache.get(&key) {
            return Ok((doc, Origin::Cache));
        }
        self.limiter.acquire();
        self.fetches.fetch_add(1, Ordering::SeqCst);
        let doc = retrieve_knowledge(target, client, &self.cfg, (self.clock)())?;
        self.cache.put(doc.clone())?;
        Ok((doc, Origin::Fetched))
    }

    /// Ensures every target's knowledge is cached. Distinct keys are fetched
    /// concurrently up to the configured parallelism.
    pub fn warm<S: AsRef<str> + Sync>(
        &self,
        targets: &[S],
        client: &dyn SearchClient,
        mode: Parallelism,
    ) -> Result<WarmStats, RetrievalError> {
        // first raw spelling per key, in a stable order
        let mut seen = BTreeSet::new();
        let mut unique = Vec::new();
        for target in targets {
            let key = normalize_target(target.as_ref())?;
            if seen.insert(key) {
                unique.push(target.as_ref().to_string());
            }
        }
        let outcomes = par::with_pool(mode, self.cfg.parallelism, || {
            par::try_map(mode, &unique, |t| self.get_or_fetch(t, client))
        })?;
        let mut stats = WarmStats {
            unique_targets: unique.len(),
            ..WarmStats::default()
        };
        for (doc, origin) in outcomes {
            match origin {
                Origin::Cache => stats.cached += 1,
                Origin::Fetched => stats.fetched += 1,
            }
            if doc.is_empty_marker() {
                stats.empty += 1;
            }
        }
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::{FixtureRecord, MockSearchClient, SearchHit};

    fn client() -> MockSearchClient {
        let rec = |q: &str, s: &str| FixtureRecord {
            query: q.into(),
            hits: vec![SearchHit {
                title: q.into(),
                snippet: s.into(),
                url: format!("https://{}.example", q.replace(' ', "-")),
            }],
        };
        MockSearchClient::from_records(vec![rec("vaccines", "V."), rec("gun control", "G.")])
    }

    fn store() -> KnowledgeStore {
        let cfg = RetrievalConfig {
            rate_per_sec: 0.0,
            ..RetrievalConfig::default()
        };
        KnowledgeStore::new(KnowledgeCache::in_memory(), cfg)
            .with_clock(Arc::new(|| DateTime::UNIX_EPOCH))
    }

    #[test]
    fn shared_target_fetches_once() {
        let store = store();
        let client = client();
        let (a, oa) = store.get_or_fetch("Vaccines", &client).unwrap();
        let (b, ob) = store.get_or_fetch("vaccines ", &client).unwrap();
        assert_eq!(a, b);
        assert_eq!((oa, ob), (Origin::Fetched, Origin::Cache));
        assert_eq!(client.calls(), 1);
        assert_eq!(store.cache().len(), 1);
    }

    #[test]
    fn warm_dedupes_and_counts() {
        let store = store();
        let client = client();
        let targets = ["Vaccines", "gun control", "GUN  control", "unknown topic", "vaccines"];
        let stats = store.warm(&targets, &client, Parallelism::Parallel).unwrap();
        assert_eq!(
            stats,
            WarmStats {
                unique_targets: 3,
                fetched: 3,
                cached: 0,
                empty: 1
            }
        );
        assert_eq!(client.calls(), 3);

        client.reset_calls();
        let again = store.warm(&targets, &client, Parallelism::Sequential).unwrap();
        assert_eq!(again.fetched, 0);
        assert_eq!(again.cached, 3);
        assert_eq!(client.calls(), 0);
    }

    #[test]
    fn concurrent_same_key_single_fetch() {
        let store = store();
        let client = client().with_latency(Duration::from_millis(20));
        std::thread::scope(|s| {
            for _ in 0..8 {
                s.spawn(|| store.get_or_fetch("vaccines", &client).unwrap());
            }
        });
        assert_eq!(client.calls(), 1);
        assert_eq!(store.fetch_count(), 1);
    }

    #[test]
    fn rate_limiter_spaces_calls() {
        let limiter = RateLimiter::new(50.0);
        let start = Instant::now();
        for _ in 0..4 {
            limiter.acquire();
        }
        // slots at 0, 20, 40, 60 ms
        assert!(start.elapsed() >= Duration::from_millis(55));
        let unlimited = RateLimiter::new(0.0);
        let start = Instant::now();
        for _ in 0..100 {
            unlimited.acquire();
        }
        assert!(start.elapsed() < Duration::from_millis(50));
    }
}
