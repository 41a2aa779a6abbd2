//! Shared plumbing for external model providers: record/replay modes,
//! call counters, and the on-disk response cache.
//!
//! Both the chat and embedding clients key cached responses by a content
//! hash of the full request, so a cache hit is exact: replaying a run that
//! was recorded earlier touches the network zero times and reproduces every
//! byte of provider output.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{Error, ErrorKind, Result};
use crate::util::sha256_hex;

/// How provider interactions are performed.
///
/// * `record` — use the cache when possible, call the live provider on a
///   miss, and persist the response for later replay.
/// * `replay` — serve exclusively from the cache; a miss is a
///   `CacheMissError`. No network traffic ever happens.
/// * `passthrough` — always call the live provider; the cache is neither
///   read nor written.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProviderMode {
    Record,
    #[default]
    Replay,
    Passthrough,
}

impl fmt::Display for ProviderMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProviderMode::Record => "record",
            ProviderMode::Replay => "replay",
            ProviderMode::Passthrough => "passthrough",
        })
    }
}

impl FromStr for ProviderMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "record" => Ok(ProviderMode::Record),
            "replay" => Ok(ProviderMode::Replay),
            "passthrough" => Ok(ProviderMode::Passthrough),
            other => Err(Error::config(format!(
                "unknown provider mode '{other}' (expected record, replay, or passthrough)"
            ))),
        }
    }
}

/// Thread-safe tally of provider activity, reported in run manifests.
#[derive(Debug, Default)]
pub struct CallCounters {
    live_calls: AtomicU64,
    cache_hits: AtomicU64,
    cache_writes: AtomicU64,
}

impl CallCounters {
    pub fn record_live_call(&self) {
        self.live_calls.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache_hit(&self) {
        self.cache_hits.fetch_add(1, Ordering::Relaxed);
    }

    pub fn record_cache_write(&self) {
        self.cache_writes.fetch_add(1, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        CounterSnapshot {
            live_calls: self.live_calls.load(Ordering::Relaxed),
            cache_hits: self.cache_hits.load(Ordering::Relaxed),
            cache_writes: self.cache_writes.load(Ordering::Relaxed),
        }
    }
}

/// Plain-data view of [`CallCounters`] for serialization.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CounterSnapshot {
    pub live_calls: u64,
    pub cache_hits: u64,
    pub cache_writes: u64,
}

impl std::ops::Add for CounterSnapshot {
    type Output = CounterSnapshot;

    fn add(self, rhs: CounterSnapshot) -> CounterSnapshot {
        CounterSnapshot {
            live_calls: self.live_calls + rhs.live_calls,
            cache_hits: self.cache_hits + rhs.cache_hits,
            cache_writes: self.cache_writes + rhs.cache_writes,
        }
    }
}

/// Content-addressed JSON cache under `<root>/<namespace>/<sha256>.json`.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    dir: PathBuf,
}

impl ResponseCache {
    /// `namespace` separates chat and embedding entries ("llm" / "embed").
    pub fn new(cache_dir: &Path, namespace: &str) -> Self {
        Self { dir: cache_dir.join(namespace) }
    }

    pub fn path_for(&self, key_material: &str) -> PathBuf {
        self.dir.join(format!("{}.json", sha256_hex(key_material.as_bytes())))
    }

    /// Returns the deserialized entry, or None when absent.
    pub fn read<T: DeserializeOwned>(&self, key_material: &str) -> Result<Option<T>> {
        let path = self.path_for(key_material);
        let bytes = match std::fs::read(&path) {
            Ok(b) => b,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(Error::io_at(&path, &e)),
        };
        let value = serde_json::from_slice(&bytes).map_err(|e| {
            Error::new(
                ErrorKind::Parse,
                format!("corrupt cache entry {}: {e}", path.display()),
            )
        })?;
        Ok(Some(value))
    }

    /// Writes atomically (temp file + rename) so concurrent readers never
    /// observe a partial entry.
    pub fn write<T: Serialize>(&self, key_material: &str, value: &T) -> Result<()> {
        std::fs::create_dir_all(&self.dir).map_err(|e| Error::io_at(&self.dir, &e))?;
        let path = self.path_for(key_material);
        let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
        let body = serde_json::to_vec_pretty(value)
            .map_err(|e| Error::internal(format!("cache serialization: {e}")))?;
        std::fs::write(&tmp, body).map_err(|e| Error::io_at(&tmp, &e))?;
        std::fs::rename(&tmp, &path).map_err(|e| Error::io_at(&path, &e))?;
        Ok(())
    }
}

/// Delay before retry `attempt` (1-based): 250ms, 500ms, 1s, capped at 2s.
pub fn backoff_delay(attempt: u32) -> std::time::Duration {
    std::time::Duration::from_millis((125u64 << attempt.min(5)).min(2000))
}
