//! Episodes available under a data directory, with a bounded cache of parsed
//! traces.

use std::collections::BTreeMap;
use std::fs;
use std::num::NonZeroUsize;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use lru::LruCache;
use memscope::trace::{parse_episode, EpisodeTrace, Outcome, TraceError};
use serde::Serialize;
use thiserror::Error;

/// Parsed episodes kept in memory by default.
pub const DEFAULT_CACHE_SIZE: usize = 8;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("cannot read data directory {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Trace {
        path: PathBuf,
        #[source]
        source: TraceError,
    },
    #[error("episode id `{id}` appears in both {} and {}", first.display(), second.display())]
    DuplicateId {
        id: String,
        first: PathBuf,
        second: PathBuf,
    },
    #[error("unknown episode `{0}`")]
    UnknownEpisode(String),
}

/// One row of the episode listing.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeSummary {
    pub id: String,
    pub env_name: String,
    pub steps: usize,
    pub outcome: Outcome,
}

impl EpisodeSummary {
    pub fn of(episode: &EpisodeTrace) -> Self {
        EpisodeSummary {
            id: episode.id.clone(),
            env_name: episode.env_name.clone(),
            steps: episode.len(),
            outcome: episode.outcome,
        }
    }
}

#[derive(Debug)]
struct Entry {
    path: PathBuf,
    summary: EpisodeSummary,
}

/// Immutable index of `episode_*.json` files plus an LRU cache of parsed
/// traces. Every file is validated once when the catalog is opened.
#[derive(Debug)]
pub struct DataCatalog {
    root: PathBuf,
    entries: BTreeMap<String, Entry>,
    cache: Mutex<LruCache<String, Arc<EpisodeTrace>>>,
}

impl DataCatalog {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CatalogError> {
        Self::open_with_cache(root, DEFAULT_CACHE_SIZE)
    }

    pub fn open_with_cache(root: impl Into<PathBuf>, cache_size: usize) -> Result<Self, CatalogError> {
        let root = root.into();
        let io = |source| CatalogError::Io {
            path: root.clone(),
            source,
        };
        let mut files: Vec<PathBuf> = fs::read_dir(&root)
            .map_err(io)?
            .filter_map(|entry| entry.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.file_name()
                        .and_then(|n| n.to_str())
                        .is_some_and(|n| n.starts_with("episode_") && n.ends_with(".json"))
            })
            .collect();
        files.sort();

        let mut entries: BTreeMap<String, Entry> = BTreeMap::new();
        for path in files {
            let episode = load(&path)?;
            let summary = EpisodeSummary::of(&episode);
            if let Some(existing) = entries.get(&summary.id) {
                return Err(CatalogError::DuplicateId {
                    id: summary.id,
                    first: existing.path.clone(),
                    second: path,
                });
            }
            log::debug!("indexed episode {} from {}", summary.id, path.display());
            entries.insert(summary.id.clone(), Entry { path, summary });
        }
        let capacity = NonZeroUsize::new(cache_size.max(1)).expect("non-zero");
        Ok(DataCatalog {
            root,
            entries,
            cache: Mutex::new(LruCache::new(capacity)),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn summaries(&self) -> Vec<EpisodeSummary> {
        self.entries.values().map(|e| e.summary.clone()).collect()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.entries.contains_key(id)
    }

    /// Number of parsed episodes currently held in memory.
    pub fn cached(&self) -> usize {
        self.cache.lock().expect("cache lock").len()
    }

    pub fn cache_capacity(&self) -> usize {
        self.cache.lock().expect("cache lock").cap().get()
    }

    /// Returns the parsed episode, loading it on a cache miss.
    pub fn get(&self, id: &str) -> Result<Arc<EpisodeTrace>, CatalogError> {
        let entry = self
            .entries
            .get(id)
            .ok_or_else(|| CatalogError::UnknownEpisode(id.to_owned()))?;
        if let Some(hit) = self.cache.lock().expect("cache lock").get(id) {
            return Ok(hit.clone());
        }
        let episode = Arc::new(load(&entry.path)?);
        self.cache
            .lock()
            .expect("cache lock")
            .put(id.to_owned(), episode.clone());
        Ok(episode)
    }
}

fn load(path: &Path) -> Result<EpisodeTrace, CatalogError> {
    let bytes = fs::read(path).map_err(|source| CatalogError::Io {
        path: path.to_owned(),
        source,
    })?;
    parse_episode(&bytes).map_err(|source| CatalogError::Trace {
        path: path.to_owned(),
        source,
    })
}
