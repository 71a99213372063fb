use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use loosecut::{ClusterMap, RgbImage};

pub const DEFAULT_CAPACITY: usize = 64;

/// Parameters a cached cluster map was built with.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterParams {
    pub superpixel_count: usize,
    pub compactness: f64,
    pub n_clusters: usize,
    pub seed: u64,
}

impl ClusterParams {
    pub fn of(config: &loosecut::SolverConfig) -> Self {
        Self {
            superpixel_count: config.superpixel_count,
            compactness: config.compactness,
            n_clusters: config.n_clusters,
            seed: config.seed,
        }
    }
}

pub struct Session {
    pub image: RgbImage,
    pub bytes: Vec<u8>,
    pub clusters: ClusterMap,
    pub cluster_params: ClusterParams,
}

struct Entry {
    session: Arc<Session>,
    last_used: u64,
}

struct Inner {
    entries: HashMap<String, Entry>,
    clock: u64,
}

/// Bounded map from image id to session; the least recently used entry goes first.
pub struct SessionStore {
    capacity: usize,
    inner: Mutex<Inner>,
}

impl SessionStore {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "store capacity must be positive");
        Self {
            capacity,
            inner: Mutex::new(Inner {
                entries: HashMap::new(),
                clock: 0,
            }),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Stores `session` under a fresh id, evicting the least recently used entry if full.
    pub fn insert(&self, session: Session) -> String {
        let id = uuid::Uuid::new_v4().simple().to_string();
        let mut inner = self.inner.lock().unwrap();
        if inner.entries.len() >= self.capacity {
            let oldest = inner
                .entries
                .iter()
                .min_by_key(|(_, e)| e.last_used)
                .map(|(k, _)| k.clone());
            if let Some(k) = oldest {
                log::info!("evicting image {k}");
                inner.entries.remove(&k);
            }
        }
        inner.clock += 1;
        let last_used = inner.clock;
        inner.entries.insert(
            id.clone(),
            Entry {
                session: Arc::new(session),
                last_used,
            },
        );
        id
    }

    /// Looks up `id` and marks it as used.
    pub fn get(&self, id: &str) -> Option<Arc<Session>> {
        let mut inner = self.inner.lock().unwrap();
        inner.clock += 1;
        let now = inner.clock;
        inner.entries.get_mut(id).map(|e| {
            e.last_used = now;
            e.session.clone()
        })
    }
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_CAPACITY)
    }
}
