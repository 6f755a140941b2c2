use std::collections::HashMap;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use clickseg_core::{BinaryMask, CfrConfig, SegmentationSession, Segmenter};

/// One interactive session and the segmenter instance that serves it.
pub struct SessionEntry {
    pub session: SegmentationSession,
    pub segmenter: Box<dyn Segmenter>,
    pub cfr: CfrConfig,
    /// Only used to report live IoU.
    pub gt: Option<BinaryMask>,
}

pub type SharedEntry = Arc<tokio::sync::Mutex<SessionEntry>>;

struct Slot {
    entry: SharedEntry,
    last_active: Instant,
}

/// Session id to session map with idle expiry. The map lock is held only
/// for lookups; each session has its own async lock for compute.
pub struct SessionStore {
    ttl: Duration,
    slots: Mutex<HashMap<String, Slot>>,
}

impl SessionStore {
    pub fn new(ttl: Duration) -> Self {
        Self {
            ttl,
            slots: Mutex::new(HashMap::new()),
        }
    }

    pub fn insert(&self, entry: SessionEntry) -> String {
        let mut slots = self.slots.lock().expect("session store lock");
        loop {
            let id = uuid::Uuid::new_v4().to_string();
            if !slots.contains_key(&id) {
                slots.insert(
                    id.clone(),
                    Slot {
                        entry: Arc::new(tokio::sync::Mutex::new(entry)),
                        last_active: Instant::now(),
                    },
                );
                return id;
            }
        }
    }

    /// Returns the session and marks it active. Expired sessions are gone.
    pub fn get(&self, id: &str) -> Option<SharedEntry> {
        let mut slots = self.slots.lock().expect("session store lock");
        let now = Instant::now();
        let slot = slots.get_mut(id)?;
        if now.duration_since(slot.last_active) > self.ttl {
            slots.remove(id);
            return None;
        }
        slot.last_active = now;
        Some(slot.entry.clone())
    }

    pub fn remove(&self, id: &str) -> bool {
        self.slots.lock().expect("session store lock").remove(id).is_some()
    }

    /// Drops every session idle for longer than the TTL; returns how many.
    pub fn sweep(&self) -> usize {
        let mut slots = self.slots.lock().expect("session store lock");
        let before = slots.len();
        let now = Instant::now();
        slots.retain(|_, s| now.duration_since(s.last_active) <= self.ttl);
        before - slots.len()
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("session store lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
