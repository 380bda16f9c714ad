// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use parking_lot::Mutex;

use crate::clock::{Nanos, NANOS_PER_SEC};
use crate::topology::NodeId;

pub const DEFAULT_REFRESH: Nanos = NANOS_PER_SEC;
pub const TTL_FACTOR: u64 = 3;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeartbeatEntry {
    pub service: String,
    pub node: NodeId,
    pub refreshed_at: Nanos,
    pub ttl: Nanos,
}

impl HeartbeatEntry {
    pub fn expired(&self, now: Nanos) -> bool {
        now.saturating_sub(self.refreshed_at) > self.ttl
    }
}

/// Layer-local liveness table: services refresh a TTL entry periodically and
/// are considered dead once it lapses.
#[derive(Debug)]
pub struct HeartbeatRegistry {
    ttl: Nanos,
    entries: Mutex<BTreeMap<(NodeId, String), HeartbeatEntry>>,
}

impl Default for HeartbeatRegistry {
    fn default() -> Self {
        Self::new(TTL_FACTOR * DEFAULT_REFRESH)
    }
}

impl HeartbeatRegistry {
    pub fn new(ttl: Nanos) -> Self {
        Self { ttl, entries: Mutex::new(BTreeMap::new()) }
    }

    pub fn ttl(&self) -> Nanos {
        self.ttl
    }

    pub fn refresh(&self, service: &str, node: &NodeId, now: Nanos) {
        let mut entries = self.entries.lock();
        let entry = entries.entry((node.clone(), service.to_owned())).or_insert_with(|| HeartbeatEntry {
            service: service.to_owned(),
            node: node.clone(),
            refreshed_at: now,
            ttl: self.ttl,
        });
        entry.refreshed_at = entry.refreshed_at.max(now);
    }

    /// Live check; an expired entry is removed on observation.
    pub fn is_live(&self, service: &str, node: &NodeId, now: Nanos) -> bool {
        let key = (node.clone(), service.to_owned());
        let mut entries = self.entries.lock();
        match entries.get(&key) {
            Some(e) if e.expired(now) => {
                entries.remove(&key);
                false
            }
            Some(_) => true,
            None => false,
        }
    }

    pub fn remove(&self, service: &str, node: &NodeId) -> bool {
        self.entries.lock().remove(&(node.clone(), service.to_owned())).is_some()
    }

    /// Removes and returns every expired entry.
    pub fn expire(&self, now: Nanos) -> Vec<HeartbeatEntry> {
        let mut entries = self.entries.lock();
        let dead: Vec<(NodeId, String)> =
            entries.iter().filter(|(_, e)| e.expired(now)).map(|(k, _)| k.clone()).collect();
        dead.iter().filter_map(|k| entries.remove(k)).collect()
    }

    pub fn entries(&self) -> Vec<HeartbeatEntry> {
        self.entries.lock().values().cloned().collect()
    }
}
