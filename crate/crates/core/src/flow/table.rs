// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use crate::clock::Nanos;
use crate::topology::{DeclarationKey, FlowDeclaration, FlowDirection, NodeId};

#[derive(Debug, Clone)]
struct Entry {
    decl: FlowDeclaration,
    last_seen: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Upsert {
    Inserted,
    Updated,
    /// Already stored with identical content; only the lease was refreshed.
    Refreshed,
}

/// Every advertise/request declaration an engine knows about, keyed by
/// (direction, topic, origin node, service, origin scope).
#[derive(Debug, Clone, Default)]
pub struct FlowTable {
    entries: BTreeMap<DeclarationKey, Entry>,
}

impl FlowTable {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn upsert(&mut self, decl: FlowDeclaration, now: Nanos) -> Upsert {
        let key = decl.key();
        match self.entries.get_mut(&key) {
            Some(e) if e.decl.same_content(&decl) => {
                e.last_seen = now;
                Upsert::Refreshed
            }
            Some(e) => {
                e.decl = decl;
                e.last_seen = now;
                Upsert::Updated
            }
            None => {
                self.entries.insert(key, Entry { decl, last_seen: now });
                Upsert::Inserted
            }
        }
    }

    pub fn remove(&mut self, key: &DeclarationKey) -> Option<FlowDeclaration> {
        self.entries.remove(key).map(|e| e.decl)
    }

    pub fn contains(&self, key: &DeclarationKey) -> bool {
        self.entries.contains_key(key)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn declarations(&self) -> impl Iterator<Item = &FlowDeclaration> {
        self.entries.values().map(|e| &e.decl)
    }

    pub fn advertises<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a FlowDeclaration> {
        self.of(FlowDirection::Advertise, topic)
    }

    pub fn requests<'a>(&'a self, topic: &'a str) -> impl Iterator<Item = &'a FlowDeclaration> {
        self.of(FlowDirection::Request, topic)
    }

    fn of<'a>(
        &'a self,
        direction: FlowDirection,
        topic: &'a str,
    ) -> impl Iterator<Item = &'a FlowDeclaration> {
        self.entries
            .values()
            .map(|e| &e.decl)
            .filter(move |d| d.direction == direction && d.topic == topic)
    }

    pub fn topics(&self) -> Vec<String> {
        let mut out: Vec<String> = self.entries.keys().map(|k| k.topic.clone()).collect();
        out.dedup();
        out.sort();
        out.dedup();
        out
    }

    /// Declarations made by `service` on `node`.
    pub fn by_service(&self, service: &str, node: &NodeId) -> Vec<FlowDeclaration> {
        self.entries
            .values()
            .filter(|e| e.decl.service == service && &e.decl.origin_node == node)
            .map(|e| e.decl.clone())
            .collect()
    }

    /// Drops entries not refreshed since `cutoff`, returning them.
    pub fn expire_older_than(&mut self, cutoff: Nanos) -> Vec<FlowDeclaration> {
        let stale: Vec<DeclarationKey> = self
            .entries
            .iter()
            .filter(|(_, e)| e.last_seen < cutoff)
            .map(|(k, _)| k.clone())
            .collect();
        stale.iter().filter_map(|k| self.remove(k)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{BrokerScope, LayerId, LayerKind};

    fn decl(topic: &str, service: &str) -> FlowDeclaration {
        let node = NodeId::new(LayerId::new("edge", LayerKind::Edge), "n1");
        FlowDeclaration::advertise(topic, service, BrokerScope::intra_node(&node), node, 10.0, 100)
    }

    #[test]
    fn reannounce_is_idempotent() {
        let mut t = FlowTable::new();
        assert_eq!(t.upsert(decl("a", "s"), 0), Upsert::Inserted);
        let mut again = decl("a", "s");
        again.visited_layers.insert(LayerId::new("fog", LayerKind::Fog));
        assert_eq!(t.upsert(again, 5), Upsert::Refreshed);
        assert_eq!(t.len(), 1);
    }

    #[test]
    fn changed_metadata_updates() {
        let mut t = FlowTable::new();
        t.upsert(decl("a", "s"), 0);
        let mut d = decl("a", "s");
        d.declared_rate = 20.0;
        assert_eq!(t.upsert(d, 1), Upsert::Updated);
        assert_eq!(t.advertises("a").next().unwrap().declared_rate, 20.0);
    }

    #[test]
    fn two_services_are_two_entries() {
        let mut t = FlowTable::new();
        t.upsert(decl("a", "s1"), 0);
        t.upsert(decl("a", "s2"), 0);
        assert_eq!(t.advertises("a").count(), 2);
        assert_eq!(t.requests("a").count(), 0);
        assert_eq!(t.topics(), vec!["a".to_string()]);
    }

    #[test]
    fn expiry_removes_stale_only() {
        let mut t = FlowTable::new();
        t.upsert(decl("a", "s1"), 0);
        t.upsert(decl("b", "s1"), 10);
        let gone = t.expire_older_than(5);
        assert_eq!(gone.len(), 1);
        assert_eq!(gone[0].topic, "a");
        assert_eq!(t.len(), 1);
    }
}
