// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeSet, HashMap};

use bytes::Bytes;
use serde::{Deserialize, Serialize};

use super::model::{BrokerScope, LayerId, NodeId};
use crate::clock::Nanos;

/// Topics starting with this prefix carry control-plane traffic.
pub const RESERVED_PREFIX: &str = "__";

pub fn is_reserved_topic(topic: &str) -> bool {
    topic.starts_with(RESERVED_PREFIX)
}

/// A routed data message.
///
/// Origin fields (`origin_node`, `origin_scope`, `sequence`, `sent_at`) are
/// stamped once by the producer and never rewritten by bridges. `hops` counts
/// bridge traversals.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MessageEnvelope {
    pub topic: String,
    pub payload: Bytes,
    pub origin_node: NodeId,
    /// Scope the producer published on; bridges use it for route selection.
    pub origin_scope: BrokerScope,
    pub sequence: u64,
    pub sent_at: Nanos,
    pub compressed: bool,
    pub uncompressed_len: usize,
    pub hops: u8,
}

impl MessageEnvelope {
    pub fn new(
        topic: impl Into<String>,
        payload: impl Into<Bytes>,
        origin_node: NodeId,
        origin_scope: BrokerScope,
        sequence: u64,
        sent_at: Nanos,
    ) -> Self {
        let payload = payload.into();
        Self {
            topic: topic.into(),
            uncompressed_len: payload.len(),
            payload,
            origin_node,
            origin_scope,
            sequence,
            sent_at,
            compressed: false,
            hops: 0,
        }
    }

    pub fn payload_len(&self) -> usize {
        self.payload.len()
    }

    pub fn origin_layer(&self) -> &LayerId {
        &self.origin_node.layer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowDirection {
    Advertise,
    Request,
}

/// An advertise or request record for one topic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowDeclaration {
    pub direction: FlowDirection,
    pub topic: String,
    /// Declaring service; several services on one node may declare the same topic.
    pub service: String,
    pub origin_node: NodeId,
    /// Scope the service produces on (advertise) or consumes from (request).
    pub origin_scope: BrokerScope,
    /// Hz; 0 means unknown. Only meaningful for advertisements.
    pub declared_rate: f64,
    /// Bytes; 0 means unknown. Only meaningful for advertisements.
    pub declared_max_size: u64,
    pub visited_layers: BTreeSet<LayerId>,
}

/// Identity of a declaration inside a flow table.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct DeclarationKey {
    pub direction: FlowDirection,
    pub topic: String,
    pub origin_node: NodeId,
    pub service: String,
    pub origin_scope: BrokerScope,
}

impl FlowDeclaration {
    pub fn advertise(
        topic: impl Into<String>,
        service: impl Into<String>,
        origin_scope: BrokerScope,
        origin_node: NodeId,
        rate: f64,
        max_size: u64,
    ) -> Self {
        let mut visited = BTreeSet::new();
        visited.insert(origin_node.layer.clone());
        Self {
            direction: FlowDirection::Advertise,
            topic: topic.into(),
            service: service.into(),
            origin_node,
            origin_scope,
            declared_rate: rate,
            declared_max_size: max_size,
            visited_layers: visited,
        }
    }

    pub fn request(
        topic: impl Into<String>,
        service: impl Into<String>,
        origin_scope: BrokerScope,
        origin_node: NodeId,
    ) -> Self {
        let mut decl = Self::advertise(topic, service, origin_scope, origin_node, 0.0, 0);
        decl.direction = FlowDirection::Request;
        decl
    }

    pub fn origin_layer(&self) -> &LayerId {
        &self.origin_node.layer
    }

    pub fn key(&self) -> DeclarationKey {
        DeclarationKey {
            direction: self.direction,
            topic: self.topic.clone(),
            origin_node: self.origin_node.clone(),
            service: self.service.clone(),
            origin_scope: self.origin_scope.clone(),
        }
    }

    /// Same declaration apart from the path it travelled.
    pub fn same_content(&self, other: &FlowDeclaration) -> bool {
        self.key() == other.key()
            && self.declared_rate == other.declared_rate
            && self.declared_max_size == other.declared_max_size
    }
}

/// Per-topic sequence counters owned by one producer.
#[derive(Debug, Default, Clone)]
pub struct ProducerSequencer {
    last: HashMap<String, u64>,
}

impl ProducerSequencer {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the previous sequence for `topic` plus one; the first call yields 1.
    pub fn next_sequence(&mut self, topic: &str) -> u64 {
        let slot = self.last.entry(topic.to_owned()).or_insert(0);
        *slot += 1;
        *slot
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::model::LayerKind;

    #[test]
    fn first_sequence_is_one() {
        let mut seq = ProducerSequencer::new();
        assert_eq!(seq.next_sequence("scan"), 1);
    }

    #[test]
    fn forty_second_call() {
        let mut seq = ProducerSequencer::new();
        for _ in 0..41 {
            seq.next_sequence("scan");
        }
        assert_eq!(seq.next_sequence("scan"), 42);
    }

    #[test]
    fn counters_are_per_topic() {
        let mut seq = ProducerSequencer::new();
        let got: Vec<u64> = ["scan", "imu", "scan"].iter().map(|t| seq.next_sequence(t)).collect();
        assert_eq!(got, vec![1, 1, 2]);
    }

    #[test]
    fn declaration_stamps_origin_layer() {
        let layer = LayerId::new("edge", LayerKind::Edge);
        let node = NodeId::new(layer.clone(), "n1");
        let decl = FlowDeclaration::request("t", "svc", BrokerScope::intra_node(&node), node);
        assert!(decl.visited_layers.contains(&layer));
    }

    #[test]
    fn reserved_prefix() {
        assert!(is_reserved_topic("__flow/advertise"));
        assert!(!is_reserved_topic("camera"));
    }
}
