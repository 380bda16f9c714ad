// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeSet;
use std::sync::Arc;

use bytes::Bytes;
use parking_lot::{Mutex, RwLock};

use super::bridges::{BridgeKey, BridgeSpec, Origin};
use super::dedupe::DedupeWindow;
use crate::broker::BrokerEndpoint;
use crate::monitor::{labels, MetricsRegistry};
use crate::ratelimit::{compress, RateLimiter};
use crate::topology::{is_reserved_topic, MessageEnvelope, NodeId, ScopeKind};

pub const DELIVERED: &str = "flow_delivered_total";
pub const LIMITER_DROPS: &str = "flow_limiter_drops_total";
pub const DEDUPE_DROPS: &str = "flow_dedupe_drops_total";
pub const LOOP_DETECTIONS: &str = "flow_loop_detections_total";
pub const CORRUPT_DROPS: &str = "flow_corrupt_drops_total";
pub const COMPRESSED_BYTES_SAVED: &str = "flow_compression_saved_bytes_total";

/// Envelopes that crossed this many bridges are assumed to be looping.
pub const DEFAULT_MAX_HOPS: u8 = 4;

/// An installed bridge: picks messages up on the source scope and republishes
/// them, origin fields untouched, on the destination scope.
pub struct Bridge {
    key: BridgeKey,
    host: NodeId,
    origins: RwLock<BTreeSet<Origin>>,
    dest: Arc<BrokerEndpoint>,
    limiter: Option<Arc<RateLimiter>>,
    dedupe: Mutex<DedupeWindow>,
    metrics: Arc<MetricsRegistry>,
    max_hops: u8,
}

impl std::fmt::Debug for Bridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bridge").field("key", &self.key).field("host", &self.host).finish()
    }
}

impl Bridge {
    pub fn new(
        spec: &BridgeSpec,
        dest: Arc<BrokerEndpoint>,
        limiter: Option<Arc<RateLimiter>>,
        metrics: Arc<MetricsRegistry>,
        max_hops: u8,
    ) -> Self {
        Self {
            key: spec.key(),
            host: spec.host.clone(),
            origins: RwLock::new(spec.origins.clone()),
            dest,
            limiter,
            dedupe: Mutex::new(DedupeWindow::default()),
            metrics,
            max_hops,
        }
    }

    pub fn key(&self) -> &BridgeKey {
        &self.key
    }

    pub fn spec(&self) -> BridgeSpec {
        BridgeSpec {
            topic: self.key.topic.clone(),
            source_scope: self.key.source_scope.clone(),
            dest_scope: self.key.dest_scope.clone(),
            host: self.host.clone(),
            origins: self.origins.read().clone(),
        }
    }

    pub fn set_origins(&self, origins: BTreeSet<Origin>) {
        *self.origins.write() = origins;
    }

    /// Publish-time filter: only messages from this bridge's origins are
    /// offered to it.
    pub fn accepts(&self, env: &MessageEnvelope) -> bool {
        self.origins
            .read()
            .iter()
            .any(|o| o.scope == env.origin_scope && o.node == env.origin_node)
    }

    /// Control and monitoring topics stay out of the data-plane accounting;
    /// loop detections are always counted.
    fn count(&self, name: &str, topic: &str) {
        if name != LOOP_DETECTIONS && is_reserved_topic(topic) {
            return;
        }
        let node = self.host.to_string();
        self.metrics.inc(name, labels(&[("topic", topic), ("node", &node)]));
    }

    /// Forwards `env` unless it is a duplicate, looping, or denied a token.
    pub fn on_message(&self, mut env: MessageEnvelope) -> bool {
        if env.hops >= self.max_hops {
            self.count(LOOP_DETECTIONS, &env.topic);
            return false;
        }
        if !self.dedupe.lock().insert(&env.origin_node, &env.topic, env.sequence) {
            self.count(DEDUPE_DROPS, &env.topic);
            return false;
        }
        if let Some(limiter) = &self.limiter {
            let size = env.uncompressed_len as u64;
            if limiter.observe_size(&env.topic, size).is_err() {
                limiter.register(&env.topic, 0.0, size);
            }
            if !limiter.try_acquire(&env.topic).unwrap_or(false) {
                self.count(LIMITER_DROPS, &env.topic);
                return false;
            }
            let cfg = limiter.config();
            if !env.compressed && env.payload_len() as u64 >= cfg.large_threshold_bytes {
                if let Ok((packed, _)) = compress::compress(&env.payload, cfg.compression_level) {
                    if packed.len() < env.payload_len() {
                        let saved = (env.payload_len() - packed.len()) as f64;
                        let node = self.host.to_string();
                        self.metrics.incr(
                            COMPRESSED_BYTES_SAVED,
                            labels(&[("topic", &env.topic), ("node", &node)]),
                            saved,
                        );
                        env.payload = Bytes::from(packed);
                        env.compressed = true;
                    }
                }
            }
        }
        if env.compressed && self.key.dest_scope.kind != ScopeKind::InterLayer {
            match compress::decompress(&env.payload) {
                Ok(raw) => {
                    env.payload = Bytes::from(raw);
                    env.compressed = false;
                }
                Err(_) => {
                    self.count(CORRUPT_DROPS, &env.topic);
                    return false;
                }
            }
        }
        env.hops += 1;
        let topic = env.topic.clone();
        if self.dest.publish(&self.host, env).is_err() {
            return false;
        }
        if !is_reserved_topic(&topic) {
            let node = self.host.to_string();
            self.metrics.inc(DELIVERED, labels(&[("topic", &topic), ("node", &node), ("via", "bridge")]));
        }
        true
    }
}
