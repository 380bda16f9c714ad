// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::Value;

use super::document::{changed_paths, ConfigChangeNotice, ConfigDocument, ConfigScope};
use super::store::ConfigSource;
use super::{ConfigError, NOTICE_TOPIC};
use crate::broker::BrokerEndpoint;
use crate::clock::Clock;
use crate::ratelimit::RateLimitConfig;
use crate::topology::{LayerId, MessageEnvelope, NodeId, ProducerSequencer};

/// Layer-local replica of the main store.
///
/// Documents are swapped whole, so readers see either the old or the new
/// revision. Every revision advance emits one change notice on the layer's
/// local broker.
pub struct ConfigWorker {
    layer: LayerId,
    node: NodeId,
    clock: Arc<dyn Clock>,
    replica: RwLock<BTreeMap<(ConfigScope, String), Arc<ConfigDocument>>>,
    defaults: BTreeMap<(ConfigScope, String), Value>,
    notifier: Option<Arc<BrokerEndpoint>>,
    sequencer: Mutex<ProducerSequencer>,
    notices: Mutex<Vec<ConfigChangeNotice>>,
}

impl std::fmt::Debug for ConfigWorker {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConfigWorker").field("layer", &self.layer).finish_non_exhaustive()
    }
}

impl ConfigWorker {
    pub fn new(layer: LayerId, node: NodeId, clock: Arc<dyn Clock>) -> Self {
        Self {
            layer,
            node,
            clock,
            replica: RwLock::new(BTreeMap::new()),
            defaults: BTreeMap::new(),
            notifier: None,
            sequencer: Mutex::new(ProducerSequencer::new()),
            notices: Mutex::new(Vec::new()),
        }
    }

    pub fn with_default(mut self, scope: ConfigScope, subject: &str, body: Value) -> Self {
        self.defaults.insert((scope, subject.to_owned()), body);
        self
    }

    /// Notices go out on `endpoint` (the layer's local scope).
    pub fn with_notifier(mut self, endpoint: Arc<BrokerEndpoint>) -> Self {
        self.notifier = Some(endpoint);
        self
    }

    pub fn layer(&self) -> &LayerId {
        &self.layer
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    /// Pulls the layer's documents; 0 when the source is unreachable, in
    /// which case the replica keeps serving what it had.
    pub fn sync_from(&self, source: &dyn ConfigSource) -> usize {
        match source.fetch(&self.layer) {
            Ok(docs) => self.apply(docs),
            Err(e) => {
                log::debug!("config worker {}: sync failed: {e}", self.layer);
                0
            }
        }
    }

    /// Installs every document newer than the replica's copy and returns how
    /// many were updated.
    pub fn apply(&self, docs: Vec<ConfigDocument>) -> usize {
        let mut notices = Vec::new();
        {
            let mut replica = self.replica.write();
            for doc in docs {
                let key = doc.key();
                let old = replica.get(&key);
                if old.is_some_and(|o| o.revision >= doc.revision) {
                    continue;
                }
                let before = old.map_or(Value::Object(Default::default()), |o| o.body.clone());
                let mut changed = changed_paths(&before, &doc.body);
                if changed.is_empty() {
                    changed.push(".".into());
                }
                notices.push(ConfigChangeNotice {
                    scope: doc.scope,
                    subject: doc.subject.clone(),
                    revision: doc.revision,
                    changed,
                });
                replica.insert(key, Arc::new(doc));
            }
        }
        let updated = notices.len();
        for notice in notices {
            self.notify(&notice);
            self.notices.lock().push(notice);
        }
        updated
    }

    fn notify(&self, notice: &ConfigChangeNotice) {
        let Some(endpoint) = &self.notifier else {
            return;
        };
        let Ok(payload) = serde_json::to_vec(notice) else {
            return;
        };
        let seq = self.sequencer.lock().next_sequence(NOTICE_TOPIC);
        let env = MessageEnvelope::new(
            NOTICE_TOPIC,
            payload,
            self.node.clone(),
            endpoint.scope().clone(),
            seq,
            self.clock.now(),
        );
        if let Err(e) = endpoint.publish(&self.node, env) {
            log::debug!("config worker {}: notice not sent: {e}", self.layer);
        }
    }

    /// Replica document, else the bundled default at revision 0.
    pub fn get_config(&self, scope: ConfigScope, subject: &str) -> Result<ConfigDocument, ConfigError> {
        let key = (scope, subject.to_owned());
        if let Some(doc) = self.replica.read().get(&key) {
            return Ok((**doc).clone());
        }
        self.defaults
            .get(&key)
            .map(|body| ConfigDocument { scope, subject: subject.to_owned(), body: body.clone(), revision: 0 })
            .ok_or_else(|| ConfigError::NotFound(format!("{scope} `{subject}`")))
    }

    pub fn documents(&self) -> Vec<ConfigDocument> {
        self.replica.read().values().map(|d| (**d).clone()).collect()
    }

    pub fn notices(&self) -> Vec<ConfigChangeNotice> {
        self.notices.lock().clone()
    }

    /// `base` overlaid with the `rate_limit` object of this layer's document.
    /// An invalid overlay leaves `base` unchanged.
    pub fn rate_limit(&self, base: &RateLimitConfig) -> RateLimitConfig {
        let Ok(doc) = self.get_config(ConfigScope::Layer, &self.layer.name) else {
            return base.clone();
        };
        let Some(Value::Object(overlay)) = doc.body.get("rate_limit") else {
            return base.clone();
        };
        let mut merged = serde_json::to_value(base).unwrap_or(Value::Null);
        if let Value::Object(m) = &mut merged {
            for (k, v) in overlay {
                m.insert(k.clone(), v.clone());
            }
        }
        match serde_json::from_value::<RateLimitConfig>(merged) {
            Ok(cfg) if cfg.validate().is_ok() => cfg,
            _ => {
                log::warn!("layer {}: ignoring invalid rate_limit config", self.layer);
                base.clone()
            }
        }
    }
}
