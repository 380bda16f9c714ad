// SPDX-License-Identifier: Apache-2.0

//! Main-service request/reply over inter-layer scopes.
//!
//! Requests go out on the requester's own inter-layer scope; the main service
//! listens on every inter-layer scope and answers on its own, tagging the
//! reply with the requesting layer.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::document::{ConfigDocument, ConfigScope};
use super::store::MainStore;
use super::worker::ConfigWorker;
use super::{ConfigError, REP_TOPIC, REQ_TOPIC};
use crate::broker::{BrokerSet, SubscriberHandle};
use crate::clock::Clock;
use crate::topology::{BrokerScope, LayerId, MessageEnvelope, NodeId, Topology};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum ConfigOp {
    Fetch { layer: String },
    Put { scope: ConfigScope, subject: String, body: Value },
    Get { scope: ConfigScope, subject: String },
    List { scope: ConfigScope },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigRequest {
    pub id: u64,
    pub reply_to: String,
    pub op: ConfigOp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigResult {
    Documents(Vec<ConfigDocument>),
    Document(Option<ConfigDocument>),
    Revision(u64),
    Error(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigReply {
    pub id: u64,
    pub reply_to: String,
    pub result: ConfigResult,
}

pub fn handle(store: &MainStore, topology: &Topology, op: ConfigOp) -> ConfigResult {
    match op {
        ConfigOp::Fetch { layer } => match topology.layer(&layer) {
            Some(l) => ConfigResult::Documents(store.layer_documents(&l.id)),
            None => ConfigResult::Error(ConfigError::UnknownSubject(layer).to_string()),
        },
        ConfigOp::Put { scope, subject, body } => match store.main_put(scope, &subject, body) {
            Ok(rev) => ConfigResult::Revision(rev),
            Err(e) => ConfigResult::Error(e.to_string()),
        },
        ConfigOp::Get { scope, subject } => ConfigResult::Document(store.get(scope, &subject)),
        ConfigOp::List { scope } => ConfigResult::Documents(store.list(scope)),
    }
}

fn envelope(topic: &str, body: &impl Serialize, node: &NodeId, scope: &BrokerScope, seq: u64, clock: &dyn Clock) -> Option<MessageEnvelope> {
    let payload = serde_json::to_vec(body).ok()?;
    Some(MessageEnvelope::new(topic, payload, node.clone(), scope.clone(), seq, clock.now()))
}

/// The main configuration service hosted on one node.
pub struct MainService {
    store: Arc<MainStore>,
    topology: Arc<Topology>,
    node: NodeId,
    brokers: BrokerSet,
    clock: Arc<dyn Clock>,
    seq: AtomicU64,
    handles: Mutex<Vec<SubscriberHandle>>,
}

impl MainService {
    pub fn new(store: Arc<MainStore>, topology: Arc<Topology>, node: NodeId, brokers: BrokerSet, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(Self { store, topology, node, brokers, clock, seq: AtomicU64::new(0), handles: Mutex::new(Vec::new()) })
    }

    pub fn store(&self) -> &Arc<MainStore> {
        &self.store
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    pub fn attach(self: &Arc<Self>) -> Result<(), ConfigError> {
        let mut handles = Vec::new();
        for layer in self.topology.layer_ids() {
            let scope = BrokerScope::inter_layer(layer);
            let me = Arc::downgrade(self);
            let h = self
                .brokers
                .endpoint(&scope)
                .subscribe(
                    REQ_TOPIC,
                    self.node.clone(),
                    Arc::new(move |env: MessageEnvelope| {
                        if let Some(svc) = me.upgrade() {
                            svc.on_request(env);
                        }
                    }),
                )
                .map_err(|e| ConfigError::Codec(e.to_string()))?;
            handles.push(h);
        }
        self.handles.lock().extend(handles);
        Ok(())
    }

    pub fn detach(&self) {
        for h in self.handles.lock().drain(..) {
            self.brokers.endpoint(h.scope()).unsubscribe(&h);
        }
    }

    fn on_request(&self, env: MessageEnvelope) {
        let Ok(req) = serde_json::from_slice::<ConfigRequest>(&env.payload) else {
            return;
        };
        let reply = ConfigReply { id: req.id, reply_to: req.reply_to, result: handle(&self.store, &self.topology, req.op) };
        let scope = BrokerScope::inter_layer(&self.node.layer);
        let seq = self.seq.fetch_add(1, Ordering::Relaxed) + 1;
        if let Some(env) = envelope(REP_TOPIC, &reply, &self.node, &scope, seq, self.clock.as_ref()) {
            let _ = self.brokers.endpoint(&scope).publish(&self.node, env);
        }
    }
}

/// Connects a worker to a remote main service and syncs it on request.
pub struct WorkerLink {
    worker: Arc<ConfigWorker>,
    main_layer: LayerId,
    brokers: BrokerSet,
    clock: Arc<dyn Clock>,
    seq: AtomicU64,
    pending: Mutex<Vec<u64>>,
    handle: Mutex<Option<SubscriberHandle>>,
}

impl WorkerLink {
    pub fn new(worker: Arc<ConfigWorker>, main_layer: LayerId, brokers: BrokerSet, clock: Arc<dyn Clock>) -> Arc<Self> {
        Arc::new(Self {
            worker,
            main_layer,
            brokers,
            clock,
            seq: AtomicU64::new(0),
            pending: Mutex::new(Vec::new()),
            handle: Mutex::new(None),
        })
    }

    pub fn worker(&self) -> &Arc<ConfigWorker> {
        &self.worker
    }

    pub fn attach(self: &Arc<Self>) -> Result<(), ConfigError> {
        let me = Arc::downgrade(self);
        let h = self
            .brokers
            .endpoint(&BrokerScope::inter_layer(&self.main_layer))
            .subscribe(
                REP_TOPIC,
                self.worker.node().clone(),
                Arc::new(move |env: MessageEnvelope| {
                    if let Some(link) = me.upgrade() {
                        link.on_reply(env);
                    }
                }),
            )
            .map_err(|e| ConfigError::Codec(e.to_string()))?;
        *self.handle.lock() = Some(h);
        Ok(())
    }

    /// Sends one fetch request; the replica updates when the reply lands.
    pub fn request_sync(&self) {
        let id = self.seq.fetch_add(1, Ordering::Relaxed) + 1;
        let layer = self.worker.layer().clone();
        let req = ConfigRequest { id, reply_to: layer.name.clone(), op: ConfigOp::Fetch { layer: layer.name.clone() } };
        let scope = BrokerScope::inter_layer(&layer);
        let node = self.worker.node().clone();
        if let Some(env) = envelope(REQ_TOPIC, &req, &node, &scope, id, self.clock.as_ref()) {
            let mut pending = self.pending.lock();
            pending.push(id);
            // replies to requests lost long ago will never come
            let excess = pending.len().saturating_sub(16);
            pending.drain(..excess);
            drop(pending);
            let _ = self.brokers.endpoint(&scope).publish(&node, env);
        }
    }

    fn on_reply(&self, env: MessageEnvelope) {
        let Ok(reply) = serde_json::from_slice::<ConfigReply>(&env.payload) else {
            return;
        };
        if reply.reply_to != self.worker.layer().name {
            return;
        }
        {
            let mut pending = self.pending.lock();
            let Some(pos) = pending.iter().position(|id| *id == reply.id) else {
                return;
            };
            pending.remove(pos);
        }
        if let ConfigResult::Documents(docs) = reply.result {
            self.worker.apply(docs);
        }
    }
}
