// SPDX-License-Identifier: Apache-2.0

//! In-process publish/subscribe brokers.
//!
//! Every scope kind shares one endpoint implementation; what differs is the
//! [`Transport`] attached to it, which decides when (and whether) a targeted
//! subscriber actually sees a message. The simulator plugs in a transport that
//! applies link latency and loss, [`DirectTransport`] delivers immediately.

mod pool;

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use thiserror::Error;

pub use pool::WorkerPool;

use crate::topology::{BrokerScope, MessageEnvelope, NodeId, Topology};

pub type Callback = Arc<dyn Fn(MessageEnvelope) + Send + Sync>;
/// Target-selection predicate evaluated at publish time.
pub type Filter = Arc<dyn Fn(&MessageEnvelope) -> bool + Send + Sync>;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum BrokerError {
    #[error("broker endpoint {0} is shut down")]
    ShutDown(String),
    #[error("topic must not be empty")]
    EmptyTopic,
}

pub struct Subscriber {
    id: u64,
    topic: String,
    location: NodeId,
    callback: Callback,
    filter: Option<Filter>,
    active: AtomicBool,
    mailbox: Mutex<Mailbox>,
}

#[derive(Default)]
struct Mailbox {
    queue: VecDeque<MessageEnvelope>,
    draining: bool,
}

impl Subscriber {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    /// Node the subscriber runs on; transports use it to pick a link.
    pub fn location(&self) -> &NodeId {
        &self.location
    }

    pub fn is_active(&self) -> bool {
        self.active.load(Ordering::Acquire)
    }

    fn accepts(&self, env: &MessageEnvelope) -> bool {
        self.filter.as_ref().is_none_or(|f| f(env))
    }

    /// Invokes the callback unless the handle was unsubscribed; returns whether
    /// it ran.
    pub fn deliver(&self, env: MessageEnvelope) -> bool {
        if !self.is_active() {
            return false;
        }
        (self.callback)(env);
        true
    }
}

impl fmt::Debug for Subscriber {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Subscriber")
            .field("id", &self.id)
            .field("topic", &self.topic)
            .field("location", &self.location)
            .field("active", &self.is_active())
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct SubscriberHandle {
    id: u64,
    topic: String,
    scope: BrokerScope,
}

impl SubscriberHandle {
    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn topic(&self) -> &str {
        &self.topic
    }

    pub fn scope(&self) -> &BrokerScope {
        &self.scope
    }
}

/// Carries a published envelope to the selected subscribers.
pub trait Transport: Send + Sync {
    fn dispatch(
        &self,
        scope: &BrokerScope,
        from: &NodeId,
        env: MessageEnvelope,
        targets: Vec<Arc<Subscriber>>,
    );
}

/// Delivers without delay. With a pool, each subscriber gets a serial
/// mailbox drained on the pool, so deliveries to one subscriber stay in
/// publish order while different subscribers run in parallel.
#[derive(Default)]
pub struct DirectTransport {
    pool: Option<Arc<WorkerPool>>,
}

impl DirectTransport {
    /// Runs callbacks on the publishing thread.
    pub fn inline() -> Self {
        Self { pool: None }
    }

    pub fn pooled(pool: Arc<WorkerPool>) -> Self {
        Self { pool: Some(pool) }
    }
}

impl Transport for DirectTransport {
    fn dispatch(
        &self,
        _scope: &BrokerScope,
        _from: &NodeId,
        env: MessageEnvelope,
        targets: Vec<Arc<Subscriber>>,
    ) {
        let Some(pool) = &self.pool else {
            for sub in targets {
                sub.deliver(env.clone());
            }
            return;
        };
        for sub in targets {
            let start = {
                let mut mb = sub.mailbox.lock();
                mb.queue.push_back(env.clone());
                !std::mem::replace(&mut mb.draining, true)
            };
            if start {
                pool.spawn(move || drain(&sub));
            }
        }
    }
}

fn drain(sub: &Subscriber) {
    loop {
        let next = {
            let mut mb = sub.mailbox.lock();
            match mb.queue.pop_front() {
                Some(env) => env,
                None => {
                    mb.draining = false;
                    return;
                }
            }
        };
        sub.deliver(next);
    }
}

struct EndpointState {
    subs: HashMap<String, Vec<Arc<Subscriber>>>,
    shut_down: bool,
}

/// One broker instance serving a single scope.
pub struct BrokerEndpoint {
    scope: BrokerScope,
    transport: Arc<dyn Transport>,
    state: Mutex<EndpointState>,
    next_id: AtomicU64,
}

impl fmt::Debug for BrokerEndpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BrokerEndpoint").field("scope", &self.scope).finish_non_exhaustive()
    }
}

impl BrokerEndpoint {
    pub fn new(scope: BrokerScope, transport: Arc<dyn Transport>) -> Self {
        Self {
            scope,
            transport,
            state: Mutex::new(EndpointState { subs: HashMap::new(), shut_down: false }),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn scope(&self) -> &BrokerScope {
        &self.scope
    }

    /// Hands `env` to every current subscriber of its topic and returns how
    /// many were targeted. Loss is applied later by the transport, so the count
    /// does not depend on it.
    pub fn publish(&self, from: &NodeId, env: MessageEnvelope) -> Result<usize, BrokerError> {
        if env.topic.is_empty() {
            return Err(BrokerError::EmptyTopic);
        }
        let targets: Vec<Arc<Subscriber>> = {
            let state = self.state.lock();
            if state.shut_down {
                return Err(BrokerError::ShutDown(self.scope.to_string()));
            }
            match state.subs.get(&env.topic) {
                Some(subs) => subs.iter().filter(|s| s.accepts(&env)).cloned().collect(),
                None => Vec::new(),
            }
        };
        let count = targets.len();
        if count > 0 {
            self.transport.dispatch(&self.scope, from, env, targets);
        }
        Ok(count)
    }

    pub fn subscribe(
        &self,
        topic: &str,
        location: NodeId,
        callback: Callback,
    ) -> Result<SubscriberHandle, BrokerError> {
        self.subscribe_inner(topic, location, callback, None)
    }

    /// Like [`subscribe`](Self::subscribe) but only messages for which
    /// `filter` holds at publish time are targeted at this subscriber.
    pub fn subscribe_filtered(
        &self,
        topic: &str,
        location: NodeId,
        callback: Callback,
        filter: Filter,
    ) -> Result<SubscriberHandle, BrokerError> {
        self.subscribe_inner(topic, location, callback, Some(filter))
    }

    fn subscribe_inner(
        &self,
        topic: &str,
        location: NodeId,
        callback: Callback,
        filter: Option<Filter>,
    ) -> Result<SubscriberHandle, BrokerError> {
        if topic.is_empty() {
            return Err(BrokerError::EmptyTopic);
        }
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        let sub = Arc::new(Subscriber {
            id,
            topic: topic.to_owned(),
            location,
            callback,
            filter,
            active: AtomicBool::new(true),
            mailbox: Mutex::new(Mailbox::default()),
        });
        let mut state = self.state.lock();
        if state.shut_down {
            return Err(BrokerError::ShutDown(self.scope.to_string()));
        }
        state.subs.entry(topic.to_owned()).or_default().push(sub);
        Ok(SubscriberHandle { id, topic: topic.to_owned(), scope: self.scope.clone() })
    }

    /// Idempotent. Deliveries already running may complete; none start afterwards.
    pub fn unsubscribe(&self, handle: &SubscriberHandle) {
        let mut state = self.state.lock();
        if let Some(subs) = state.subs.get_mut(&handle.topic) {
            if let Some(pos) = subs.iter().position(|s| s.id == handle.id) {
                let sub = subs.remove(pos);
                sub.active.store(false, Ordering::Release);
            }
            if subs.is_empty() {
                state.subs.remove(&handle.topic);
            }
        }
    }

    pub fn subscriber_count(&self, topic: &str) -> usize {
        self.state.lock().subs.get(topic).map_or(0, Vec::len)
    }

    pub fn shutdown(&self) {
        let mut state = self.state.lock();
        state.shut_down = true;
        for sub in state.subs.values().flatten() {
            sub.active.store(false, Ordering::Release);
        }
        state.subs.clear();
    }
}

/// One endpoint per scope of a topology, all sharing a transport.
#[derive(Debug, Clone)]
pub struct BrokerSet {
    endpoints: BTreeMap<BrokerScope, Arc<BrokerEndpoint>>,
}

impl BrokerSet {
    pub fn for_topology(topology: &Topology, transport: Arc<dyn Transport>) -> Self {
        let endpoints = topology
            .scopes()
            .into_iter()
            .map(|s| (s.clone(), Arc::new(BrokerEndpoint::new(s, transport.clone()))))
            .collect();
        Self { endpoints }
    }

    pub fn get(&self, scope: &BrokerScope) -> Option<&Arc<BrokerEndpoint>> {
        self.endpoints.get(scope)
    }

    /// Panics on a scope outside the topology; callers only pass scopes they
    /// obtained from the same topology.
    pub fn endpoint(&self, scope: &BrokerScope) -> &Arc<BrokerEndpoint> {
        self.endpoints.get(scope).unwrap_or_else(|| panic!("no broker for scope {scope}"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&BrokerScope, &Arc<BrokerEndpoint>)> {
        self.endpoints.iter()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{LayerId, LayerKind};
    use std::sync::atomic::AtomicUsize;

    fn node() -> NodeId {
        NodeId::new(LayerId::new("edge", LayerKind::Edge), "n1")
    }

    fn endpoint() -> BrokerEndpoint {
        BrokerEndpoint::new(BrokerScope::intra_node(&node()), Arc::new(DirectTransport::inline()))
    }

    fn env(topic: &str, payload: &[u8]) -> MessageEnvelope {
        MessageEnvelope::new(topic, payload.to_vec(), node(), BrokerScope::intra_node(&node()), 1, 0)
    }

    fn counter() -> (Arc<AtomicUsize>, Callback) {
        let hits = Arc::new(AtomicUsize::new(0));
        let h = hits.clone();
        (hits, Arc::new(move |_| {
            h.fetch_add(1, Ordering::SeqCst);
        }))
    }

    #[test]
    fn two_subscribers_both_invoked() {
        let ep = endpoint();
        let (a, cb_a) = counter();
        let (b, cb_b) = counter();
        ep.subscribe("t1", node(), cb_a).unwrap();
        ep.subscribe("t1", node(), cb_b).unwrap();
        assert_eq!(ep.publish(&node(), env("t1", b"x")).unwrap(), 2);
        assert_eq!(a.load(Ordering::SeqCst), 1);
        assert_eq!(b.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn publish_without_subscribers_is_noop() {
        let ep = endpoint();
        assert_eq!(ep.publish(&node(), env("t1", b"x")).unwrap(), 0);
    }

    #[test]
    fn payload_identity() {
        let ep = endpoint();
        let got = Arc::new(Mutex::new(None));
        let g = got.clone();
        ep.subscribe("t", node(), Arc::new(move |e: MessageEnvelope| *g.lock() = Some(e))).unwrap();
        let sent = env("t", &[1, 2, 3, 255]);
        ep.publish(&node(), sent.clone()).unwrap();
        assert_eq!(got.lock().as_ref().unwrap().payload, sent.payload);
    }

    #[test]
    fn unsubscribe_stops_delivery_and_is_idempotent() {
        let ep = endpoint();
        let (hits, cb) = counter();
        let h = ep.subscribe("t", node(), cb).unwrap();
        ep.unsubscribe(&h);
        ep.unsubscribe(&h);
        assert_eq!(ep.publish(&node(), env("t", b"x")).unwrap(), 0);
        assert_eq!(hits.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn filter_excludes_targets() {
        let ep = endpoint();
        let (hits, cb) = counter();
        ep.subscribe_filtered("t", node(), cb, Arc::new(|e: &MessageEnvelope| e.sequence % 2 == 0))
            .unwrap();
        let mut e = env("t", b"x");
        assert_eq!(ep.publish(&node(), e.clone()).unwrap(), 0);
        e.sequence = 2;
        assert_eq!(ep.publish(&node(), e).unwrap(), 1);
        assert_eq!(hits.load(Ordering::SeqCst), 1);
    }

    #[test]
    fn empty_topic_and_shutdown_errors() {
        let ep = endpoint();
        let (_, cb) = counter();
        assert_eq!(ep.subscribe("", node(), cb.clone()).unwrap_err(), BrokerError::EmptyTopic);
        assert_eq!(ep.publish(&node(), env("", b"")).unwrap_err(), BrokerError::EmptyTopic);
        ep.shutdown();
        assert!(matches!(ep.publish(&node(), env("t", b"")), Err(BrokerError::ShutDown(_))));
        assert!(matches!(ep.subscribe("t", node(), cb), Err(BrokerError::ShutDown(_))));
    }
}
