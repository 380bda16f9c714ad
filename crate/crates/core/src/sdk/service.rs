// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use bytes::Bytes;
use parking_lot::Mutex;

use super::deployment::Deployment;
use super::SdkError;
use crate::broker::SubscriberHandle;
use crate::flow::DedupeWindow;
use crate::monitor::labels;
use crate::simnet::TimerHandle;
use crate::topology::{BrokerScope, FlowDeclaration, MessageEnvelope, NodeId};

pub type MessageCallback = Arc<dyn Fn(&MessageEnvelope) + Send + Sync>;

pub const PUBLISHED: &str = "service_published_total";

pub(crate) struct Advertise {
    pub topic: String,
    pub rate: f64,
    pub max_size: u64,
    pub scope: Option<BrokerScope>,
}

pub(crate) struct Request {
    pub topic: String,
    pub scope: Option<BrokerScope>,
    pub callback: MessageCallback,
}

/// Describes a service before it is started with
/// [`Deployment::start_service`].
///
/// Topics use the node's default scope unless a scope is given.
pub struct ServiceBuilder {
    pub(crate) name: String,
    pub(crate) node: NodeId,
    pub(crate) advertises: Vec<Advertise>,
    pub(crate) requests: Vec<Request>,
    pub(crate) deliver_own: bool,
    pub(crate) internal: bool,
}

impl ServiceBuilder {
    pub fn new(name: impl Into<String>, node: NodeId) -> Self {
        Self {
            name: name.into(),
            node,
            advertises: Vec::new(),
            requests: Vec::new(),
            deliver_own: false,
            internal: false,
        }
    }

    /// `rate` in Hz (0 = unknown), `max_size` in bytes (0 = unknown).
    pub fn advertise(mut self, topic: impl Into<String>, rate: f64, max_size: u64) -> Self {
        self.advertises.push(Advertise { topic: topic.into(), rate, max_size, scope: None });
        self
    }

    pub fn advertise_on(mut self, scope: BrokerScope, topic: impl Into<String>, rate: f64, max_size: u64) -> Self {
        self.advertises.push(Advertise { topic: topic.into(), rate, max_size, scope: Some(scope) });
        self
    }

    pub fn request(mut self, topic: impl Into<String>, callback: impl Fn(&MessageEnvelope) + Send + Sync + 'static) -> Self {
        self.requests.push(Request { topic: topic.into(), scope: None, callback: Arc::new(callback) });
        self
    }

    pub fn request_on(
        mut self,
        scope: BrokerScope,
        topic: impl Into<String>,
        callback: impl Fn(&MessageEnvelope) + Send + Sync + 'static,
    ) -> Self {
        self.requests.push(Request { topic: topic.into(), scope: Some(scope), callback: Arc::new(callback) });
        self
    }

    /// Whether the service's own messages on a topic it both advertises and
    /// requests are delivered back to it. Off by default.
    pub fn deliver_own(mut self, yes: bool) -> Self {
        self.deliver_own = yes;
        self
    }

    pub(crate) fn internal(mut self) -> Self {
        self.internal = true;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ServiceState {
    Starting,
    Ready,
    Stopped,
}

pub(crate) struct ServiceInner {
    pub name: String,
    pub node: NodeId,
    pub deployment: Weak<Deployment>,
    pub declarations: Vec<FlowDeclaration>,
    pub advertised: BTreeMap<String, BrokerScope>,
    pub state: Mutex<ServiceState>,
    pub subs: Mutex<Vec<SubscriberHandle>>,
    pub timers: Mutex<Vec<TimerHandle>>,
    pub own: Arc<Mutex<DedupeWindow>>,
    pub deliver_own: bool,
    pub published: AtomicU64,
}

/// A running service. Cheap to clone; all clones refer to one service.
#[derive(Clone)]
pub struct ServiceHandle {
    pub(crate) inner: Arc<ServiceInner>,
}

impl std::fmt::Debug for ServiceHandle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ServiceHandle")
            .field("name", &self.inner.name)
            .field("node", &self.inner.node)
            .field("state", &self.state())
            .finish()
    }
}

impl ServiceHandle {
    pub fn name(&self) -> &str {
        &self.inner.name
    }

    pub fn node(&self) -> &NodeId {
        &self.inner.node
    }

    pub fn state(&self) -> ServiceState {
        *self.inner.state.lock()
    }

    pub fn declarations(&self) -> &[FlowDeclaration] {
        &self.inner.declarations
    }

    pub fn published(&self) -> u64 {
        self.inner.published.load(Ordering::Relaxed)
    }

    /// Publishes on the topic's advertised scope, stamping origin, sequence
    /// and send time. Local acceptance is unconditional; rate limiting only
    /// happens at inter-layer bridges.
    pub fn publish(&self, topic: &str, payload: impl Into<Bytes>) -> Result<bool, SdkError> {
        let inner = &self.inner;
        if *inner.state.lock() != ServiceState::Ready {
            return Err(SdkError::Stopped(inner.name.clone()));
        }
        let scope = inner
            .advertised
            .get(topic)
            .ok_or_else(|| SdkError::NotAdvertised(topic.to_owned()))?;
        let dep = inner.deployment.upgrade().ok_or_else(|| SdkError::Stopped(inner.name.clone()))?;
        let seq = dep.next_sequence(&inner.node, topic);
        let env = MessageEnvelope::new(topic, payload, inner.node.clone(), scope.clone(), seq, dep.now());
        if !inner.deliver_own {
            inner.own.lock().insert(&inner.node, topic, seq);
        }
        inner.published.fetch_add(1, Ordering::Relaxed);
        let node = inner.node.to_string();
        if !crate::topology::is_reserved_topic(topic) {
            dep.metrics().inc(PUBLISHED, labels(&[("topic", topic), ("node", &node)]));
        }
        dep.brokers().endpoint(scope).publish(&inner.node, env)?;
        Ok(true)
    }

    /// Withdraws declarations, stops heartbeats and drops subscriptions.
    /// Idempotent.
    pub fn stop(&self) {
        let inner = &self.inner;
        {
            let mut state = inner.state.lock();
            if *state == ServiceState::Stopped {
                return;
            }
            *state = ServiceState::Stopped;
        }
        for t in inner.timers.lock().drain(..) {
            t.cancel();
        }
        let Some(dep) = inner.deployment.upgrade() else {
            return;
        };
        for h in inner.subs.lock().drain(..) {
            dep.brokers().endpoint(h.scope()).unsubscribe(&h);
        }
        dep.heartbeat(&inner.node.layer).remove(&inner.name, &inner.node);
        let engine = dep.engine(&inner.node);
        let scope = dep.topology().default_scope(&inner.node);
        for d in &inner.declarations {
            engine.publish_declaration(&scope, d, true);
        }
        dep.forget_service(&inner.node, &inner.name);
    }

    /// Simulates a crash: heartbeats and re-announcements cease, nothing is
    /// withdrawn. The watchdog is left to notice.
    pub fn crash(&self) {
        *self.inner.state.lock() = ServiceState::Stopped;
        for t in self.inner.timers.lock().drain(..) {
            t.cancel();
        }
    }
}
