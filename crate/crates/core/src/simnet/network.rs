// SPDX-License-Identifier: Apache-2.0

use std::collections::HashMap;
use std::sync::Arc;

use parking_lot::Mutex;

use super::link::{propagate, serialize, LinkDefaults, LinkSpec, LinkState, Transmission};
use super::Simulator;
use crate::broker::{Subscriber, Transport};
use crate::monitor::{labels, MetricsRegistry};
use crate::topology::{is_reserved_topic, BrokerScope, MessageEnvelope, NodeId, ScopeKind, Topology};

pub const OFFERED: &str = "flow_offered_total";
pub const LOSS_DROPS: &str = "flow_loss_drops_total";
pub const UNSUBSCRIBED_DROPS: &str = "flow_unsubscribed_drops_total";
pub const LINK_BYTES: &str = "link_bytes_total";
pub const LINK_MESSAGES: &str = "link_messages_total";

/// Binds broker scopes together through simulated links.
///
/// A publish on an inter-layer scope reaches subscribers in other layers over
/// the link between the two layers' inter-layer scopes; every other scope
/// delivers over its own self-link. Serialization is charged once per publish
/// and link direction, loss and jitter are drawn per subscriber.
pub struct SimNetwork {
    sim: Arc<Simulator>,
    metrics: Arc<MetricsRegistry>,
    defaults: LinkDefaults,
    links: Mutex<Vec<LinkSpec>>,
    state: Mutex<HashMap<(BrokerScope, BrokerScope), LinkState>>,
}

impl std::fmt::Debug for SimNetwork {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SimNetwork").field("links", &self.links.lock().len()).finish()
    }
}

impl SimNetwork {
    pub fn new(
        sim: Arc<Simulator>,
        metrics: Arc<MetricsRegistry>,
        topology: &Topology,
        defaults: LinkDefaults,
    ) -> Self {
        Self {
            sim,
            metrics,
            defaults,
            links: Mutex::new(topology.links().to_vec()),
            state: Mutex::new(HashMap::new()),
        }
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    /// Replaces the link between the same endpoints, or adds it.
    pub fn set_link(&self, link: LinkSpec) {
        let mut links = self.links.lock();
        links.retain(|l| !l.same_endpoints(&link));
        links.push(link);
    }

    pub fn link(&self, a: &BrokerScope, b: &BrokerScope) -> LinkSpec {
        self.links
            .lock()
            .iter()
            .find(|l| l.connects_pair(a, b))
            .cloned()
            .unwrap_or_else(|| self.defaults.link_for(a, b))
    }

    /// Directed link a publish on `scope` uses to reach a subscriber at `to`.
    pub fn route(scope: &BrokerScope, to: &NodeId) -> (BrokerScope, BrokerScope) {
        if scope.kind == ScopeKind::InterLayer && scope.layer() != &to.layer {
            (scope.clone(), BrokerScope::inter_layer(&to.layer))
        } else {
            (scope.clone(), scope.clone())
        }
    }

    fn reserve(&self, dir: &(BrokerScope, BrokerScope), link: &LinkSpec, len: usize) -> u64 {
        let now = self.sim.now();
        let mut state = self.state.lock();
        let slot = state.entry(dir.clone()).or_default();
        serialize(link, slot, len, now)
    }
}

impl Transport for SimNetwork {
    fn dispatch(
        &self,
        scope: &BrokerScope,
        _from: &NodeId,
        env: MessageEnvelope,
        targets: Vec<Arc<Subscriber>>,
    ) {
        let data = !is_reserved_topic(&env.topic);
        let mut departures: Vec<((BrokerScope, BrokerScope), LinkSpec, u64)> = Vec::new();
        for target in targets {
            let node = target.location().to_string();
            let dir = Self::route(scope, target.location());
            let (link, sent) = match departures.iter().find(|(d, _, _)| d == &dir) {
                Some((_, link, sent)) => (link.clone(), *sent),
                None => {
                    let link = self.link(&dir.0, &dir.1);
                    let sent = self.reserve(&dir, &link, env.payload_len());
                    let name = format!("{}->{}", dir.0, dir.1);
                    self.metrics.incr(LINK_BYTES, labels(&[("link", &name)]), env.payload_len() as f64);
                    self.metrics.inc(LINK_MESSAGES, labels(&[("link", &name)]));
                    departures.push((dir.clone(), link.clone(), sent));
                    (link, sent)
                }
            };
            if data {
                self.metrics.inc(OFFERED, labels(&[("topic", &env.topic), ("node", &node)]));
            }
            match self.sim.with_rng(|rng| propagate(&link, sent, rng)) {
                Transmission::Dropped => {
                    if data {
                        self.metrics.inc(LOSS_DROPS, labels(&[("topic", &env.topic), ("node", &node)]));
                    }
                    self.sim.trace(|| {
                        format!("loss {scope} {} {}#{} -> {node}", env.topic, env.origin_node, env.sequence)
                    });
                }
                Transmission::Delivered(at) => {
                    let env = env.clone();
                    let sim = self.sim.clone();
                    let metrics = self.metrics.clone();
                    let scope = scope.clone();
                    self.sim.schedule_at(at, move || {
                        sim.trace(|| {
                            format!(
                                "deliver {scope} {} {}#{} -> {node}",
                                env.topic, env.origin_node, env.sequence
                            )
                        });
                        let topic = env.topic.clone();
                        if !target.deliver(env) && data {
                            metrics.inc(UNSUBSCRIBED_DROPS, labels(&[("topic", &topic), ("node", &node)]));
                        }
                    });
                }
            }
        }
    }
}
