// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use super::latency::{LatencySample, NET_LATENCY, PING_TIMEOUTS};
use super::{labels, MetricsRegistry};
use crate::clock::{to_millis_f64, Nanos, NANOS_PER_SEC};
use crate::sdk::{Deployment, SdkError, ServiceBuilder, ServiceHandle};
use crate::simnet::{Simulator, TimerHandle};
use crate::topology::{BrokerScope, MessageEnvelope, NodeId};

pub const PING_TOPIC: &str = "__mon/ping";
/// Pongs for node `n` travel on `__mon/pong/<layer>/<node>`.
pub const PONG_TOPIC: &str = "__mon/pong";
pub const PROBE_SERVICE: &str = "__monitor";
const PROBE_MSG_SIZE: u64 = 256;

pub fn pong_topic(node: &NodeId) -> String {
    format!("{PONG_TOPIC}/{node}")
}

#[derive(Debug, Clone)]
pub struct ProbeSettings {
    pub period: Nanos,
    /// Pings unanswered after this long count as timeouts.
    pub timeout: Nanos,
    /// Time of the first cycle.
    pub start: Nanos,
}

impl Default for ProbeSettings {
    fn default() -> Self {
        Self { period: NANOS_PER_SEC, timeout: NANOS_PER_SEC / 2, start: NANOS_PER_SEC }
    }
}

impl ProbeSettings {
    /// Timeout of five times the round trip over the slowest hop.
    pub fn for_max_one_way_ms(max_one_way_ms: f64) -> Self {
        let rtt = 2.0 * max_one_way_ms.max(1.0);
        Self { timeout: crate::clock::from_millis_f64(5.0 * rtt), ..Self::default() }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct Ping {
    source: String,
    cycle: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct Pong {
    source: String,
    responder: String,
    cycle: u64,
}

/// Ping/pong latency probe for one node. Every cycle it pings every node
/// (itself included) through the flow engine, so bridge overhead is part of
/// the measurement, and records half of each round trip.
pub struct PingProbe {
    node: NodeId,
    targets: Vec<NodeId>,
    settings: ProbeSettings,
    sim: Arc<Simulator>,
    metrics: Arc<MetricsRegistry>,
    service: Mutex<Option<ServiceHandle>>,
    cycle: AtomicU64,
    outstanding: Mutex<BTreeMap<(u64, String), Nanos>>,
    samples: Mutex<Vec<LatencySample>>,
    timer: Mutex<Option<TimerHandle>>,
}

impl std::fmt::Debug for PingProbe {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PingProbe").field("node", &self.node).finish_non_exhaustive()
    }
}

impl PingProbe {
    pub fn start(dep: &Arc<Deployment>, node: NodeId, settings: ProbeSettings) -> Result<Arc<Self>, SdkError> {
        let targets: Vec<NodeId> = dep.topology().nodes().cloned().collect();
        let probe = Arc::new(Self {
            node: node.clone(),
            targets: targets.clone(),
            settings: settings.clone(),
            sim: dep.sim().clone(),
            metrics: dep.metrics().clone(),
            service: Mutex::new(None),
            cycle: AtomicU64::new(0),
            outstanding: Mutex::new(BTreeMap::new()),
            samples: Mutex::new(Vec::new()),
            timer: Mutex::new(None),
        });
        let local = BrokerScope::intra_node(&node);
        let hz = NANOS_PER_SEC as f64 / settings.period as f64;
        let mut builder = ServiceBuilder::new(PROBE_SERVICE, node.clone())
            .internal()
            .deliver_own(true)
            .advertise_on(local.clone(), PING_TOPIC, hz, PROBE_MSG_SIZE);
        for t in &targets {
            builder = builder.advertise_on(local.clone(), pong_topic(t), hz, PROBE_MSG_SIZE);
        }
        let weak = Arc::downgrade(&probe);
        builder = builder.request_on(local.clone(), PING_TOPIC, {
            let weak = weak.clone();
            move |env| {
                if let Some(p) = weak.upgrade() {
                    p.on_ping(env);
                }
            }
        });
        builder = builder.request_on(local, pong_topic(&node), move |env| {
            if let Some(p) = weak.upgrade() {
                p.on_pong(env);
            }
        });
        let handle = dep.start_service(builder)?;
        *probe.service.lock() = Some(handle);
        let weak: Weak<Self> = Arc::downgrade(&probe);
        let timer = dep.sim().schedule_every(settings.start.max(dep.now()), settings.period, move || {
            if let Some(p) = weak.upgrade() {
                p.ping_cycle();
            }
        });
        *probe.timer.lock() = Some(timer);
        Ok(probe)
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    /// Sends one ping to every node and arms the timeout check.
    pub fn ping_cycle(self: &Arc<Self>) {
        let Some(service) = self.service.lock().clone() else {
            return;
        };
        let cycle = self.cycle.fetch_add(1, Ordering::Relaxed) + 1;
        let now = self.sim.now();
        {
            let mut out = self.outstanding.lock();
            for t in &self.targets {
                out.insert((cycle, t.to_string()), now);
            }
        }
        let ping = Ping { source: self.node.to_string(), cycle };
        let Ok(payload) = serde_json::to_vec(&ping) else {
            return;
        };
        if service.publish(PING_TOPIC, payload).is_err() {
            return;
        }
        let weak = Arc::downgrade(self);
        self.sim.schedule_in(self.settings.timeout, move || {
            if let Some(p) = weak.upgrade() {
                p.expire_cycle(cycle);
            }
        });
    }

    fn on_ping(&self, env: &MessageEnvelope) {
        let Ok(ping) = serde_json::from_slice::<Ping>(&env.payload) else {
            return;
        };
        let pong = Pong { source: ping.source, responder: self.node.to_string(), cycle: ping.cycle };
        let Ok(payload) = serde_json::to_vec(&pong) else {
            return;
        };
        let topic = pong_topic(&env.origin_node);
        let service = self.service.lock().clone();
        if let Some(service) = service {
            let _ = service.publish(&topic, payload);
        }
    }

    fn on_pong(&self, env: &MessageEnvelope) {
        let Ok(pong) = serde_json::from_slice::<Pong>(&env.payload) else {
            return;
        };
        if pong.source != self.node.to_string() {
            return;
        }
        let Some(sent) = self.outstanding.lock().remove(&(pong.cycle, pong.responder.clone())) else {
            return;
        };
        let now = self.sim.now();
        let rtt_half = to_millis_f64(now.saturating_sub(sent)) / 2.0;
        let source = self.node.to_string();
        self.metrics.record(NET_LATENCY, labels(&[("source", &source), ("target", &pong.responder)]), rtt_half);
        let target = self.targets.iter().find(|t| t.to_string() == pong.responder).cloned();
        if let Some(target) = target {
            self.samples.lock().push(LatencySample { source: self.node.clone(), target, rtt_half, at: now });
        }
    }

    fn expire_cycle(&self, cycle: u64) {
        let lapsed: Vec<(u64, String)> =
            self.outstanding.lock().keys().filter(|(c, _)| *c <= cycle).cloned().collect();
        let source = self.node.to_string();
        for key in lapsed {
            self.outstanding.lock().remove(&key);
            self.metrics.inc(PING_TIMEOUTS, labels(&[("source", &source), ("target", &key.1)]));
        }
    }

    pub fn cycles(&self) -> u64 {
        self.cycle.load(Ordering::Relaxed)
    }

    pub fn samples(&self) -> Vec<LatencySample> {
        self.samples.lock().clone()
    }

    pub fn samples_to(&self, target: &NodeId) -> Vec<f64> {
        self.samples.lock().iter().filter(|s| &s.target == target).map(|s| s.rtt_half).collect()
    }

    pub fn stop(&self) {
        if let Some(t) = self.timer.lock().take() {
            t.cancel();
        }
        let service = self.service.lock().take();
        if let Some(s) = service {
            s.stop();
        }
    }
}
