// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Weak};

use parking_lot::Mutex;
use thiserror::Error;

use super::bridge::{Bridge, DEFAULT_MAX_HOPS};
use super::bridges::{compute_required_bridges, BridgeKey, BridgeSpec, Origin};
use super::table::{FlowTable, Upsert};
use crate::broker::{BrokerError, BrokerSet, SubscriberHandle};
use crate::clock::{Clock, Nanos, NANOS_PER_SEC};
use crate::monitor::{labels, MetricsRegistry};
use crate::ratelimit::{RateLimitConfig, RateLimiter};
use crate::simnet::Simulator;
use crate::topology::{
    BrokerScope, FlowDeclaration, FlowDirection, MessageEnvelope, NodeId, ProducerSequencer,
    ScopeKind, Topology,
};

pub const ADVERTISE_TOPIC: &str = "__flow/advertise";
pub const REQUEST_TOPIC: &str = "__flow/request";
pub const WITHDRAW_TOPIC: &str = "__flow/withdraw";
pub const BRIDGES_GAUGE: &str = "flow_bridges";
pub const CONTROL_MESSAGES: &str = "flow_control_messages_total";

#[derive(Debug, Error)]
pub enum FlowError {
    #[error("declaration has an empty topic")]
    EmptyTopic,
    #[error("node `{0}` is not part of the topology")]
    UnknownNode(String),
    #[error("scope `{0}` cannot carry service traffic")]
    InvalidScope(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// Shared plumbing every engine of a deployment uses.
#[derive(Clone)]
pub struct EngineContext {
    pub topology: Arc<Topology>,
    pub brokers: BrokerSet,
    pub clock: Arc<dyn Clock>,
    pub metrics: Arc<MetricsRegistry>,
    /// Event log for bridge changes; absent outside the simulator.
    pub tracer: Option<Arc<Simulator>>,
}

#[derive(Debug, Clone)]
pub struct EngineSettings {
    pub rate_limit: RateLimitConfig,
    pub max_hops: u8,
    /// Declarations not refreshed for this long are dropped.
    pub lease: Nanos,
}

impl Default for EngineSettings {
    fn default() -> Self {
        Self { rate_limit: RateLimitConfig::default(), max_hops: DEFAULT_MAX_HOPS, lease: 30 * NANOS_PER_SEC }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Op {
    Announce,
    Withdraw,
}

struct Installed {
    bridge: Arc<Bridge>,
    handle: SubscriberHandle,
}

struct State {
    table: FlowTable,
    bridges: BTreeMap<BridgeKey, Installed>,
    sequencer: ProducerSequencer,
    control: Vec<SubscriberHandle>,
}

/// Per-node flow engine: keeps the declaration table, floods declarations
/// between scopes and installs the bridges the table calls for.
///
/// Declarations travel as JSON on the reserved `__flow/*` topics. An engine
/// listens on its node scope and its layer scope; the layer gateway also
/// listens on the inter-layer scope of every other layer. Since those are
/// fully meshed, only the gateway of the declaring layer publishes a
/// declaration on an inter-layer scope; receiving gateways relay it into
/// their layer after stamping it, and drop it if their layer was already
/// stamped.
pub struct FlowEngine {
    node: NodeId,
    ctx: EngineContext,
    settings: EngineSettings,
    limiter: Arc<RateLimiter>,
    state: Mutex<State>,
    me: Weak<FlowEngine>,
}

impl std::fmt::Debug for FlowEngine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FlowEngine").field("node", &self.node).finish_non_exhaustive()
    }
}

impl FlowEngine {
    pub fn new(node: NodeId, ctx: EngineContext, settings: EngineSettings) -> Result<Arc<Self>, FlowError> {
        if !ctx.topology.contains_node(&node) {
            return Err(FlowError::UnknownNode(node.to_string()));
        }
        let limiter = Arc::new(RateLimiter::new(settings.rate_limit.clone(), ctx.clock.clone()));
        Ok(Arc::new_cyclic(|me| Self {
            node,
            ctx,
            settings,
            limiter,
            state: Mutex::new(State {
                table: FlowTable::new(),
                bridges: BTreeMap::new(),
                sequencer: ProducerSequencer::new(),
                control: Vec::new(),
            }),
            me: me.clone(),
        }))
    }

    pub fn node(&self) -> &NodeId {
        &self.node
    }

    pub fn limiter(&self) -> &Arc<RateLimiter> {
        &self.limiter
    }

    pub fn is_gateway(&self) -> bool {
        self.ctx.topology.is_gateway(&self.node)
    }

    /// Scopes this engine listens on for declarations.
    pub fn control_scopes(&self) -> Vec<BrokerScope> {
        let topo = &self.ctx.topology;
        let mut out = vec![BrokerScope::intra_node(&self.node), BrokerScope::intra_layer(&self.node.layer)];
        if self.is_gateway() {
            out.extend(
                topo.layer_ids()
                    .filter(|l| **l != self.node.layer)
                    .map(BrokerScope::inter_layer),
            );
        }
        out
    }

    pub fn attach(&self) -> Result<(), FlowError> {
        let mut handles = Vec::new();
        for scope in self.control_scopes() {
            let endpoint = self.ctx.brokers.endpoint(&scope);
            for topic in [ADVERTISE_TOPIC, REQUEST_TOPIC, WITHDRAW_TOPIC] {
                let me = self.me.clone();
                let via = scope.clone();
                let handle = endpoint.subscribe(
                    topic,
                    self.node.clone(),
                    Arc::new(move |env: MessageEnvelope| {
                        if let Some(engine) = me.upgrade() {
                            engine.on_control(&via, env);
                        }
                    }),
                )?;
                handles.push(handle);
            }
        }
        self.state.lock().control.extend(handles);
        Ok(())
    }

    /// Unsubscribes everything this engine holds; the table is kept.
    pub fn detach(&self) {
        let mut st = self.state.lock();
        for h in st.control.drain(..) {
            self.ctx.brokers.endpoint(h.scope()).unsubscribe(&h);
        }
        for (_, inst) in std::mem::take(&mut st.bridges) {
            self.ctx.brokers.endpoint(inst.handle.scope()).unsubscribe(&inst.handle);
        }
    }

    fn validate(&self, decl: &FlowDeclaration) -> Result<(), FlowError> {
        if decl.topic.is_empty() {
            return Err(FlowError::EmptyTopic);
        }
        if !self.ctx.topology.contains_node(&decl.origin_node) {
            return Err(FlowError::UnknownNode(decl.origin_node.to_string()));
        }
        if decl.origin_scope.kind == ScopeKind::InterLayer
            || self.ctx.brokers.get(&decl.origin_scope).is_none()
        {
            return Err(FlowError::InvalidScope(decl.origin_scope.to_string()));
        }
        Ok(())
    }

    /// Stores a locally made declaration, installs the bridges it completes on
    /// this node and forwards it into the layer.
    pub fn announce(&self, decl: FlowDeclaration) -> Result<Vec<BridgeSpec>, FlowError> {
        self.validate(&decl)?;
        Ok(self.process(decl, Op::Announce, None).0)
    }

    /// Removes a declaration, dismantling bridges only it needed, and forwards
    /// the withdrawal. Unknown declarations are a no-op locally.
    pub fn withdraw(&self, decl: FlowDeclaration) -> Vec<BridgeSpec> {
        self.process(decl, Op::Withdraw, None).1
    }

    /// Withdraws everything `service` on `node` declared, on behalf of a dead
    /// service, by publishing withdrawals where the service itself would.
    pub fn withdraw_service(&self, service: &str, node: &NodeId) -> Vec<FlowDeclaration> {
        let decls = self.state.lock().table.by_service(service, node);
        let scope = self.ctx.topology.default_scope(node);
        for d in &decls {
            self.publish_control(&scope, WITHDRAW_TOPIC, d);
        }
        decls
    }

    /// Publishes a declaration on `scope` as a service on this node would.
    pub fn publish_declaration(&self, scope: &BrokerScope, decl: &FlowDeclaration, withdraw: bool) {
        let topic = match (withdraw, decl.direction) {
            (true, _) => WITHDRAW_TOPIC,
            (false, FlowDirection::Advertise) => ADVERTISE_TOPIC,
            (false, FlowDirection::Request) => REQUEST_TOPIC,
        };
        self.publish_control(scope, topic, decl);
    }

    fn on_control(&self, via: &BrokerScope, env: MessageEnvelope) {
        let op = if env.topic == WITHDRAW_TOPIC { Op::Withdraw } else { Op::Announce };
        let decl: FlowDeclaration = match serde_json::from_slice(&env.payload) {
            Ok(d) => d,
            Err(e) => {
                log::warn!("{}: undecodable declaration on {via}: {e}", self.node);
                return;
            }
        };
        if op == Op::Announce && self.validate(&decl).is_err() {
            return;
        }
        self.process(decl, op, Some(via));
    }

    fn process(
        &self,
        mut decl: FlowDeclaration,
        op: Op,
        via: Option<&BrokerScope>,
    ) -> (Vec<BridgeSpec>, Vec<BridgeSpec>) {
        let layer = self.node.layer.clone();
        if via.is_some_and(|v| v.kind == ScopeKind::InterLayer) {
            if decl.visited_layers.contains(&layer) {
                return (Vec::new(), Vec::new());
            }
            decl.visited_layers.insert(layer.clone());
        }
        let now = self.ctx.clock.now();
        let changes = {
            let mut st = self.state.lock();
            let dirty = match op {
                Op::Announce => st.table.upsert(decl.clone(), now) != Upsert::Refreshed,
                Op::Withdraw => st.table.remove(&decl.key()).is_some(),
            };
            if dirty {
                self.reconcile(&mut st)
            } else {
                (Vec::new(), Vec::new())
            }
        };
        let topic = if op == Op::Withdraw {
            WITHDRAW_TOPIC
        } else if decl.direction == FlowDirection::Advertise {
            ADVERTISE_TOPIC
        } else {
            REQUEST_TOPIC
        };
        for scope in self.forwards(&decl, via) {
            self.publish_control(&scope, topic, &decl);
        }
        changes
    }

    fn forwards(&self, decl: &FlowDeclaration, via: Option<&BrokerScope>) -> Vec<BrokerScope> {
        let layer = &self.node.layer;
        let layer_scope = BrokerScope::intra_layer(layer);
        match via.map(|v| v.kind) {
            None | Some(ScopeKind::IntraNode) | Some(ScopeKind::ExternalProtocol) => vec![layer_scope],
            Some(ScopeKind::IntraLayer) => {
                let unvisited = self.ctx.topology.layer_ids().any(|l| !decl.visited_layers.contains(l));
                if self.is_gateway() && decl.origin_layer() == layer && unvisited {
                    vec![BrokerScope::inter_layer(layer)]
                } else {
                    Vec::new()
                }
            }
            Some(ScopeKind::InterLayer) => vec![layer_scope],
        }
    }

    fn publish_control(&self, scope: &BrokerScope, topic: &str, decl: &FlowDeclaration) {
        let Ok(payload) = serde_json::to_vec(decl) else {
            return;
        };
        let seq = self.state.lock().sequencer.next_sequence(topic);
        let env = MessageEnvelope::new(topic, payload, self.node.clone(), scope.clone(), seq, self.ctx.clock.now());
        let node = self.node.to_string();
        self.ctx.metrics.inc(CONTROL_MESSAGES, labels(&[("node", &node), ("topic", topic)]));
        if let Some(endpoint) = self.ctx.brokers.get(scope) {
            if let Err(e) = endpoint.publish(&self.node, env) {
                log::debug!("{node}: control publish on {scope} failed: {e}");
            }
        }
    }

    /// Drops declarations whose lease ran out; returns them.
    pub fn expire(&self) -> Vec<FlowDeclaration> {
        let cutoff = self.ctx.clock.now().saturating_sub(self.settings.lease);
        let mut st = self.state.lock();
        let gone = st.table.expire_older_than(cutoff);
        if !gone.is_empty() {
            self.reconcile(&mut st);
        }
        gone
    }

    pub fn set_rate_limit(&self, cfg: RateLimitConfig) {
        self.limiter.reconfigure(cfg);
    }

    /// Brings installed bridges in line with the table. Returns (created,
    /// removed).
    fn reconcile(&self, st: &mut State) -> (Vec<BridgeSpec>, Vec<BridgeSpec>) {
        let required: BTreeMap<BridgeKey, BridgeSpec> =
            compute_required_bridges(&st.table, &self.ctx.topology, &self.node)
                .into_iter()
                .map(|b| (b.key(), b))
                .collect();
        let mut created = Vec::new();
        let mut removed = Vec::new();
        let stale: Vec<BridgeKey> = st.bridges.keys().filter(|k| !required.contains_key(*k)).cloned().collect();
        for key in stale {
            if let Some(inst) = st.bridges.remove(&key) {
                self.ctx.brokers.endpoint(inst.handle.scope()).unsubscribe(&inst.handle);
                let spec = inst.bridge.spec();
                self.trace(|| format!("bridge- {spec}"));
                removed.push(spec);
            }
        }
        for (key, spec) in required {
            if let Some(inst) = st.bridges.get(&key) {
                inst.bridge.set_origins(spec.origins.clone());
                continue;
            }
            let limiter = spec.is_limited().then(|| self.limiter.clone());
            let dest = self.ctx.brokers.endpoint(&spec.dest_scope).clone();
            let bridge = Arc::new(Bridge::new(&spec, dest, limiter, self.ctx.metrics.clone(), self.settings.max_hops));
            let cb = bridge.clone();
            let filter = bridge.clone();
            let subscribed = self.ctx.brokers.endpoint(&spec.source_scope).subscribe_filtered(
                &spec.topic,
                self.node.clone(),
                Arc::new(move |env| {
                    cb.on_message(env);
                }),
                Arc::new(move |env| filter.accepts(env)),
            );
            match subscribed {
                Ok(handle) => {
                    self.trace(|| format!("bridge+ {spec}"));
                    st.bridges.insert(key, Installed { bridge, handle });
                    created.push(spec);
                }
                Err(e) => log::warn!("{}: cannot install bridge {spec}: {e}", self.node),
            }
        }
        self.sync_limiter(st);
        let node = self.node.to_string();
        self.ctx.metrics.record(BRIDGES_GAUGE, labels(&[("node", &node)]), st.bridges.len() as f64);
        (created, removed)
    }

    /// Registers every topic leaving through this node's outbound bridges
    /// with the summed declared rate and the largest declared size of the
    /// advertisers feeding them.
    fn sync_limiter(&self, st: &State) {
        let mut topics: BTreeMap<String, BTreeSet<Origin>> = BTreeMap::new();
        for inst in st.bridges.values() {
            let spec = inst.bridge.spec();
            if spec.is_limited() {
                topics.entry(spec.topic).or_default().extend(spec.origins);
            }
        }
        let publishers: Vec<(String, f64, u64)> = topics
            .into_iter()
            .map(|(topic, origins)| {
                let feeding: Vec<&FlowDeclaration> = st
                    .table
                    .advertises(&topic)
                    .filter(|d| origins.contains(&Origin::of(d)))
                    .collect();
                let unknown = feeding.iter().any(|d| d.declared_rate <= 0.0);
                let rate = if unknown { 0.0 } else { feeding.iter().map(|d| d.declared_rate).sum() };
                let size = feeding.iter().map(|d| d.declared_max_size).max().unwrap_or(0);
                (topic, rate, size)
            })
            .collect();
        self.limiter.sync_publishers(&publishers);
    }

    fn trace(&self, line: impl FnOnce() -> String) {
        if let Some(sim) = &self.ctx.tracer {
            sim.trace(line);
        }
    }

    pub fn table(&self) -> FlowTable {
        self.state.lock().table.clone()
    }

    pub fn bridges(&self) -> Vec<BridgeSpec> {
        self.state.lock().bridges.values().map(|i| i.bridge.spec()).collect()
    }

    pub fn bridge(&self, key: &BridgeKey) -> Option<Arc<Bridge>> {
        self.state.lock().bridges.get(key).map(|i| i.bridge.clone())
    }
}
