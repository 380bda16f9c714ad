// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::atomic::AtomicU64;
use std::sync::{Arc, Weak};

use parking_lot::Mutex;
use serde_json::json;

use super::service::{ServiceBuilder, ServiceHandle, ServiceInner, ServiceState};
use super::SdkError;
use crate::broker::{BrokerSet, SubscriberHandle};
use crate::clock::{from_millis_f64, Nanos, NANOS_PER_SEC};
use crate::config::{
    ConfigChangeNotice, ConfigScope, ConfigWorker, MainService, MainStore, WorkerLink, NOTICE_TOPIC,
};
use crate::flow::{
    compute_all_bridges, BridgeSpec, DedupeWindow, EngineContext, EngineSettings, FlowEngine, FlowTable,
    DELIVERED,
};
use crate::monitor::{labels, message_latency, HeartbeatRegistry, MetricsRegistry, PingProbe, ProbeSettings};
use crate::ratelimit::compress;
use crate::simnet::{LinkDefaults, SimNetwork, Simulator, TimerHandle};
use crate::topology::{
    is_reserved_topic, BrokerScope, FlowDeclaration, LayerId, MessageEnvelope, NodeId, ProducerSequencer,
    ScopeKind, Topology,
};

/// Heartbeat name each flow engine refreshes for its node.
pub const ENGINE_SERVICE: &str = "flowbridge-engine";
pub const WATCHDOG_EXPIRIES: &str = "watchdog_expirations_total";

#[derive(Debug, Clone)]
pub struct DeploymentSettings {
    pub seed: u64,
    pub links: LinkDefaults,
    pub engine: EngineSettings,
    pub heartbeat_period: Nanos,
    pub ttl_factor: u64,
    pub reannounce_period: Nanos,
    pub lease_check_period: Nanos,
    pub config_sync_period: Nanos,
    /// Backing file for the main configuration store; in memory when absent.
    pub config_store: Option<PathBuf>,
    pub probe: Option<ProbeSettings>,
    pub trace: bool,
}

impl Default for DeploymentSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            links: LinkDefaults::default(),
            engine: EngineSettings::default(),
            heartbeat_period: NANOS_PER_SEC,
            ttl_factor: 3,
            reannounce_period: 10 * NANOS_PER_SEC,
            lease_check_period: NANOS_PER_SEC,
            config_sync_period: 5 * NANOS_PER_SEC,
            config_store: None,
            probe: None,
            trace: false,
        }
    }
}

/// A whole simulated system: one broker per scope on a simulated network, a
/// flow engine per node, a heartbeat registry and watchdog per layer, and the
/// configuration main service with one worker per layer gateway.
pub struct Deployment {
    topology: Arc<Topology>,
    settings: DeploymentSettings,
    sim: Arc<Simulator>,
    metrics: Arc<MetricsRegistry>,
    network: Arc<SimNetwork>,
    brokers: BrokerSet,
    engines: BTreeMap<NodeId, Arc<FlowEngine>>,
    heartbeats: BTreeMap<LayerId, Arc<HeartbeatRegistry>>,
    main: Arc<MainService>,
    workers: BTreeMap<LayerId, Arc<WorkerLink>>,
    services: Mutex<BTreeMap<(NodeId, String), ServiceHandle>>,
    sequencers: Mutex<BTreeMap<NodeId, ProducerSequencer>>,
    probes: Mutex<BTreeMap<NodeId, Arc<PingProbe>>>,
    timers: Mutex<Vec<TimerHandle>>,
    notice_subs: Mutex<Vec<SubscriberHandle>>,
}

impl std::fmt::Debug for Deployment {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Deployment").field("nodes", &self.engines.len()).field("now", &self.sim.now()).finish()
    }
}

impl Deployment {
    pub fn new(topology: Topology, settings: DeploymentSettings) -> Result<Arc<Self>, SdkError> {
        let topology = Arc::new(topology);
        let sim = Simulator::new(settings.seed);
        if settings.trace {
            sim.enable_trace();
        }
        let metrics = Arc::new(MetricsRegistry::new(sim.clone()));
        let network = Arc::new(SimNetwork::new(sim.clone(), metrics.clone(), &topology, settings.links.clone()));
        let brokers = BrokerSet::for_topology(&topology, network.clone());
        let ctx = EngineContext {
            topology: topology.clone(),
            brokers: brokers.clone(),
            clock: sim.clone(),
            metrics: metrics.clone(),
            tracer: Some(sim.clone()),
        };
        let mut engines = BTreeMap::new();
        for node in topology.nodes() {
            let engine = FlowEngine::new(node.clone(), ctx.clone(), settings.engine.clone())?;
            engine.attach()?;
            engines.insert(node.clone(), engine);
        }
        let ttl = settings.ttl_factor * settings.heartbeat_period;
        let heartbeats =
            topology.layer_ids().map(|l| (l.clone(), Arc::new(HeartbeatRegistry::new(ttl)))).collect();

        let store = match &settings.config_store {
            Some(path) => MainStore::open(topology.clone(), path)?,
            None => MainStore::in_memory(topology.clone()),
        };
        let main_layer = topology.layers().last().expect("topology has a layer").id.clone();
        let main_node = topology.gateway(&main_layer).expect("layer has a node").clone();
        let main = MainService::new(Arc::new(store), topology.clone(), main_node, brokers.clone(), sim.clone());
        main.attach()?;
        let default_limits = serde_json::to_value(&settings.engine.rate_limit).unwrap_or(json!({}));
        let mut workers = BTreeMap::new();
        for layer in topology.layer_ids() {
            let gateway = topology.gateway(layer).expect("layer has a node").clone();
            let worker = ConfigWorker::new(layer.clone(), gateway, sim.clone())
                .with_default(ConfigScope::Layer, &layer.name, json!({ "rate_limit": default_limits }))
                .with_notifier(brokers.endpoint(&BrokerScope::intra_layer(layer)).clone());
            let link = WorkerLink::new(Arc::new(worker), main_layer.clone(), brokers.clone(), sim.clone());
            link.attach()?;
            workers.insert(layer.clone(), link);
        }

        let dep = Arc::new(Self {
            topology,
            settings,
            sim,
            metrics,
            network,
            brokers,
            engines,
            heartbeats,
            main,
            workers,
            services: Mutex::new(BTreeMap::new()),
            sequencers: Mutex::new(BTreeMap::new()),
            probes: Mutex::new(BTreeMap::new()),
            timers: Mutex::new(Vec::new()),
            notice_subs: Mutex::new(Vec::new()),
        });
        dep.subscribe_notices()?;
        dep.start_timers();
        if let Some(probe) = dep.settings.probe.clone() {
            for node in dep.topology.nodes().cloned().collect::<Vec<_>>() {
                let p = PingProbe::start(&dep, node.clone(), probe.clone())?;
                dep.probes.lock().insert(node, p);
            }
        }
        Ok(dep)
    }

    /// Every node applies rate-limit changes from its layer document.
    fn subscribe_notices(self: &Arc<Self>) -> Result<(), SdkError> {
        let mut subs = Vec::new();
        for (node, engine) in &self.engines {
            let scope = BrokerScope::intra_layer(&node.layer);
            let worker = self.workers[&node.layer].worker().clone();
            let engine = engine.clone();
            let base = self.settings.engine.rate_limit.clone();
            let h = self.brokers.endpoint(&scope).subscribe(
                NOTICE_TOPIC,
                node.clone(),
                Arc::new(move |env: MessageEnvelope| {
                    let Ok(notice) = serde_json::from_slice::<ConfigChangeNotice>(&env.payload) else {
                        return;
                    };
                    if notice.scope == ConfigScope::Layer
                        && notice.subject == worker.layer().name
                        && notice.touches("rate_limit")
                    {
                        engine.set_rate_limit(worker.rate_limit(&base));
                    }
                }),
            )?;
            subs.push(h);
        }
        self.notice_subs.lock().extend(subs);
        Ok(())
    }

    fn start_timers(self: &Arc<Self>) {
        let now = self.sim.now();
        let mut timers = Vec::new();
        let me = Arc::downgrade(self);
        let hb = self.settings.heartbeat_period;
        for node in self.engines.keys() {
            self.heartbeats[&node.layer].refresh(ENGINE_SERVICE, node, now);
        }
        timers.push(self.sim.schedule_every(now + hb, hb, {
            let me = me.clone();
            move || {
                if let Some(dep) = me.upgrade() {
                    let t = dep.sim.now();
                    for node in dep.engines.keys() {
                        dep.heartbeats[&node.layer].refresh(ENGINE_SERVICE, node, t);
                    }
                }
            }
        }));
        timers.push(self.sim.schedule_every(now + hb / 2, hb, {
            let me = me.clone();
            move || {
                if let Some(dep) = me.upgrade() {
                    dep.watchdog();
                }
            }
        }));
        timers.push(self.sim.schedule_every(now + self.settings.lease_check_period, self.settings.lease_check_period, {
            let me = me.clone();
            move || {
                if let Some(dep) = me.upgrade() {
                    for engine in dep.engines.values() {
                        engine.expire();
                    }
                }
            }
        }));
        timers.push(self.sim.schedule_every(now, self.settings.config_sync_period, {
            let me = me.clone();
            move || {
                if let Some(dep) = me.upgrade() {
                    for w in dep.workers.values() {
                        w.request_sync();
                    }
                }
            }
        }));
        self.timers.lock().extend(timers);
    }

    /// Expires lapsed heartbeats and withdraws the dead services'
    /// declarations from each layer gateway.
    fn watchdog(&self) {
        let now = self.sim.now();
        for (layer, registry) in &self.heartbeats {
            let gateway = self.topology.gateway(layer).expect("layer has a node");
            for entry in registry.expire(now) {
                if entry.service == ENGINE_SERVICE {
                    continue;
                }
                let node = entry.node.to_string();
                self.metrics.inc(WATCHDOG_EXPIRIES, labels(&[("node", &node), ("service", &entry.service)]));
                self.sim.trace(|| format!("watchdog expired {} @{}", entry.service, entry.node));
                self.engines[gateway].withdraw_service(&entry.service, &entry.node);
                self.forget_service(&entry.node, &entry.service);
            }
        }
    }

    pub fn start_service(self: &Arc<Self>, spec: ServiceBuilder) -> Result<ServiceHandle, SdkError> {
        let node = spec.node.clone();
        if !self.topology.contains_node(&node) {
            return Err(SdkError::UnknownNode(node.to_string()));
        }
        let topics = spec.advertises.iter().map(|a| &a.topic).chain(spec.requests.iter().map(|r| &r.topic));
        for topic in topics {
            if topic.is_empty() {
                return Err(SdkError::EmptyTopic);
            }
            if is_reserved_topic(topic) && !spec.internal {
                return Err(SdkError::ReservedTopic(topic.clone()));
            }
        }
        if self.services.lock().contains_key(&(node.clone(), spec.name.clone())) {
            return Err(SdkError::DuplicateService(spec.name, node.to_string()));
        }
        if !self.heartbeat(&node.layer).is_live(ENGINE_SERVICE, &node, self.sim.now()) {
            return Err(SdkError::EngineUnavailable(node.to_string()));
        }
        let default_scope = self.topology.default_scope(&node);
        let check_scope = |s: &BrokerScope| -> Result<(), SdkError> {
            let ok = s.kind != ScopeKind::InterLayer
                && self.brokers.get(s).is_some()
                && match s.kind {
                    ScopeKind::IntraNode => s.node() == Some(&node),
                    _ => s.layer() == &node.layer,
                };
            if ok {
                Ok(())
            } else {
                Err(SdkError::InvalidScope(s.to_string()))
            }
        };

        let mut declarations = Vec::new();
        let mut advertised = BTreeMap::new();
        for a in &spec.advertises {
            let scope = a.scope.clone().unwrap_or_else(|| default_scope.clone());
            check_scope(&scope)?;
            if advertised.insert(a.topic.clone(), scope.clone()).is_some() {
                return Err(SdkError::DuplicateTopic(a.topic.clone()));
            }
            declarations.push(FlowDeclaration::advertise(&a.topic, &spec.name, scope, node.clone(), a.rate, a.max_size));
        }
        let mut requested = BTreeSet::new();
        for r in &spec.requests {
            let scope = r.scope.clone().unwrap_or_else(|| default_scope.clone());
            check_scope(&scope)?;
            if requested.insert((r.topic.clone(), scope.clone())) {
                declarations.push(FlowDeclaration::request(&r.topic, &spec.name, scope, node.clone()));
            }
        }

        let inner = Arc::new(ServiceInner {
            name: spec.name.clone(),
            node: node.clone(),
            deployment: Arc::downgrade(self),
            declarations,
            advertised,
            state: Mutex::new(ServiceState::Starting),
            subs: Mutex::new(Vec::new()),
            timers: Mutex::new(Vec::new()),
            own: Arc::new(Mutex::new(DedupeWindow::default())),
            deliver_own: spec.deliver_own,
            published: AtomicU64::new(0),
        });
        let handle = ServiceHandle { inner: inner.clone() };

        for r in spec.requests {
            let scope = r.scope.unwrap_or_else(|| default_scope.clone());
            let h = self.brokers.endpoint(&scope).subscribe_filtered(
                &r.topic,
                node.clone(),
                self.delivery_callback(&node, r.callback),
                {
                    let own = inner.own.clone();
                    let node = node.clone();
                    Arc::new(move |env: &MessageEnvelope| {
                        !(env.origin_node == node && own.lock().contains(&node, &env.topic, env.sequence))
                    })
                },
            )?;
            inner.subs.lock().push(h);
        }

        let registry = self.heartbeat(&node.layer).clone();
        registry.refresh(&spec.name, &node, self.sim.now());
        let hb = self.sim.schedule_every(self.sim.now() + self.settings.heartbeat_period, self.settings.heartbeat_period, {
            let sim = Arc::downgrade(&self.sim);
            let (name, node) = (spec.name.clone(), node.clone());
            move || {
                if let Some(sim) = sim.upgrade() {
                    registry.refresh(&name, &node, sim.now());
                }
            }
        });
        let engine = self.engine(&node).clone();
        for d in &inner.declarations {
            engine.publish_declaration(&default_scope, d, false);
        }
        let period = self.settings.reannounce_period;
        let reannounce = self.sim.schedule_every(self.sim.now() + period, period, {
            let weak: Weak<ServiceInner> = Arc::downgrade(&inner);
            let scope = default_scope.clone();
            move || {
                if let Some(inner) = weak.upgrade() {
                    for d in &inner.declarations {
                        engine.publish_declaration(&scope, d, false);
                    }
                }
            }
        });
        inner.timers.lock().extend([hb, reannounce]);
        *inner.state.lock() = ServiceState::Ready;
        self.services.lock().insert((node, spec.name), handle.clone());
        Ok(handle)
    }

    fn delivery_callback(&self, node: &NodeId, user: super::MessageCallback) -> crate::broker::Callback {
        let metrics = self.metrics.clone();
        let sim = Arc::downgrade(&self.sim);
        let node = node.clone();
        let label = node.to_string();
        Arc::new(move |mut env: MessageEnvelope| {
            if env.compressed {
                match compress::decompress(&env.payload) {
                    Ok(raw) => {
                        env.payload = raw.into();
                        env.compressed = false;
                    }
                    Err(_) => return,
                }
            }
            if !is_reserved_topic(&env.topic) {
                metrics.inc(DELIVERED, labels(&[("topic", &env.topic), ("node", &label), ("via", "service")]));
                if let Some(sim) = sim.upgrade() {
                    message_latency(&metrics, &env, &node, sim.now());
                }
            }
            user(&env);
        })
    }

    pub(crate) fn forget_service(&self, node: &NodeId, name: &str) {
        self.services.lock().remove(&(node.clone(), name.to_owned()));
    }

    pub(crate) fn next_sequence(&self, node: &NodeId, topic: &str) -> u64 {
        self.sequencers.lock().entry(node.clone()).or_default().next_sequence(topic)
    }

    pub fn service(&self, node: &NodeId, name: &str) -> Option<ServiceHandle> {
        self.services.lock().get(&(node.clone(), name.to_owned())).cloned()
    }

    pub fn services(&self) -> Vec<ServiceHandle> {
        self.services.lock().values().cloned().collect()
    }

    pub fn topology(&self) -> &Arc<Topology> {
        &self.topology
    }

    pub fn settings(&self) -> &DeploymentSettings {
        &self.settings
    }

    pub fn sim(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn now(&self) -> Nanos {
        self.sim.now()
    }

    pub fn metrics(&self) -> &Arc<MetricsRegistry> {
        &self.metrics
    }

    pub fn network(&self) -> &Arc<SimNetwork> {
        &self.network
    }

    pub fn brokers(&self) -> &BrokerSet {
        &self.brokers
    }

    /// Panics on a node outside the topology.
    pub fn engine(&self, node: &NodeId) -> &Arc<FlowEngine> {
        self.engines.get(node).unwrap_or_else(|| panic!("no engine on {node}"))
    }

    pub fn engines(&self) -> impl Iterator<Item = &Arc<FlowEngine>> {
        self.engines.values()
    }

    /// Panics on a layer outside the topology.
    pub fn heartbeat(&self, layer: &LayerId) -> &Arc<HeartbeatRegistry> {
        &self.heartbeats[layer]
    }

    pub fn main_store(&self) -> &Arc<MainStore> {
        self.main.store()
    }

    pub fn worker(&self, layer: &LayerId) -> &Arc<ConfigWorker> {
        self.workers[layer].worker()
    }

    pub fn probe(&self, node: &NodeId) -> Option<Arc<PingProbe>> {
        self.probes.lock().get(node).cloned()
    }

    pub fn run_until(&self, t: Nanos) -> u64 {
        self.sim.run_until(t)
    }

    pub fn run_for(&self, dt: Nanos) -> u64 {
        self.sim.run_until(self.sim.now() + dt)
    }

    pub fn run_for_ms(&self, ms: f64) -> u64 {
        self.run_for(from_millis_f64(ms))
    }

    /// Bridges currently installed across all engines, sorted.
    pub fn installed_bridges(&self) -> Vec<BridgeSpec> {
        let mut out: Vec<BridgeSpec> = self.engines.values().flat_map(|e| e.bridges()).collect();
        out.sort();
        out
    }

    /// Union of all engines' declaration tables.
    pub fn union_table(&self) -> FlowTable {
        let mut table = FlowTable::new();
        for e in self.engines.values() {
            for d in e.table().declarations() {
                table.upsert(d.clone(), 0);
            }
        }
        table
    }

    /// Bridges the union of all declarations calls for, sorted.
    pub fn expected_bridges(&self) -> Vec<BridgeSpec> {
        let mut out = compute_all_bridges(&self.union_table(), &self.topology);
        out.sort();
        out
    }

    /// Stops timers, services and probes; brokers stay up so in-flight
    /// deliveries resolve.
    pub fn shutdown(&self) {
        for t in self.timers.lock().drain(..) {
            t.cancel();
        }
        for p in self.probes.lock().values() {
            p.stop();
        }
        for s in self.services() {
            s.stop();
        }
    }
}
