// SPDX-License-Identifier: Apache-2.0

//! Random topologies and service placements.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use flowbridge::clock::NANOS_PER_SEC;
use flowbridge::flow::{BridgeSpec, LOOP_DETECTIONS};
use flowbridge::sdk::{Deployment, DeploymentSettings, ServiceBuilder, ServiceHandle};
use flowbridge::topology::{BrokerScope, Topology};

use super::Inbox;

const KINDS: [&str; 3] = ["edge", "fog", "cloud"];
const TOPICS: [&str; 4] = ["t0", "t1", "t2", "t3"];

#[derive(Debug, Clone)]
pub struct ServicePlan {
    pub name: String,
    pub node: String,
    pub advertises: Vec<(String, String)>,
    pub requests: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct RandomSystem {
    pub topology_toml: String,
    pub services: Vec<ServicePlan>,
    /// Publish order: (service index, advertise index, round).
    pub stream: Vec<(usize, usize, usize)>,
}

/// Up to three layers of up to four nodes each.
pub fn random_system(seed: u64) -> RandomSystem {
    random_system_sized(seed, 4)
}

pub fn random_system_sized(seed: u64, max_nodes: usize) -> RandomSystem {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut toml = String::new();
    let mut layers = Vec::new();
    while layers.is_empty() {
        layers = KINDS.iter().filter(|_| rng.gen_bool(0.7)).copied().collect();
    }
    let mut nodes: Vec<(String, Vec<String>)> = Vec::new();
    for layer in &layers {
        let ext = rng.gen_bool(0.5);
        toml.push_str(&format!("[[layers]]\nname = \"{layer}\"\nkind = \"{layer}\"\nexternal_protocol = {ext}\n\n"));
        for i in 0..rng.gen_range(1..=max_nodes) {
            toml.push_str(&format!("[[nodes]]\nlayer = \"{layer}\"\nname = \"n{i}\"\n\n"));
            let mut scopes = vec![format!("intra_node:{layer}/n{i}"), format!("intra_layer:{layer}")];
            if ext {
                scopes.push(format!("external_protocol:{layer}"));
            }
            nodes.push((format!("{layer}/n{i}"), scopes));
        }
    }
    let mut services = Vec::new();
    for s in 0..rng.gen_range(1..=8) {
        let (node, scopes) = nodes.choose(&mut rng).unwrap().clone();
        let mut plan = ServicePlan { name: format!("s{s}"), node, advertises: Vec::new(), requests: Vec::new() };
        for topic in TOPICS {
            if rng.gen_bool(0.3) {
                plan.advertises.push((topic.to_string(), scopes.choose(&mut rng).unwrap().clone()));
            }
            if rng.gen_bool(0.4) {
                plan.requests.push((topic.to_string(), scopes.choose(&mut rng).unwrap().clone()));
            }
        }
        services.push(plan);
    }
    let mut stream = Vec::new();
    for round in 0..rng.gen_range(1..=3) {
        for (s, plan) in services.iter().enumerate() {
            for a in 0..plan.advertises.len() {
                stream.push((s, a, round));
            }
        }
    }
    stream.shuffle(&mut rng);
    RandomSystem { topology_toml: toml, services, stream }
}

#[derive(Debug)]
pub struct Outcome {
    pub installed: Vec<BridgeSpec>,
    pub expected: Vec<BridgeSpec>,
    pub loop_detections: f64,
    pub offered: f64,
    pub settled: f64,
    /// Requester deliveries that were missing or repeated.
    pub delivery_errors: Vec<String>,
    pub published: usize,
    pub unbalanced: Vec<String>,
}

impl Outcome {
    pub fn ok(&self) -> bool {
        self.installed == self.expected
            && self.loop_detections == 0.0
            && self.offered == self.settled
            && self.delivery_errors.is_empty()
            && self.unbalanced.is_empty()
    }
}

/// Starts the services in an order drawn from `order_seed`, lets the
/// handshake settle, publishes from every advertiser in turn and checks that
/// each requester saw each foreign message exactly once.
pub fn run(system: &RandomSystem, order_seed: u64) -> Outcome {
    let topo = Topology::from_toml(&system.topology_toml).unwrap();
    let dep = Deployment::new(topo, DeploymentSettings { seed: order_seed, ..DeploymentSettings::default() }).unwrap();
    let mut order: Vec<usize> = (0..system.services.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(order_seed));
    let mut handles: BTreeMap<String, ServiceHandle> = BTreeMap::new();
    let mut inboxes: BTreeMap<String, Inbox> = BTreeMap::new();
    for i in order {
        let plan = &system.services[i];
        let node = dep.topology().node(&plan.node).unwrap().clone();
        let mut b = ServiceBuilder::new(&plan.name, node);
        let inbox = Inbox::default();
        for (topic, scope) in &plan.advertises {
            b = b.advertise_on(scope_of(&dep, scope), topic, 10.0, 64);
        }
        for (topic, scope) in &plan.requests {
            b = b.request_on(scope_of(&dep, scope), topic, inbox.sink());
        }
        handles.insert(plan.name.clone(), dep.start_service(b).unwrap());
        inboxes.insert(plan.name.clone(), inbox);
        dep.run_for(NANOS_PER_SEC / 20);
    }
    dep.run_for(2 * NANOS_PER_SEC);

    for &(s, a, round) in &system.stream {
        let plan = &system.services[s];
        let topic = &plan.advertises[a].0;
        let payload = format!("{}:{}:{round}", plan.name, topic).into_bytes();
        handles[&plan.name].publish(topic, payload).unwrap();
        dep.run_for(NANOS_PER_SEC / 10);
    }
    dep.run_for(2 * NANOS_PER_SEC);

    let mut errors = Vec::new();
    for plan in &system.services {
        let wanted: BTreeSet<&str> = plan.requests.iter().map(|(t, _)| t.as_str()).collect();
        let mut got: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for env in inboxes[&plan.name].all() {
            *got.entry(env.payload.to_vec()).or_default() += 1;
        }
        let mut expected: BTreeMap<Vec<u8>, usize> = BTreeMap::new();
        for &(s, a, round) in &system.stream {
            let other = &system.services[s];
            let topic = &other.advertises[a].0;
            if other.name != plan.name && wanted.contains(topic.as_str()) {
                expected.insert(format!("{}:{}:{round}", other.name, topic).into_bytes(), 1);
            }
        }
        if got != expected {
            errors.push(format!("{}: got {:?} want {:?}", plan.name, render(&got), render(&expected)));
        }
    }
    let (offered, settled) = super::accounting(dep.metrics());
    let out = Outcome {
        installed: dep.installed_bridges(),
        expected: dep.expected_bridges(),
        loop_detections: dep.metrics().counter_sum(LOOP_DETECTIONS, &[]),
        offered,
        settled,
        delivery_errors: errors,
        published: system.stream.len(),
        unbalanced: super::unbalanced_topics(dep.metrics()),
    };
    dep.shutdown();
    out
}

fn render(m: &BTreeMap<Vec<u8>, usize>) -> Vec<String> {
    m.iter().map(|(k, v)| format!("{}x{v}", String::from_utf8_lossy(k))).collect()
}

fn scope_of(dep: &Arc<Deployment>, text: &str) -> BrokerScope {
    dep.topology().parse_scope(text).unwrap()
}
