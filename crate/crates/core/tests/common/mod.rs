// SPDX-License-Identifier: Apache-2.0
#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::Arc;

use parking_lot::Mutex;

use flowbridge::flow::BridgeSpec;
use flowbridge::sdk::{Deployment, DeploymentSettings};
use flowbridge::topology::{MessageEnvelope, NodeId, Topology};

pub const THREE_LAYERS: &str = r#"
[[layers]]
name = "edge"
kind = "edge"
external_protocol = true

[[layers]]
name = "fog"
kind = "fog"
external_protocol = true

[[layers]]
name = "cloud"
kind = "cloud"

[[nodes]]
layer = "edge"
name = "robot"

[[nodes]]
layer = "edge"
name = "robot-2"

[[nodes]]
layer = "fog"
name = "fog-1"

[[nodes]]
layer = "cloud"
name = "cloud-1"
"#;

pub fn deployment(topo: &str, settings: DeploymentSettings) -> Arc<Deployment> {
    Deployment::new(Topology::from_toml(topo).unwrap(), settings).unwrap()
}

pub fn traced() -> DeploymentSettings {
    DeploymentSettings { trace: true, ..DeploymentSettings::default() }
}

pub fn node(dep: &Deployment, path: &str) -> NodeId {
    dep.topology().node(path).unwrap().clone()
}

pub fn bridge_names(bridges: &[BridgeSpec]) -> BTreeSet<String> {
    bridges.iter().map(ToString::to_string).collect()
}

pub fn names(items: &[&str]) -> BTreeSet<String> {
    items.iter().map(ToString::to_string).collect()
}

/// Records every delivered envelope.
#[derive(Clone, Default)]
pub struct Inbox(pub Arc<Mutex<Vec<MessageEnvelope>>>);

impl Inbox {
    pub fn sink(&self) -> impl Fn(&MessageEnvelope) + Send + Sync + 'static {
        let inner = self.0.clone();
        move |env| inner.lock().push(env.clone())
    }

    pub fn len(&self) -> usize {
        self.0.lock().len()
    }

    pub fn all(&self) -> Vec<MessageEnvelope> {
        self.0.lock().clone()
    }
}

pub mod random;

use flowbridge::flow::{CORRUPT_DROPS, DEDUPE_DROPS, DELIVERED, LIMITER_DROPS, LOOP_DETECTIONS};
use flowbridge::monitor::MetricsRegistry;
use flowbridge::simnet::{LOSS_DROPS, OFFERED, UNSUBSCRIBED_DROPS};

/// (offered, sum of delivered and every drop class)
pub fn accounting(metrics: &MetricsRegistry) -> (f64, f64) {
    let offered = metrics.counter_sum(OFFERED, &[]);
    let settled = [DELIVERED, LIMITER_DROPS, LOSS_DROPS, DEDUPE_DROPS, UNSUBSCRIBED_DROPS, LOOP_DETECTIONS, CORRUPT_DROPS]
        .iter()
        .map(|m| metrics.counter_sum(m, &[]))
        .sum();
    (offered, settled)
}

/// Topics whose offered count differs from delivered plus drops.
pub fn unbalanced_topics(metrics: &MetricsRegistry) -> Vec<String> {
    let mut bad = Vec::new();
    for topic in metrics.label_values(OFFERED, "topic") {
        let offered = metrics.counter_sum(OFFERED, &[("topic", &topic)]);
        let settled: f64 =
            [DELIVERED, LIMITER_DROPS, LOSS_DROPS, DEDUPE_DROPS, UNSUBSCRIBED_DROPS, LOOP_DETECTIONS, CORRUPT_DROPS]
                .iter()
                .map(|m| metrics.counter_sum(m, &[("topic", &topic)]))
                .sum();
        if offered != settled {
            bad.push(format!("{topic}: offered {offered} settled {settled}"));
        }
    }
    bad
}
