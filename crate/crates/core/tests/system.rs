// SPDX-License-Identifier: Apache-2.0

mod common;

use common::*;
use flowbridge::clock::NANOS_PER_SEC;
use flowbridge::config::ConfigScope;
use flowbridge::monitor::{ProbeSettings, PING_TOPIC};
use flowbridge::sdk::{DeploymentSettings, ServiceBuilder};
use flowbridge::simnet::LinkSpec;
use flowbridge::topology::{BrokerScope, Topology};
use serde_json::json;

#[test]
fn config_change_reaches_every_limiter() {
    let dep = deployment(THREE_LAYERS, DeploymentSettings::default());
    dep.run_for(NANOS_PER_SEC);
    for e in dep.engines() {
        assert_eq!(e.limiter().config().limit_mbps, 160.0);
    }
    let edge = dep.topology().layer("edge").unwrap().id.clone();
    dep.main_store().main_put(ConfigScope::Layer, "edge", json!({"rate_limit": {"limit_mbps": 80.0}})).unwrap();
    dep.run_for(6 * NANOS_PER_SEC);
    for e in dep.engines() {
        let want = if e.node().layer == edge { 80.0 } else { 160.0 };
        assert_eq!(e.limiter().config().limit_mbps, want, "{}", e.node());
    }
    let notices = dep.worker(&edge).notices();
    assert_eq!(notices.len(), 1);
    assert!(notices[0].touches("rate_limit"));
    let fog = dep.topology().layer("fog").unwrap().id.clone();
    assert!(dep.worker(&fog).notices().is_empty());
}

#[test]
fn invalid_rate_limit_is_ignored() {
    let dep = deployment(THREE_LAYERS, DeploymentSettings::default());
    dep.main_store().main_put(ConfigScope::Layer, "edge", json!({"rate_limit": {"limit_mbps": -3}})).unwrap();
    dep.run_for(6 * NANOS_PER_SEC);
    for e in dep.engines() {
        assert_eq!(e.limiter().config().limit_mbps, 160.0);
    }
}

#[test]
fn workers_see_service_documents() {
    let dep = deployment(THREE_LAYERS, DeploymentSettings::default());
    dep.main_store().main_put(ConfigScope::Service, "camera", json!({"fps": 30})).unwrap();
    dep.run_for(6 * NANOS_PER_SEC);
    for layer in dep.topology().layer_ids() {
        let doc = dep.worker(layer).get_config(ConfigScope::Service, "camera").unwrap();
        assert_eq!(doc.body["fps"], 30);
    }
}

fn two_layers(one_way_ms: f64) -> Topology {
    let topo = Topology::from_toml(THREE_LAYERS).unwrap().without_layer("fog");
    let edge = topo.layer("edge").unwrap().id.clone();
    let cloud = topo.layer("cloud").unwrap().id.clone();
    topo.with_link(LinkSpec::new(BrokerScope::inter_layer(&edge), BrokerScope::inter_layer(&cloud), one_way_ms))
}

#[test]
fn probe_measures_half_round_trip() {
    let settings = DeploymentSettings {
        probe: Some(ProbeSettings::for_max_one_way_ms(50.0)),
        ..DeploymentSettings::default()
    };
    let dep = flowbridge::sdk::Deployment::new(two_layers(50.0), settings).unwrap();
    dep.run_for(20 * NANOS_PER_SEC);
    let robot = node(&dep, "edge/robot");
    let cloud = node(&dep, "cloud/cloud-1");
    let probe = dep.probe(&robot).unwrap();
    let far = probe.samples_to(&cloud);
    assert!(far.len() >= 15, "{} samples", far.len());
    for s in &far {
        // 0.1 ms intra-node hop on both ends around the 50 ms link
        assert!((s - 50.2).abs() < 1e-6, "{s}");
    }
    let near = probe.samples_to(&robot);
    assert!(!near.is_empty());
    assert!(near.iter().all(|s| *s < 1.0));
    assert_eq!(dep.metrics().counter_sum("ping_timeouts_total", &[]), 0.0);
    assert!(dep.service(&robot, "__monitor").unwrap().declarations().iter().any(|d| d.topic == PING_TOPIC));
}

#[test]
fn large_topic_is_throttled_small_ones_are_not() {
    let topo = two_layers(10.0);
    let edge = topo.layer("edge").unwrap().id.clone();
    let cloud = topo.layer("cloud").unwrap().id.clone();
    let topo = topo.with_link(
        LinkSpec::new(BrokerScope::inter_layer(&edge), BrokerScope::inter_layer(&cloud), 10.0).with_bandwidth(160.0),
    );
    let dep = flowbridge::sdk::Deployment::new(topo, DeploymentSettings::default()).unwrap();
    let robot = node(&dep, "edge/robot");
    let cloud_node = node(&dep, "cloud/cloud-1");
    let image = dep.start_service(ServiceBuilder::new("camera", robot.clone()).advertise("image", 30.0, 1_000_000)).unwrap();
    let odom = dep.start_service(ServiceBuilder::new("odom", robot).advertise("odom", 50.0, 200)).unwrap();
    let images = Inbox::default();
    let odoms = Inbox::default();
    dep.start_service(ServiceBuilder::new("sink", cloud_node).request("image", images.sink()).request("odom", odoms.sink()))
        .unwrap();
    dep.run_for(NANOS_PER_SEC);
    let secs = 10u64;
    let start = dep.now();
    for i in 0..(secs * 150) {
        let t = start + i * NANOS_PER_SEC / 150;
        dep.run_until(t);
        if i % 5 == 0 {
            image.publish("image", vec![(i % 251) as u8; 1_000_000]).unwrap();
        }
        if i % 3 == 0 {
            odom.publish("odom", vec![1; 200]).unwrap();
        }
    }
    dep.run_for(NANOS_PER_SEC);
    assert_eq!(odoms.len(), (secs * 50) as usize);
    let image_hz = images.len() as f64 / secs as f64;
    let engine = dep.engine(&node(&dep, "edge/robot"));
    let r = engine.limiter().allocation("image").unwrap().allocated_rate;
    assert!(image_hz < 30.0);
    assert!((image_hz - r).abs() / r < 0.05, "{image_hz} vs {r}");
}
