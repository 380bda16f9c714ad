// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::json;

use common::*;
use flowbridge::clock::{from_secs_f64, Nanos, NANOS_PER_SEC};
use flowbridge::config::ConfigScope;
use flowbridge::flow::{DELIVERED, LIMITER_DROPS};
use flowbridge::monitor::ProbeSettings;
use flowbridge::ratelimit::compress::{compress, decompress, DEFAULT_LEVEL};
use flowbridge::ratelimit::{allocate, available_bandwidth, PublisherRecord, RateLimitConfig, TokenBucket};
use flowbridge::scenario::{bundled, compressible_corpus, run_scenario, run_variant, RunOptions, ScenarioSpec};
use flowbridge::sdk::{Deployment, DeploymentSettings, ServiceBuilder};
use flowbridge::simnet::{LinkSpec, LOSS_DROPS};
use flowbridge::topology::{BrokerScope, Topology};

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 14] = [
        ("allocator oracle equivalence", allocator_oracle),
        ("single large publisher rate", single_large_publisher),
        ("token bucket throughput", token_bucket_throughput),
        ("starvation floor", starvation_floor),
        ("small-message priority under saturation", small_message_priority),
        ("two-service handshake", handshake),
        ("one-to-many bridges", one_to_many),
        ("loop freedom over random systems", loop_freedom),
        ("latency emulation fidelity", latency_fidelity),
        ("incomplete topology", incomplete_topology),
        ("config propagation", config_propagation),
        ("watchdog teardown", watchdog_teardown),
        ("compression round trip and ratio", compression),
        ("determinism", determinism),
    ];
    let only: Option<usize> = std::env::var("ACCEPTANCE_ONLY").ok().and_then(|v| v.parse().ok());
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.is_some_and(|o| o != n) {
            continue;
        }
        let started = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match result {
            Ok(detail) => println!("criterion {n:>2} PASS {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("criterion {n:>2} FAIL {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn rel_err(got: f64, want: f64) -> f64 {
    if got == want {
        0.0
    } else {
        (got - want).abs() / want.abs().max(got.abs())
    }
}

// ---- rate limiter ----

struct OraclePub {
    topic: String,
    rate: f64,
    size: f64,
    large: bool,
}

/// Step-by-step evaluation of the allocation rules: budget from the megabit
/// limit, standard publishers before large ones, the largest remaining
/// demand picked next (lowest topic name on ties), each capped by its
/// advertised rate, what is left and the per-publisher share, then large
/// publishers lifted to the floor.
fn oracle(cfg: &RateLimitConfig, pubs: &[OraclePub]) -> Vec<(String, f64)> {
    let budget = cfg.limit_mbps * 1_048_576.0 / 8.0;
    let mut remaining = budget;
    let mut out = Vec::new();
    for large in [false, true] {
        let mut left: Vec<&OraclePub> = pubs.iter().filter(|p| p.large == large).collect();
        while !left.is_empty() {
            let mut best = 0;
            for (i, p) in left.iter().enumerate() {
                let (d, bd) = (p.rate * p.size * cfg.alpha, left[best].rate * left[best].size * cfg.alpha);
                if d > bd || (d == bd && p.topic < left[best].topic) {
                    best = i;
                }
            }
            let p = left.remove(best);
            let unit = p.size * cfg.alpha;
            let mut rate = p.rate;
            if remaining / unit < rate {
                rate = remaining / unit;
            }
            if cfg.beta * budget / unit < rate {
                rate = cfg.beta * budget / unit;
            }
            if large {
                let floor = if cfg.min_rate_hz < p.rate { cfg.min_rate_hz } else { p.rate };
                if rate < floor {
                    rate = floor;
                }
            }
            remaining -= rate * unit;
            if remaining < 0.0 {
                remaining = 0.0;
            }
            out.push((p.topic.clone(), rate));
        }
    }
    out
}

const SIZES: [u64; 4] = [100, 10_000, 100_000, 1_000_000];

fn compare(cfg: &RateLimitConfig, set: &[(u64, u64)]) -> Result<f64, String> {
    let records: Vec<PublisherRecord> = set
        .iter()
        .enumerate()
        .map(|(i, &(r, s))| PublisherRecord::new(format!("p{i}"), r as f64, s, cfg))
        .collect();
    let pubs: Vec<OraclePub> = set
        .iter()
        .enumerate()
        .map(|(i, &(r, s))| OraclePub {
            topic: format!("p{i}"),
            rate: r as f64,
            size: s as f64,
            large: s >= cfg.large_threshold_bytes,
        })
        .collect();
    let plan = allocate(cfg, &records);
    let mut worst: f64 = 0.0;
    for (topic, want) in oracle(cfg, &pubs) {
        let got = plan.rate_of(&topic).ok_or_else(|| format!("{topic} missing"))?;
        let e = rel_err(got, want);
        if e > 1e-9 {
            return Err(format!("L={} set={set:?} {topic}: {got} vs oracle {want}", cfg.limit_mbps));
        }
        worst = worst.max(e);
    }
    Ok(worst)
}

fn allocator_oracle() -> Outcome {
    let started = Instant::now();
    let choices: Vec<(u64, u64)> = (1..=50).flat_map(|r| SIZES.iter().map(move |&s| (r, s))).collect();
    let mut cases = 0u64;
    let mut worst: f64 = 0.0;
    for limit in [1.0, 8.0, 40.0, 160.0] {
        let cfg = RateLimitConfig::default().with_limit(limit);
        compare(&cfg, &[]).map(|e| worst = worst.max(e))?;
        for &a in &choices {
            worst = worst.max(compare(&cfg, &[a])?);
            for &b in &choices {
                worst = worst.max(compare(&cfg, &[a, b])?);
            }
        }
        cases += 1 + choices.len() as u64 * (1 + choices.len() as u64);
        let mut rng = ChaCha8Rng::seed_from_u64(limit as u64);
        for n in [3, 4] {
            for _ in 0..20_000 {
                let set: Vec<(u64, u64)> = (0..n).map(|_| choices[rng.gen_range(0..choices.len())]).collect();
                worst = worst.max(compare(&cfg, &set)?);
                cases += 1;
            }
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "{cases} sets (exhaustive up to 2 publishers, 20000 sampled each of 3 and 4, L in 1/8/40/160 Mbps), max rel err {worst:.1e}"
    ))
}

fn single_large_publisher() -> Outcome {
    let cfg = RateLimitConfig::default();
    ensure!(cfg.limit_mbps == 160.0 && cfg.alpha == 1.02 && cfg.beta == 0.95, "defaults changed: {cfg:?}");
    let hand = 0.95 * 160.0 * 1_048_576.0 / 8.0 / (1_000_000.0 * 1.02);
    let got = allocate(&cfg, &[PublisherRecord::new("camera", 30.0, 1_000_000, &cfg)]).rate_of("camera").unwrap();
    ensure!((got - 19.5318).abs() <= 1e-3, "r_alloc {got}");
    ensure!(rel_err(got, hand) <= 1e-12, "r_alloc {got} vs hand {hand}");
    Ok(format!("r_alloc = {got:.6} Hz (hand oracle {hand:.6})"))
}

fn token_bucket_throughput() -> Outcome {
    let started = Instant::now();
    let r = 0.95 * 160.0 * 1_048_576.0 / 8.0 / (1_000_000.0 * 1.02);
    let mut burst = TokenBucket::new(r, 2.0, 0);
    let first = [burst.try_acquire(0), burst.try_acquire(0), burst.try_acquire(0)];
    ensure!(first == [true, true, false], "back-to-back grants {first:?}");

    let mut bucket = TokenBucket::new(r, 2.0, 0);
    let mut grants = 0;
    for k in 0..300u64 {
        if bucket.try_acquire(k * NANOS_PER_SEC / 30) {
            grants += 1;
        }
    }
    let elapsed = started.elapsed();
    ensure!((195..=197).contains(&grants), "{grants} grants");
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("burst {first:?}, {grants} grants of 300 offers at r = {r:.4} Hz"))
}

fn starvation_floor() -> Outcome {
    let cfg = RateLimitConfig::default().with_limit(1.0);
    let pubs = [
        PublisherRecord::new("telemetry", 50.0, 10_000, &cfg),
        PublisherRecord::new("camera", 30.0, 1_000_000, &cfg),
    ];
    let plan = allocate(&cfg, &pubs);
    ensure!(plan.remaining == 0.0, "budget not exhausted: {} B/s left", plan.remaining);
    let camera = plan.rate_of("camera").unwrap();
    ensure!(camera == cfg.min_rate_hz && camera == 2.0, "camera at {camera} Hz");
    Ok(format!("budget {} B/s exhausted by telemetry, camera held at {camera} Hz", available_bandwidth(&cfg)))
}

fn small_message_priority() -> Outcome {
    let topo = Topology::from_toml(bundled::TOPOLOGY).map_err(|e| e.to_string())?;
    let spec = ScenarioSpec::from_toml(bundled::ESTOP).map_err(|e| e.to_string())?;
    ensure!(spec.duration_s + spec.drain_s < 30.0, "scenario runs {} s", spec.duration_s + spec.drain_s);
    ensure!(
        spec.links.iter().filter(|l| l.a.starts_with("inter_layer") && l.b.starts_with("inter_layer")).all(|l| l.bandwidth_mbps == 160.0),
        "inter-layer links are not 160 Mbps"
    );
    let run = run_variant(&topo, &spec, None, &RunOptions::default()).map_err(|e| e.to_string())?;
    ensure!(run.violations.is_empty(), "violations: {:?}", run.violations);

    let cfg = RateLimitConfig::default();
    let camera = spec.services.iter().find(|s| s.name == "camera").unwrap();
    let driver = spec.services.iter().find(|s| s.name == "driver").unwrap();
    let records: Vec<PublisherRecord> = camera
        .advertise
        .iter()
        .chain(&driver.advertise)
        .map(|a| PublisherRecord::new(&a.topic, a.rate_hz, a.size, &cfg))
        .collect();
    let r_alloc = allocate(&cfg, &records).rate_of("image").unwrap();

    let mut worst_small = f64::INFINITY;
    for node in ["fog/fog-gpu3", "cloud/cloud-gpu2"] {
        for a in &driver.advertise {
            ensure!(a.size <= 500 && a.rate_hz <= 50.0, "{} is not small", a.topic);
            let row = run.summary.topic(&a.topic, node).ok_or_else(|| format!("no {} at {node}", a.topic))?;
            let ratio = row.rate_hz / a.rate_hz;
            ensure!(ratio >= 0.99, "{} at {node}: {} of {} Hz", a.topic, row.rate_hz, a.rate_hz);
            worst_small = worst_small.min(ratio);
        }
        let image = run.summary.topic("image", node).ok_or_else(|| format!("no image at {node}"))?;
        ensure!(image.rate_hz < 30.0, "image at {node}: {} Hz", image.rate_hz);
        ensure!(
            (image.rate_hz - r_alloc).abs() <= 0.05 * r_alloc,
            "image at {node}: {} Hz vs r_alloc {r_alloc}",
            image.rate_hz
        );
    }
    Ok(format!(
        "{} small topics at >= {:.2}% of advertised on fog and cloud; image {:.2} Hz vs r_alloc {r_alloc:.4} Hz",
        driver.advertise.len(),
        worst_small * 100.0,
        run.summary.topic("image", "cloud/cloud-gpu2").unwrap().rate_hz
    ))
}

// ---- flow engine ----

fn trace_matching(dep: &Deployment, prefix: &str) -> Vec<String> {
    dep.sim()
        .trace_lines()
        .into_iter()
        .filter(|l| l.split_once(' ').is_some_and(|(_, text)| text.starts_with(prefix)))
        .collect()
}

fn installed_from_trace(dep: &Deployment) -> BTreeSet<String> {
    let mut set = BTreeSet::new();
    for line in dep.sim().trace_lines() {
        let Some((_, text)) = line.split_once(' ') else { continue };
        if let Some(b) = text.strip_prefix("bridge+ ") {
            set.insert(b.to_string());
        } else if let Some(b) = text.strip_prefix("bridge- ") {
            set.remove(b);
        }
    }
    set
}

fn two_service(topo: Topology, requester: &str) -> Result<(BTreeSet<String>, usize, usize, Vec<String>), String> {
    let dep = Deployment::new(topo, traced()).map_err(|e| e.to_string())?;
    let robot = node(&dep, "edge/robot");
    let other = node(&dep, requester);
    let s1 = dep.start_service(ServiceBuilder::new("service1", robot).advertise("topic1", 10.0, 100)).unwrap();
    dep.run_for(NANOS_PER_SEC / 2);
    let inbox = Inbox::default();
    dep.start_service(ServiceBuilder::new("service2", other.clone()).request("topic1", inbox.sink())).unwrap();
    dep.run_for(NANOS_PER_SEC / 2);
    s1.publish("topic1", b"hello".to_vec()).unwrap();
    dep.run_for(NANOS_PER_SEC);
    let added = trace_matching(&dep, "bridge+ ");
    let deliveries = trace_matching(&dep, &format!("deliver intra_layer:{} topic1 ", other.layer)).len();
    let expected = bridge_names(&dep.expected_bridges());
    let installed = installed_from_trace(&dep);
    if installed != expected {
        return Err(format!("trace bridges {installed:?} vs expected {expected:?}"));
    }
    Ok((installed, deliveries, inbox.len(), added))
}

fn handshake() -> Outcome {
    let topo = Topology::from_toml(THREE_LAYERS).unwrap();
    let (installed, deliveries, received, added) = two_service(topo, "fog/fog-1")?;
    let want = names(&[
        "topic1 intra_node:edge/robot->inter_layer:edge @edge/robot",
        "topic1 inter_layer:edge->intra_layer:fog @fog/fog-1",
    ]);
    ensure!(added.len() == 2, "bridge+ events: {added:?}");
    ensure!(installed == want, "bridges {installed:?}");
    ensure!(deliveries == 1 && received == 1, "{deliveries} traced deliveries, {received} received");
    Ok("2 bridge+ events with the expected names, 1 delivery to service2".into())
}

fn one_to_many() -> Outcome {
    let dep = deployment(THREE_LAYERS, traced());
    let robot = node(&dep, "edge/robot");
    let robot2 = node(&dep, "edge/robot-2");
    let fog = node(&dep, "fog/fog-1");
    let cloud = node(&dep, "cloud/cloud-1");
    let ext_edge = BrokerScope::external(&robot.layer);
    let ext_fog = BrokerScope::external(&fog.layer);
    let s1 = dep
        .start_service(ServiceBuilder::new("service1", robot.clone()).advertise_on(ext_edge.clone(), "t", 10.0, 100))
        .unwrap();
    let inboxes: Vec<Inbox> = (0..4).map(|_| Inbox::default()).collect();
    dep.start_service(ServiceBuilder::new("service2", robot).request("t", inboxes[0].sink())).unwrap();
    dep.start_service(ServiceBuilder::new("service2", cloud).request("t", inboxes[1].sink())).unwrap();
    dep.start_service(ServiceBuilder::new("service3", robot2).request_on(ext_edge, "t", inboxes[2].sink())).unwrap();
    dep.start_service(ServiceBuilder::new("service3", fog).request_on(ext_fog, "t", inboxes[3].sink())).unwrap();
    dep.run_for(NANOS_PER_SEC / 2);
    let want = names(&[
        "t external_protocol:edge->intra_node:edge/robot @edge/robot",
        "t external_protocol:edge->inter_layer:edge @edge/robot",
        "t inter_layer:edge->intra_layer:cloud @cloud/cloud-1",
        "t inter_layer:edge->external_protocol:fog @fog/fog-1",
    ]);
    let installed = bridge_names(&dep.installed_bridges());
    ensure!(installed == want, "bridges {installed:?}");
    ensure!(installed_from_trace(&dep) == want, "trace disagrees with inventory");
    ensure!(!installed.iter().any(|b| b.contains("robot-2")), "bridge for the same-layer external requester");
    s1.publish("t", vec![1]).unwrap();
    dep.run_for(NANOS_PER_SEC);
    let counts: Vec<usize> = inboxes.iter().map(Inbox::len).collect();
    ensure!(counts == [1, 1, 1, 1], "deliveries per requester {counts:?}");
    Ok("4 bridges, none for the robot-2 external requester, each requester received 1 message".into())
}

fn loop_freedom() -> Outcome {
    let started = Instant::now();
    let results: Vec<(u64, random::Outcome, usize)> = (0..500u64)
        .into_par_iter()
        .map(|i| {
            let system = random::random_system(i);
            let services = system.services.len();
            (i, random::run(&system, i.wrapping_mul(0x9e37_79b9_7f4a_7c15)), services)
        })
        .collect();
    let elapsed = started.elapsed();
    let mut published = 0;
    for (seed, out, _) in &results {
        ensure!(out.delivery_errors.is_empty(), "seed {seed}: {:?}", out.delivery_errors);
        ensure!(out.loop_detections == 0.0, "seed {seed}: {} loop detections", out.loop_detections);
        ensure!(out.unbalanced.is_empty(), "seed {seed}: unbalanced {:?}", out.unbalanced);
        ensure!(out.offered == out.settled, "seed {seed}: offered {} settled {}", out.offered, out.settled);
        ensure!(out.installed == out.expected, "seed {seed}: bridge set differs from expected");
        published += out.published;
    }
    ensure!(elapsed < Duration::from_secs(120), "took {elapsed:?}");
    Ok(format!("500 systems, {published} messages, no duplicates, no loops, per-topic accounting balanced"))
}

// ---- network emulation ----

fn edge_cloud(link: LinkSpec) -> Topology {
    Topology::from_toml(THREE_LAYERS).unwrap().without_layer("fog").with_link(link)
}

fn wan_link() -> LinkSpec {
    let topo = Topology::from_toml(THREE_LAYERS).unwrap();
    let edge = topo.layer("edge").unwrap().id.clone();
    let cloud = topo.layer("cloud").unwrap().id.clone();
    LinkSpec::new(BrokerScope::inter_layer(&edge), BrokerScope::inter_layer(&cloud), 50.0)
        .with_jitter(10.0)
        .with_loss(0.0001)
}

fn latency_fidelity() -> Outcome {
    let probe = ProbeSettings { period: NANOS_PER_SEC / 10, ..ProbeSettings::for_max_one_way_ms(60.0) };
    let dep = Deployment::new(
        edge_cloud(wan_link()),
        DeploymentSettings { seed: 9, probe: Some(probe), ..DeploymentSettings::default() },
    )
    .map_err(|e| e.to_string())?;
    dep.run_for(110 * NANOS_PER_SEC);
    let samples = dep.probe(&node(&dep, "edge/robot")).unwrap().samples_to(&node(&dep, "cloud/cloud-1"));
    let mean = samples.iter().sum::<f64>() / samples.len() as f64;
    ensure!(samples.len() >= 1000, "{} samples", samples.len());
    ensure!((49.0..=51.0).contains(&mean), "mean {mean} ms");
    dep.shutdown();

    // loss over 1e5 data messages crossing the same link
    let n: u64 = 100_000;
    let p = 0.0001;
    let dep = Deployment::new(edge_cloud(wan_link()), DeploymentSettings { seed: 10, ..DeploymentSettings::default() })
        .map_err(|e| e.to_string())?;
    let src = dep.start_service(ServiceBuilder::new("bulk", node(&dep, "edge/robot")).advertise("bulk", 1000.0, 16)).unwrap();
    dep.start_service(ServiceBuilder::new("sink", node(&dep, "cloud/cloud-1")).request("bulk", |_| {})).unwrap();
    dep.run_for(NANOS_PER_SEC);
    let start: Nanos = dep.now();
    for k in 0..n {
        dep.run_until(start + k * NANOS_PER_SEC / 1000);
        src.publish("bulk", vec![0; 16]).unwrap();
    }
    dep.run_for(NANOS_PER_SEC);
    let m = dep.metrics();
    let limited = m.counter_sum(LIMITER_DROPS, &[("topic", "bulk")]);
    let lost = m.counter_sum(LOSS_DROPS, &[("topic", "bulk")]);
    let delivered = m.counter_sum(DELIVERED, &[("topic", "bulk"), ("via", "service")]);
    ensure!(limited == 0.0, "{limited} limiter drops");
    ensure!(delivered + lost == n as f64, "delivered {delivered} + lost {lost} != {n}");
    let sigma = (n as f64 * p * (1.0 - p)).sqrt();
    let (lo, hi) = (n as f64 * p - 4.0 * sigma, n as f64 * p + 4.0 * sigma);
    ensure!(lost >= lo && lost <= hi, "{lost} lost, bounds [{lo:.2}, {hi:.2}]");
    Ok(format!(
        "mean {mean:.3} ms over {} probe samples; {lost} of {n} lost ({:.4}%, bounds {:.4}%..{:.4}%)",
        samples.len(),
        lost / n as f64 * 100.0,
        (lo / n as f64 * 100.0).max(0.0),
        hi / n as f64 * 100.0
    ))
}

fn incomplete_topology() -> Outcome {
    let topo = Topology::from_toml(THREE_LAYERS).unwrap().without_layer("fog");
    let (installed, deliveries, received, _) = two_service(topo, "cloud/cloud-1")?;
    let want = names(&[
        "topic1 intra_node:edge/robot->inter_layer:edge @edge/robot",
        "topic1 inter_layer:edge->intra_layer:cloud @cloud/cloud-1",
    ]);
    ensure!(installed == want, "bridges {installed:?}");
    ensure!(deliveries == 1 && received == 1, "{deliveries} traced deliveries, {received} received");
    Ok("no fog layer: 2 bridges edge->cloud, 1 delivery".into())
}

// ---- config ----

fn config_propagation() -> Outcome {
    let dep = deployment(THREE_LAYERS, DeploymentSettings::default());
    let layers: Vec<String> = dep.topology().layers().iter().map(|l| l.id.to_string()).collect();
    for layer in &layers {
        dep.main_store().main_put(ConfigScope::Layer, layer, json!({"rate_limit": {"limit_mbps": 160.0}})).unwrap();
    }
    let robot = node(&dep, "edge/robot");
    dep.start_service(
        ServiceBuilder::new("camera", robot.clone())
            .advertise("image", 30.0, 1_000_000)
            .advertise("lidar", 10.0, 200_000)
            .advertise("odom", 50.0, 200),
    )
    .unwrap();
    dep.start_service(
        ServiceBuilder::new("sink", node(&dep, "cloud/cloud-1"))
            .request("image", |_| {})
            .request("lidar", |_| {})
            .request("odom", |_| {}),
    )
    .unwrap();
    dep.run_for(NANOS_PER_SEC);

    let limiter = dep.engine(&robot).limiter();
    let check = |mbps: f64| -> Result<usize, String> {
        let cfg = RateLimitConfig::default().with_limit(mbps);
        let records = limiter.records();
        let pubs: Vec<OraclePub> = records
            .iter()
            .map(|r| OraclePub {
                topic: r.topic.clone(),
                rate: r.advertised_rate,
                size: r.max_size as f64,
                large: r.max_size >= cfg.large_threshold_bytes,
            })
            .collect();
        for (topic, want) in oracle(&cfg, &pubs) {
            let got = limiter.allocation(&topic).map(|a| a.allocated_rate);
            ensure!(got.is_some_and(|g| rel_err(g, want) <= 1e-9), "{topic} at {mbps} Mbps: {got:?} vs oracle {want}");
        }
        Ok(pubs.len())
    };
    check(160.0)?;

    let put_at = dep.now();
    for layer in &layers {
        dep.main_store().main_put(ConfigScope::Layer, layer, json!({"rate_limit": {"limit_mbps": 80.0}})).unwrap();
    }
    // one sync cycle; reallocation happens when the notice is handled
    dep.run_until(put_at + dep.settings().config_sync_period + NANOS_PER_SEC / 10);
    for e in dep.engines() {
        let got = e.limiter().config().limit_mbps;
        ensure!(got == 80.0, "{} still at {got} Mbps", e.node());
    }
    let publishers = check(80.0)?;
    for layer in dep.topology().layer_ids() {
        let notices: Vec<_> = dep.worker(layer).notices().into_iter().filter(|n| n.revision == 2).collect();
        ensure!(notices.len() == 1, "{layer}: {} notices for the change", notices.len());
        ensure!(notices[0].changed == ["rate_limit.limit_mbps"], "{layer}: changed {:?}", notices[0].changed);
    }
    let image = limiter.allocation("image").unwrap().allocated_rate;
    Ok(format!(
        "all limiters at 80 Mbps within one sync cycle, {publishers} allocations match the oracle (image {image:.4} Hz), one notice per worker"
    ))
}

// ---- watchdog ----

fn watchdog_teardown() -> Outcome {
    let dep = deployment(THREE_LAYERS, traced());
    let s1 = dep.start_service(ServiceBuilder::new("service1", node(&dep, "edge/robot")).advertise("topic1", 10.0, 100)).unwrap();
    let s2 = dep.start_service(ServiceBuilder::new("service2", node(&dep, "cloud/cloud-1")).request("topic1", |_| {})).unwrap();
    dep.run_for(NANOS_PER_SEC / 2);
    ensure!(dep.installed_bridges().len() == 2, "bridges {:?}", bridge_names(&dep.installed_bridges()));
    let crashed_at = dep.now();
    s2.crash();
    let settings = dep.settings();
    let ttl = settings.heartbeat_period * settings.ttl_factor;
    // ttl, one watchdog pass, one propagation round over the default links
    let deadline = crashed_at + ttl + settings.lease_check_period + from_secs_f64(0.1);
    dep.run_until(deadline);
    ensure!(dep.installed_bridges().is_empty(), "bridges left {:?}", bridge_names(&dep.installed_bridges()));
    let removals = trace_matching(&dep, "bridge- ");
    ensure!(removals.len() == 2, "bridge- events {removals:?}");
    let last_removal: Nanos = removals.iter().filter_map(|l| l.split(' ').next()?.parse().ok()).max().unwrap();
    ensure!(!trace_matching(&dep, "watchdog expired service2").is_empty(), "no watchdog expiry traced");

    let quiet_from = dep.now();
    for _ in 0..10 {
        s1.publish("topic1", vec![0; 100]).unwrap();
        dep.run_for(NANOS_PER_SEC / 10);
    }
    dep.run_for(NANOS_PER_SEC);
    let inter: Vec<String> = dep
        .sim()
        .trace_lines()
        .into_iter()
        .filter(|l| {
            let mut parts = l.split(' ');
            let at: Nanos = parts.next().and_then(|t| t.parse().ok()).unwrap_or(0);
            at >= quiet_from && parts.nth(1).is_some_and(|scope| scope.starts_with("inter_layer")) && l.contains(" topic1 ")
        })
        .collect();
    ensure!(inter.is_empty(), "inter-layer traffic after teardown: {inter:?}");
    Ok(format!(
        "bridges removed {:.3} s after the crash (ttl {} s), no inter-layer topic1 traffic for 10 publishes",
        (last_removal - crashed_at) as f64 / 1e9,
        ttl / NANOS_PER_SEC
    ))
}

// ---- compression ----

fn compression() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for len in [0usize, 1, 17, 4096, 65_536, 1 << 20] {
        let mut data = vec![0u8; len];
        rng.fill_bytes(&mut data);
        for level in [-1, 0, 1, DEFAULT_LEVEL] {
            let (packed, orig) = compress(&data, level).map_err(|e| e.to_string())?;
            ensure!(orig == len, "length {orig} for {len}");
            let back = decompress(&packed).map_err(|e| e.to_string())?;
            ensure!(back == data, "round trip differs at len {len} level {level}");
        }
    }
    let corpus = compressible_corpus(1 << 20, 1);
    let (packed, _) = compress(&corpus, DEFAULT_LEVEL).map_err(|e| e.to_string())?;
    ensure!(decompress(&packed).map_err(|e| e.to_string())? == corpus, "corpus round trip differs");
    let reduction = 1.0 - packed.len() as f64 / corpus.len() as f64;
    ensure!(reduction >= 0.40, "reduction {:.1}%", reduction * 100.0);
    Ok(format!("random payloads byte-exact; 1 MiB corpus reduced by {:.1}% at level {DEFAULT_LEVEL}", reduction * 100.0))
}

// ---- determinism ----

fn determinism() -> Outcome {
    let topo = Topology::from_toml(bundled::TOPOLOGY).map_err(|e| e.to_string())?;
    let mut report = Vec::new();
    for (name, text) in [("navigation", bundled::NAVIGATION), ("estop", bundled::ESTOP)] {
        let spec = ScenarioSpec::from_toml(text).map_err(|e| e.to_string())?;
        let a = run_scenario(&topo, &spec, None, &RunOptions::default()).map_err(|e| e.to_string())?;
        let b = run_scenario(&topo, &spec, None, &RunOptions::default()).map_err(|e| e.to_string())?;
        ensure!(a.len() == b.len(), "{name}: variant count differs");
        let mut bytes = 0;
        for (x, y) in a.iter().zip(&b) {
            ensure!(x.metrics_export == y.metrics_export, "{name} {:?}: metric exports differ", x.name);
            ensure!(x.trace == y.trace, "{name} {:?}: traces differ", x.name);
            bytes += x.metrics_export.len();
        }
        report.push(format!("{name} ({} variants, {bytes} export bytes)", a.len()));
    }
    Ok(format!("byte-identical exports and traces: {}", report.join(", ")))
}
