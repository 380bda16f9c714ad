// SPDX-License-Identifier: Apache-2.0

use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::payload::PayloadGen;
use super::spec::{ScenarioSpec, VariantSpec};
use super::summary::{summarize, Summary};
use super::{
    ScenarioError, BRIDGES_FILE, DROPS_FILE, DURATION_GAUGE, INVENTORY_FILE, LINKS_FILE, METRICS_FILE,
    NET_LATENCY_FILE, TOPICS_FILE, TRACE_FILE,
};
use crate::clock::{from_millis_f64, from_secs_f64, Nanos, NANOS_PER_SEC};
use crate::flow::LOOP_DETECTIONS;
use crate::monitor::{labels, parse_export, ProbeSettings};
use crate::ratelimit::RateLimitConfig;
use crate::sdk::{Deployment, DeploymentSettings, ServiceBuilder};
use crate::simnet::{LinkSpec, TimerHandle};
use crate::topology::{LinkEntry, Topology};

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Replaces the scenario's seed.
    pub seed: Option<u64>,
    pub duration_override: Option<f64>,
    /// Paces events against the wall clock.
    pub real_time: bool,
}

/// Outcome of one run (one variant).
#[derive(Debug, Clone)]
pub struct VariantRun {
    pub name: Option<String>,
    pub metrics_export: String,
    /// Line-delimited JSON trace records.
    pub trace: String,
    pub summary: Summary,
    /// Bridges installed at the end of the run.
    pub inventory: Vec<String>,
    pub violations: Vec<String>,
}

impl VariantRun {
    pub fn write_to(&self, dir: &Path) -> Result<(), ScenarioError> {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        let files = [
            (METRICS_FILE, self.metrics_export.clone()),
            (TRACE_FILE, self.trace.clone()),
            (TOPICS_FILE, self.summary.topics_csv()),
            (DROPS_FILE, self.summary.drops_csv()),
            (LINKS_FILE, self.summary.links_csv()),
            (BRIDGES_FILE, self.summary.bridges_csv()),
            (NET_LATENCY_FILE, self.summary.net_latency_csv()),
            (INVENTORY_FILE, self.inventory.iter().map(|l| format!("{l}\n")).collect()),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(|e| io_err(&path, e))?;
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> ScenarioError {
    ScenarioError::Io(format!("{}: {e}", path.display()))
}

/// Loads both files, runs every variant (or the single base run) and writes
/// results under `out`, one subdirectory per variant.
pub fn run_scenario_files(
    topology: &Path,
    scenario: &Path,
    out: &Path,
    opts: &RunOptions,
) -> Result<Vec<VariantRun>, ScenarioError> {
    let topo_text = std::fs::read_to_string(topology).map_err(|e| io_err(topology, e))?;
    let scen_text = std::fs::read_to_string(scenario).map_err(|e| io_err(scenario, e))?;
    let topo = Topology::from_toml(&topo_text)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", topology.display())))?;
    let spec = ScenarioSpec::from_toml(&scen_text)
        .map_err(|e| ScenarioError::Parse(format!("{}: {e}", scenario.display())))?;
    run_scenario(&topo, &spec, Some(out), opts)
}

pub fn run_scenario(
    topology: &Topology,
    spec: &ScenarioSpec,
    out: Option<&Path>,
    opts: &RunOptions,
) -> Result<Vec<VariantRun>, ScenarioError> {
    let variants: Vec<Option<&VariantSpec>> =
        if spec.variants.is_empty() { vec![None] } else { spec.variants.iter().map(Some).collect() };
    let mut runs = Vec::new();
    for v in variants {
        let run = run_variant(topology, spec, v, opts)?;
        if let Some(out) = out {
            let dir: PathBuf = match &run.name {
                Some(name) => out.join(name),
                None => out.to_path_buf(),
            };
            run.write_to(&dir)?;
        }
        runs.push(run);
    }
    let violations: Vec<String> = runs
        .iter()
        .flat_map(|r| r.violations.iter().map(move |v| format!("{}: {v}", r.name.as_deref().unwrap_or("run"))))
        .collect();
    if violations.is_empty() {
        Ok(runs)
    } else {
        Err(ScenarioError::Invariant(violations.join("; ")))
    }
}

fn link_from(topo: &Topology, entry: &LinkEntry) -> Result<LinkSpec, ScenarioError> {
    let parse = |s: &str| topo.parse_scope(s).map_err(|e| ScenarioError::Parse(e.to_string()));
    let link = LinkSpec {
        latency_ms: entry.latency_ms,
        jitter_ms: entry.jitter_ms,
        loss: entry.loss,
        bandwidth_mbps: entry.bandwidth_mbps,
        connects: (parse(&entry.a)?, parse(&entry.b)?),
    };
    link.validate().map_err(ScenarioError::Parse)?;
    Ok(link)
}

fn rate_limit(spec: &ScenarioSpec) -> Result<RateLimitConfig, ScenarioError> {
    let base = RateLimitConfig::default();
    let Some(overlay) = &spec.rate_limit else {
        return Ok(base);
    };
    let Value::Object(overlay) = overlay else {
        return Err(ScenarioError::Parse("rate_limit must be a table".into()));
    };
    let mut merged = serde_json::to_value(&base).unwrap_or(json!({}));
    if let Value::Object(m) = &mut merged {
        m.extend(overlay.clone());
    }
    let cfg: RateLimitConfig =
        serde_json::from_value(merged).map_err(|e| ScenarioError::Parse(format!("rate_limit: {e}")))?;
    cfg.validate().map_err(|e| ScenarioError::Parse(format!("rate_limit: {e}")))?;
    Ok(cfg)
}

fn stream_seed(seed: u64, service: &str, topic: &str) -> u64 {
    let digest = Sha256::new().chain_update(seed.to_le_bytes()).chain_update(service).chain_update([0]).chain_update(topic).finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

fn trace_jsonl(lines: &[String]) -> String {
    let mut out = String::new();
    for line in lines {
        let (at, event) = line.split_once(' ').unwrap_or(("0", line));
        let at: u64 = at.parse().unwrap_or(0);
        out.push_str(&json!({ "at_ns": at, "event": event }).to_string());
        out.push('\n');
    }
    out
}

pub fn run_variant(
    topology: &Topology,
    spec: &ScenarioSpec,
    variant: Option<&VariantSpec>,
    opts: &RunOptions,
) -> Result<VariantRun, ScenarioError> {
    let mut topo = topology.clone();
    for entry in &spec.links {
        let link = link_from(&topo, entry)?;
        topo = topo.with_link(link);
    }
    let seed = opts.seed.unwrap_or(spec.seed);
    let duration_s = opts.duration_override.unwrap_or(spec.duration_s);
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(ScenarioError::Parse(format!("invalid duration {duration_s}")));
    }
    let mut settings = DeploymentSettings { seed, trace: true, ..DeploymentSettings::default() };
    settings.engine.rate_limit = rate_limit(spec)?;
    if let Some(p) = &spec.probe {
        let slowest = topo.links().iter().map(|l| l.latency_ms + l.jitter_ms).fold(settings.links.intra_layer_ms, f64::max);
        let mut probe = ProbeSettings::for_max_one_way_ms(slowest);
        probe.period = from_millis_f64(p.period_ms);
        if let Some(t) = p.timeout_ms {
            probe.timeout = from_millis_f64(t);
        }
        settings.probe = Some(probe);
    }
    let dep = Deployment::new(topo, settings).map_err(|e| ScenarioError::Setup(e.to_string()))?;
    let end: Nanos = from_secs_f64(duration_s);

    let mut services = spec.placed(variant);
    services.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    let mut timers: Vec<TimerHandle> = Vec::new();
    let advance = |t: Nanos| {
        if opts.real_time {
            dep.sim().run_realtime(t.max(dep.now()));
        } else {
            dep.run_until(t.max(dep.now()));
        }
    };
    for svc in &services {
        let start = from_secs_f64(svc.start_s);
        if start >= end && end > 0 {
            continue;
        }
        advance(start);
        let node = dep
            .topology()
            .node(&svc.node)
            .cloned()
            .ok_or_else(|| ScenarioError::Parse(format!("service {}: unknown node {}", svc.name, svc.node)))?;
        let scope = |s: &Option<String>| -> Result<_, ScenarioError> {
            s.as_deref()
                .map(|s| dep.topology().parse_scope(s).map_err(|e| ScenarioError::Parse(e.to_string())))
                .transpose()
        };
        let mut b = ServiceBuilder::new(&svc.name, node);
        for a in &svc.advertise {
            b = match scope(&a.scope)? {
                Some(sc) => b.advertise_on(sc, &a.topic, a.rate_hz, a.size),
                None => b.advertise(&a.topic, a.rate_hz, a.size),
            };
        }
        for r in &svc.request {
            b = match scope(&r.scope)? {
                Some(sc) => b.request_on(sc, &r.topic, |_| {}),
                None => b.request(&r.topic, |_| {}),
            };
        }
        let handle = dep.start_service(b).map_err(|e| ScenarioError::Parse(format!("service {}: {e}", svc.name)))?;
        for a in &svc.advertise {
            let gen = Mutex::new(PayloadGen::new(a.payload, a.size as usize, stream_seed(seed, &svc.name, &a.topic)));
            let period = from_secs_f64(1.0 / a.rate_hz).max(1);
            let handle = handle.clone();
            let topic = a.topic.clone();
            let sim = Arc::downgrade(dep.sim());
            timers.push(dep.sim().schedule_every(dep.now(), period, move || {
                let Some(sim) = sim.upgrade() else { return };
                if sim.now() < end {
                    let _ = handle.publish(&topic, gen.lock().next_payload());
                }
            }));
        }
    }

    let mut violations = Vec::new();
    let mut t = dep.now();
    while t < end {
        t = (t + NANOS_PER_SEC).min(end);
        advance(t);
        let loops = dep.metrics().counter_sum(LOOP_DETECTIONS, &[]);
        if loops > 0.0 {
            violations.push(format!("{loops} forwarding loop detections by t={}s", t as f64 / 1e9));
            break;
        }
    }
    for timer in timers {
        timer.cancel();
    }
    advance(dep.now() + from_secs_f64(spec.drain_s));
    dep.metrics().record(DURATION_GAUGE, labels(&[]), duration_s);

    let mut export = Vec::new();
    dep.metrics().export(&mut export).map_err(|e| ScenarioError::Io(e.to_string()))?;
    let metrics_export = String::from_utf8(export).map_err(|e| ScenarioError::Io(e.to_string()))?;
    let points = parse_export(&metrics_export).map_err(|e| ScenarioError::Schema(e.to_string()))?;
    let summary = summarize(&points);
    if violations.is_empty() {
        for (topic, row) in &summary.drops {
            if !row.balanced() {
                violations.push(format!("accounting mismatch on {topic}: {row:?}"));
            }
            if row.loops > 0.0 {
                violations.push(format!("loop detections on {topic}"));
            }
        }
        let installed = dep.installed_bridges();
        let expected = dep.expected_bridges();
        if installed != expected {
            let show = |v: &[crate::flow::BridgeSpec]| v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ");
            violations.push(format!("installed bridges [{}] differ from expected [{}]", show(&installed), show(&expected)));
        }
    }
    let inventory = dep.installed_bridges().iter().map(ToString::to_string).collect();
    let trace = trace_jsonl(&dep.sim().trace_lines());
    dep.shutdown();
    Ok(VariantRun {
        name: variant.map(|v| v.name.clone()),
        metrics_export,
        trace,
        summary,
        inventory,
        violations,
    })
}
