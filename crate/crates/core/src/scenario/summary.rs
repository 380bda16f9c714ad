// SPDX-License-Identifier: Apache-2.0

//! Summary tables computed purely from a metrics export.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use super::{ScenarioError, DURATION_GAUGE, METRICS_FILE};
use crate::flow::{BRIDGES_GAUGE, CORRUPT_DROPS, DEDUPE_DROPS, DELIVERED, LIMITER_DROPS, LOOP_DETECTIONS};
use crate::monitor::{parse_export, MetricKind, MetricPoint, MESSAGE_LATENCY, NET_LATENCY};
use crate::simnet::{LINK_BYTES, LINK_MESSAGES, LOSS_DROPS, OFFERED, UNSUBSCRIBED_DROPS};

#[derive(Debug, Clone, PartialEq)]
pub struct TopicRow {
    pub topic: String,
    pub node: String,
    pub delivered: f64,
    pub rate_hz: f64,
    pub latency_mean_ms: f64,
    pub latency_p50_ms: f64,
    pub latency_p95_ms: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DropRow {
    pub offered: f64,
    pub delivered: f64,
    pub limiter: f64,
    pub loss: f64,
    pub dedupe: f64,
    pub unsubscribed: f64,
    pub loops: f64,
    pub corrupt: f64,
}

impl DropRow {
    pub fn balanced(&self) -> bool {
        self.offered
            == self.delivered + self.limiter + self.loss + self.dedupe + self.unsubscribed + self.loops + self.corrupt
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinkRow {
    pub link: String,
    pub messages: f64,
    pub bytes: f64,
    pub mbps: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub duration_s: f64,
    /// Deliveries to services, per (topic, node).
    pub topics: Vec<TopicRow>,
    pub drops: BTreeMap<String, DropRow>,
    pub links: Vec<LinkRow>,
    /// (node, at_ns, installed bridges)
    pub bridges: Vec<(String, u64, f64)>,
    /// (source, target, mean ms, samples)
    pub net_latency: Vec<(String, String, f64, usize)>,
}

fn label<'a>(p: &'a MetricPoint, key: &str) -> &'a str {
    p.labels.get(key).map(String::as_str).unwrap_or("")
}

/// Nearest-rank percentile of sorted data.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = (q * sorted.len() as f64).ceil().max(1.0) as usize;
    sorted[rank.min(sorted.len()) - 1]
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn summarize(points: &[MetricPoint]) -> Summary {
    let duration_s = points.iter().find(|p| p.name == DURATION_GAUGE).map_or(0.0, |p| p.value);
    let mut delivered: BTreeMap<(String, String), f64> = BTreeMap::new();
    let mut latency: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    let mut drops: BTreeMap<String, DropRow> = BTreeMap::new();
    let mut links: BTreeMap<String, (f64, f64)> = BTreeMap::new();
    let mut bridges = Vec::new();
    let mut net: BTreeMap<(String, String), Vec<f64>> = BTreeMap::new();
    for p in points {
        let topic = label(p, "topic").to_owned();
        let row = || (topic.clone(), label(p, "node").to_owned());
        match (p.kind, p.name.as_str()) {
            (MetricKind::Counter, DELIVERED) => {
                drops.entry(topic.clone()).or_default().delivered += p.value;
                if label(p, "via") == "service" {
                    *delivered.entry(row()).or_default() += p.value;
                }
            }
            (MetricKind::Counter, OFFERED) => drops.entry(topic).or_default().offered += p.value,
            (MetricKind::Counter, LIMITER_DROPS) => drops.entry(topic).or_default().limiter += p.value,
            (MetricKind::Counter, LOSS_DROPS) => drops.entry(topic).or_default().loss += p.value,
            (MetricKind::Counter, DEDUPE_DROPS) => drops.entry(topic).or_default().dedupe += p.value,
            (MetricKind::Counter, UNSUBSCRIBED_DROPS) => drops.entry(topic).or_default().unsubscribed += p.value,
            (MetricKind::Counter, LOOP_DETECTIONS) => drops.entry(topic).or_default().loops += p.value,
            (MetricKind::Counter, CORRUPT_DROPS) => drops.entry(topic).or_default().corrupt += p.value,
            (MetricKind::Counter, LINK_BYTES) => links.entry(label(p, "link").to_owned()).or_default().1 += p.value,
            (MetricKind::Counter, LINK_MESSAGES) => {
                links.entry(label(p, "link").to_owned()).or_default().0 += p.value
            }
            (MetricKind::Gauge, MESSAGE_LATENCY) => latency.entry(row()).or_default().push(p.value),
            (MetricKind::Gauge, BRIDGES_GAUGE) => bridges.push((label(p, "node").to_owned(), p.at, p.value)),
            (MetricKind::Gauge, NET_LATENCY) => net
                .entry((label(p, "source").to_owned(), label(p, "target").to_owned()))
                .or_default()
                .push(p.value),
            _ => {}
        }
    }
    let mut keys: Vec<(String, String)> = delivered.keys().chain(latency.keys()).cloned().collect();
    keys.sort();
    keys.dedup();
    let topics = keys
        .into_iter()
        .map(|k| {
            let n = delivered.get(&k).copied().unwrap_or(0.0);
            let mut lat = latency.remove(&k).unwrap_or_default();
            lat.sort_by(f64::total_cmp);
            TopicRow {
                rate_hz: if duration_s > 0.0 { n / duration_s } else { 0.0 },
                delivered: n,
                latency_mean_ms: mean(&lat),
                latency_p50_ms: percentile(&lat, 0.5),
                latency_p95_ms: percentile(&lat, 0.95),
                topic: k.0,
                node: k.1,
            }
        })
        .collect();
    let links = links
        .into_iter()
        .map(|(link, (messages, bytes))| LinkRow {
            link,
            messages,
            bytes,
            mbps: if duration_s > 0.0 { bytes * 8.0 / duration_s / 1e6 } else { 0.0 },
        })
        .collect();
    bridges.sort_by(|a, b| (a.1, &a.0).cmp(&(b.1, &b.0)));
    let net_latency = net.into_iter().map(|((s, t), v)| (s, t, mean(&v), v.len())).collect();
    Summary { duration_s, topics, drops, links, bridges, net_latency }
}

impl Summary {
    pub fn topics_csv(&self) -> String {
        let mut out = String::from("topic,node,delivered,rate_hz,latency_mean_ms,latency_p50_ms,latency_p95_ms\n");
        for r in &self.topics {
            let _ = writeln!(
                out,
                "{},{},{},{:.4},{:.4},{:.4},{:.4}",
                r.topic, r.node, r.delivered, r.rate_hz, r.latency_mean_ms, r.latency_p50_ms, r.latency_p95_ms
            );
        }
        out
    }

    pub fn drops_csv(&self) -> String {
        let mut out = String::from("topic,offered,delivered,limiter,loss,dedupe,unsubscribed,loop,corrupt\n");
        for (t, d) in &self.drops {
            let _ = writeln!(
                out,
                "{t},{},{},{},{},{},{},{},{}",
                d.offered, d.delivered, d.limiter, d.loss, d.dedupe, d.unsubscribed, d.loops, d.corrupt
            );
        }
        out
    }

    pub fn links_csv(&self) -> String {
        let mut out = String::from("link,messages,bytes,mbps\n");
        for l in &self.links {
            let _ = writeln!(out, "{},{},{},{:.4}", l.link, l.messages, l.bytes, l.mbps);
        }
        out
    }

    pub fn bridges_csv(&self) -> String {
        let mut out = String::from("node,at_ns,bridges\n");
        for (node, at, n) in &self.bridges {
            let _ = writeln!(out, "{node},{at},{n}");
        }
        out
    }

    pub fn net_latency_csv(&self) -> String {
        let mut out = String::from("source,target,mean_ms,samples\n");
        for (s, t, m, n) in &self.net_latency {
            let _ = writeln!(out, "{s},{t},{m:.4},{n}");
        }
        out
    }

    pub fn topic(&self, topic: &str, node: &str) -> Option<&TopicRow> {
        self.topics.iter().find(|r| r.topic == topic && r.node == node)
    }
}

pub fn load_summary(dir: &Path) -> Result<Summary, ScenarioError> {
    let path = dir.join(METRICS_FILE);
    let text = std::fs::read_to_string(&path).map_err(|e| ScenarioError::Io(format!("{}: {e}", path.display())))?;
    let points = parse_export(&text).map_err(|e| ScenarioError::Schema(format!("{}: {e}", path.display())))?;
    Ok(summarize(&points))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicDelta {
    pub topic: String,
    pub node: String,
    pub rate_delta_hz: f64,
    pub latency_delta_ms: f64,
}

/// Per (topic, node) differences B − A over rows present in both runs.
pub fn diff_summaries(a: &Summary, b: &Summary) -> Vec<TopicDelta> {
    a.topics
        .iter()
        .filter_map(|ra| {
            let rb = b.topic(&ra.topic, &ra.node)?;
            Some(TopicDelta {
                topic: ra.topic.clone(),
                node: ra.node.clone(),
                rate_delta_hz: rb.rate_hz - ra.rate_hz,
                latency_delta_ms: rb.latency_mean_ms - ra.latency_mean_ms,
            })
        })
        .collect()
}

/// Compares two run directories; rows are matched on topic and node.
pub fn diff_runs(a: &Path, b: &Path) -> Result<Vec<TopicDelta>, ScenarioError> {
    Ok(diff_summaries(&load_summary(a)?, &load_summary(b)?))
}

pub fn deltas_csv(deltas: &[TopicDelta]) -> String {
    let mut out = String::from("topic,node,rate_delta_hz,latency_delta_ms\n");
    for d in deltas {
        let _ = writeln!(out, "{},{},{:.4},{:.4}", d.topic, d.node, d.rate_delta_hz, d.latency_delta_ms);
    }
    out
}
