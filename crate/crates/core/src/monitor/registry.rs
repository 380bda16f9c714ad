// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{self, Write};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{Clock, Nanos};

pub type Labels = BTreeMap<String, String>;

pub fn labels(pairs: &[(&str, &str)]) -> Labels {
    pairs.iter().map(|(k, v)| ((*k).to_owned(), (*v).to_owned())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Counter,
    Gauge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricPoint {
    pub name: String,
    pub kind: MetricKind,
    pub labels: Labels,
    pub value: f64,
    pub at: Nanos,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
struct SeriesKey {
    name: String,
    labels: Labels,
}

#[derive(Debug, Clone)]
enum Series {
    Counter { value: f64, at: Nanos },
    Gauge { samples: Vec<(f64, Nanos)> },
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("sink write failed: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Error)]
#[error("line {line}: {reason}")]
pub struct ParseError {
    pub line: usize,
    pub reason: String,
}

/// Counters and raw gauge samples keyed by (name, labels).
pub struct MetricsRegistry {
    clock: Arc<dyn Clock>,
    series: Mutex<BTreeMap<SeriesKey, Series>>,
}

impl std::fmt::Debug for MetricsRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MetricsRegistry").field("series", &self.series.lock().len()).finish()
    }
}

pub const EXPORT_HEADER: &str = "# flowbridge-metrics v1";

impl MetricsRegistry {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self { clock, series: Mutex::new(BTreeMap::new()) }
    }

    /// Adds `by` (clamped at zero so counters never decrease).
    pub fn incr(&self, name: &str, labels: Labels, by: f64) {
        let at = self.clock.now();
        let mut series = self.series.lock();
        let entry = series
            .entry(SeriesKey { name: name.to_owned(), labels })
            .or_insert(Series::Counter { value: 0.0, at });
        if let Series::Counter { value, at: t } = entry {
            *value += by.max(0.0);
            *t = at;
        }
    }

    pub fn inc(&self, name: &str, labels: Labels) {
        self.incr(name, labels, 1.0);
    }

    pub fn record(&self, name: &str, labels: Labels, value: f64) {
        let at = self.clock.now();
        let mut series = self.series.lock();
        let entry = series
            .entry(SeriesKey { name: name.to_owned(), labels })
            .or_insert(Series::Gauge { samples: Vec::new() });
        if let Series::Gauge { samples } = entry {
            samples.push((value, at));
        }
    }

    pub fn counter(&self, name: &str, labels: &Labels) -> f64 {
        let key = SeriesKey { name: name.to_owned(), labels: labels.clone() };
        match self.series.lock().get(&key) {
            Some(Series::Counter { value, .. }) => *value,
            _ => 0.0,
        }
    }

    /// Sum of every series of `name` whose labels include all of `matching`.
    pub fn counter_sum(&self, name: &str, matching: &[(&str, &str)]) -> f64 {
        self.series
            .lock()
            .iter()
            .filter(|(k, _)| k.name == name && label_match(&k.labels, matching))
            .map(|(_, s)| match s {
                Series::Counter { value, .. } => *value,
                Series::Gauge { .. } => 0.0,
            })
            .fold(0.0, |a, b| a + b)
    }

    /// Gauge samples of every series of `name` matching the label filter, in
    /// series order.
    pub fn gauge_samples(&self, name: &str, matching: &[(&str, &str)]) -> Vec<f64> {
        self.series
            .lock()
            .iter()
            .filter(|(k, _)| k.name == name && label_match(&k.labels, matching))
            .flat_map(|(_, s)| match s {
                Series::Gauge { samples } => samples.iter().map(|(v, _)| *v).collect(),
                Series::Counter { .. } => Vec::new(),
            })
            .collect()
    }

    /// Distinct values of label `key` across series named `name`.
    pub fn label_values(&self, name: &str, key: &str) -> Vec<String> {
        let mut out: Vec<String> = self
            .series
            .lock()
            .keys()
            .filter(|k| k.name == name)
            .filter_map(|k| k.labels.get(key).cloned())
            .collect();
        out.sort();
        out.dedup();
        out
    }

    /// Consistent copy of every point.
    pub fn snapshot(&self) -> Vec<MetricPoint> {
        let series = self.series.lock();
        let mut out = Vec::new();
        for (k, s) in series.iter() {
            match s {
                Series::Counter { value, at } => out.push(MetricPoint {
                    name: k.name.clone(),
                    kind: MetricKind::Counter,
                    labels: k.labels.clone(),
                    value: *value,
                    at: *at,
                }),
                Series::Gauge { samples } => {
                    out.extend(samples.iter().map(|(v, at)| MetricPoint {
                        name: k.name.clone(),
                        kind: MetricKind::Gauge,
                        labels: k.labels.clone(),
                        value: *v,
                        at: *at,
                    }))
                }
            }
        }
        out
    }

    /// Writes the header and one line per point; returns bytes written.
    pub fn export(&self, sink: &mut dyn Write) -> Result<usize, ExportError> {
        let text = render(&self.snapshot(), self.clock.now());
        sink.write_all(text.as_bytes())?;
        sink.flush()?;
        Ok(text.len())
    }
}

fn label_match(labels: &Labels, matching: &[(&str, &str)]) -> bool {
    matching.iter().all(|(k, v)| labels.get(*k).is_some_and(|x| x == v))
}

fn escape(v: &str) -> String {
    v.replace('\\', "\\\\").replace('"', "\\\"")
}

/// Line format: `<kind> <name>{k="v",...} <value> <at_ns>` after a header
/// line carrying the export time.
pub fn render(points: &[MetricPoint], exported_at: Nanos) -> String {
    let mut out = format!("{EXPORT_HEADER} exported_at={exported_at}\n");
    for p in points {
        let kind = match p.kind {
            MetricKind::Counter => "counter",
            MetricKind::Gauge => "gauge",
        };
        let labels: Vec<String> =
            p.labels.iter().map(|(k, v)| format!("{k}=\"{}\"", escape(v))).collect();
        let _ = writeln!(out, "{kind} {}{{{}}} {} {}", p.name, labels.join(","), p.value, p.at);
    }
    out
}

/// Parses text produced by [`render`].
pub fn parse_export(text: &str) -> Result<Vec<MetricPoint>, ParseError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.starts_with(EXPORT_HEADER) => {}
        _ => return Err(ParseError { line: 1, reason: "missing metrics header".into() }),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let err = |reason: &str| ParseError { line: i + 1, reason: reason.to_owned() };
        let (kind, rest) = line.split_once(' ').ok_or_else(|| err("missing kind"))?;
        let kind = match kind {
            "counter" => MetricKind::Counter,
            "gauge" => MetricKind::Gauge,
            _ => return Err(err("unknown kind")),
        };
        let open = rest.find('{').ok_or_else(|| err("missing labels"))?;
        let name = &rest[..open];
        let (labels, tail) = parse_labels(&rest[open + 1..]).map_err(|r| err(&r))?;
        let mut fields = tail.split_whitespace();
        let value: f64 = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("bad value"))?;
        let at: Nanos = fields
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("bad timestamp"))?;
        out.push(MetricPoint { name: name.to_owned(), kind, labels, value, at });
    }
    Ok(out)
}

fn parse_labels(s: &str) -> Result<(Labels, &str), String> {
    let mut labels = Labels::new();
    let mut rest = s;
    loop {
        if let Some(tail) = rest.strip_prefix('}') {
            return Ok((labels, tail));
        }
        rest = rest.strip_prefix(',').unwrap_or(rest);
        let eq = rest.find("=\"").ok_or("malformed label")?;
        let key = rest[..eq].to_owned();
        let mut value = String::new();
        let mut chars = rest[eq + 2..].char_indices();
        let mut end = None;
        while let Some((i, c)) = chars.next() {
            match c {
                '\\' => {
                    if let Some((_, n)) = chars.next() {
                        value.push(n);
                    }
                }
                '"' => {
                    end = Some(eq + 2 + i + 1);
                    break;
                }
                c => value.push(c),
            }
        }
        let end = end.ok_or("unterminated label value")?;
        labels.insert(key, value);
        rest = &rest[end..];
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::ManualClock;

    fn registry() -> (Arc<ManualClock>, MetricsRegistry) {
        let clock = Arc::new(ManualClock::new(100));
        let reg = MetricsRegistry::new(clock.clone());
        (clock, reg)
    }

    #[test]
    fn empty_registry_exports_header_only() {
        let (_, reg) = registry();
        let mut buf = Vec::new();
        let n = reg.export(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(n, text.len());
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with(EXPORT_HEADER));
    }

    #[test]
    fn counter_line() {
        let (_, reg) = registry();
        for _ in 0..3 {
            reg.inc("drops", labels(&[("topic", "imu")]));
        }
        let mut buf = Vec::new();
        reg.export(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let data: Vec<&str> = text.lines().skip(1).collect();
        assert_eq!(data, vec!["counter drops{topic=\"imu\"} 3 100"]);
    }

    #[test]
    fn export_is_stable_apart_from_header() {
        let (clock, reg) = registry();
        reg.inc("a", labels(&[("z", "1"), ("b", "2")]));
        reg.record("lat", labels(&[("topic", "t")]), 1.5);
        let mut first = Vec::new();
        reg.export(&mut first).unwrap();
        clock.advance(1_000);
        let mut second = Vec::new();
        reg.export(&mut second).unwrap();
        let body = |b: &[u8]| String::from_utf8(b.to_vec()).unwrap().lines().skip(1).collect::<Vec<_>>().join("\n");
        assert_eq!(body(&first), body(&second));
        assert_ne!(first, second);
    }

    #[test]
    fn labels_sorted_and_round_trip() {
        let (_, reg) = registry();
        reg.inc("c", labels(&[("topic", "we\"ird,}"), ("node", "edge/n1")]));
        reg.record("g", Labels::new(), -2.25);
        let text = render(&reg.snapshot(), 5);
        assert!(text.contains("c{node=\"edge/n1\",topic="));
        let parsed = parse_export(&text).unwrap();
        assert_eq!(parsed, reg.snapshot());
    }

    #[test]
    fn counters_never_decrease() {
        let (_, reg) = registry();
        reg.incr("c", Labels::new(), 2.0);
        reg.incr("c", Labels::new(), -5.0);
        assert_eq!(reg.counter("c", &Labels::new()), 2.0);
    }

    #[test]
    fn sums_and_filters() {
        let (_, reg) = registry();
        reg.incr("x", labels(&[("topic", "a"), ("node", "n1")]), 2.0);
        reg.incr("x", labels(&[("topic", "a"), ("node", "n2")]), 3.0);
        reg.incr("x", labels(&[("topic", "b"), ("node", "n1")]), 7.0);
        assert_eq!(reg.counter_sum("x", &[("topic", "a")]), 5.0);
        assert_eq!(reg.counter_sum("x", &[]), 12.0);
        assert_eq!(reg.label_values("x", "topic"), vec!["a", "b"]);
    }
}
