// SPDX-License-Identifier: Apache-2.0

//! Metrics registry, liveness heartbeats and latency probes.

mod heartbeat;
mod latency;
mod probe;
mod registry;

pub use heartbeat::{HeartbeatEntry, HeartbeatRegistry, DEFAULT_REFRESH, TTL_FACTOR};
pub use latency::{message_latency, LatencySample, CLOCK_SKEW, MESSAGE_LATENCY, NET_LATENCY, PING_TIMEOUTS};
pub use probe::{PingProbe, ProbeSettings, PING_TOPIC, PONG_TOPIC};
pub use registry::{
    labels, parse_export, render, ExportError, Labels, MetricKind, MetricPoint, MetricsRegistry,
    ParseError, EXPORT_HEADER,
};
