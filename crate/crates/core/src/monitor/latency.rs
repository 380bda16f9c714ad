// SPDX-License-Identifier: Apache-2.0

use serde::Serialize;

use super::{labels, MetricsRegistry};
use crate::clock::{to_millis_f64, Nanos};
use crate::topology::{MessageEnvelope, NodeId};

pub const MESSAGE_LATENCY: &str = "message_latency_ms";
pub const CLOCK_SKEW: &str = "clock_skew_total";
pub const NET_LATENCY: &str = "net_latency_ms";
pub const PING_TIMEOUTS: &str = "ping_timeouts_total";

/// Half of a measured ping round trip.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencySample {
    pub source: NodeId,
    pub target: NodeId,
    pub rtt_half: f64,
    pub at: Nanos,
}

/// Producer-to-consumer latency of `env` observed at `now` on `node`, in ms.
/// A timestamp from the future is clamped to zero and counted as skew.
pub fn message_latency(metrics: &MetricsRegistry, env: &MessageEnvelope, node: &NodeId, now: Nanos) -> f64 {
    let node = node.to_string();
    let ms = if now < env.sent_at {
        metrics.inc(CLOCK_SKEW, labels(&[("node", &node)]));
        0.0
    } else {
        to_millis_f64(now - env.sent_at)
    };
    metrics.record(MESSAGE_LATENCY, labels(&[("topic", &env.topic), ("node", &node)]), ms);
    ms
}
