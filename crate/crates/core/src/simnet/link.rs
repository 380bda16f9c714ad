// SPDX-License-Identifier: Apache-2.0

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::clock::{from_millis_f64, Nanos};
use crate::topology::{BrokerScope, ScopeKind};

/// A simulated link between two scopes (or a scope and itself for
/// intra-scope delivery).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    /// One-way mean latency.
    pub latency_ms: f64,
    /// Half-width of the uniform jitter window.
    pub jitter_ms: f64,
    /// Per-message drop probability.
    pub loss: f64,
    /// 0 means unlimited.
    pub bandwidth_mbps: f64,
    pub connects: (BrokerScope, BrokerScope),
}

impl LinkSpec {
    pub fn new(a: BrokerScope, b: BrokerScope, latency_ms: f64) -> Self {
        Self { latency_ms, jitter_ms: 0.0, loss: 0.0, bandwidth_mbps: 0.0, connects: (a, b) }
    }

    pub fn with_jitter(mut self, jitter_ms: f64) -> Self {
        self.jitter_ms = jitter_ms;
        self
    }

    pub fn with_loss(mut self, loss: f64) -> Self {
        self.loss = loss;
        self
    }

    pub fn with_bandwidth(mut self, mbps: f64) -> Self {
        self.bandwidth_mbps = mbps;
        self
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.latency_ms >= 0.0 && self.latency_ms.is_finite()) {
            return Err(format!("latency must be >= 0, got {}", self.latency_ms));
        }
        if !(self.jitter_ms >= 0.0 && self.jitter_ms.is_finite()) {
            return Err(format!("jitter must be >= 0, got {}", self.jitter_ms));
        }
        if !(0.0..=1.0).contains(&self.loss) {
            return Err(format!("loss must be in [0, 1], got {}", self.loss));
        }
        if !(self.bandwidth_mbps >= 0.0 && self.bandwidth_mbps.is_finite()) {
            return Err(format!("bandwidth must be >= 0, got {}", self.bandwidth_mbps));
        }
        Ok(())
    }

    pub fn same_endpoints(&self, other: &LinkSpec) -> bool {
        let (a, b) = &self.connects;
        let (c, d) = &other.connects;
        (a == c && b == d) || (a == d && b == c)
    }

    pub fn connects_pair(&self, a: &BrokerScope, b: &BrokerScope) -> bool {
        let (x, y) = &self.connects;
        (x == a && y == b) || (x == b && y == a)
    }

    /// Time to push `len` bytes onto the wire.
    pub fn serialization_delay(&self, len: usize) -> Nanos {
        if self.bandwidth_mbps <= 0.0 {
            return 0;
        }
        let secs = len as f64 * 8.0 / (self.bandwidth_mbps * 1e6);
        (secs * 1e9).round() as Nanos
    }

    /// Uniform draw in `[latency - jitter, latency + jitter]`, clamped at zero.
    pub fn draw_latency(&self, rng: &mut impl Rng) -> Nanos {
        let ms = if self.jitter_ms > 0.0 {
            rng.gen_range(self.latency_ms - self.jitter_ms..=self.latency_ms + self.jitter_ms)
        } else {
            self.latency_ms
        };
        from_millis_f64(ms.max(0.0))
    }

    pub fn draw_loss(&self, rng: &mut impl Rng) -> bool {
        self.loss > 0.0 && rng.gen::<f64>() < self.loss
    }
}

/// Default parameters for links not listed in the topology.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkDefaults {
    pub intra_node_ms: f64,
    pub intra_layer_ms: f64,
    pub inter_layer_ms: f64,
}

impl Default for LinkDefaults {
    fn default() -> Self {
        Self { intra_node_ms: 0.1, intra_layer_ms: 2.0, inter_layer_ms: 0.0 }
    }
}

impl LinkDefaults {
    pub fn link_for(&self, a: &BrokerScope, b: &BrokerScope) -> LinkSpec {
        let ms = match (a.kind, b.kind) {
            (ScopeKind::IntraNode, _) => self.intra_node_ms,
            (ScopeKind::InterLayer, _) if a != b => self.inter_layer_ms,
            _ => self.intra_layer_ms,
        };
        LinkSpec::new(a.clone(), b.clone(), ms)
    }
}

/// FIFO serialization state of one link direction.
#[derive(Debug, Default, Clone, Copy)]
pub struct LinkState {
    pub busy_until: Nanos,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transmission {
    Delivered(Nanos),
    Dropped,
}

/// Occupies the link for the serialization time of `len` bytes and returns
/// when the last byte leaves.
pub fn serialize(link: &LinkSpec, state: &mut LinkState, len: usize, now: Nanos) -> Nanos {
    let start = now.max(state.busy_until);
    let done = start + link.serialization_delay(len);
    state.busy_until = done;
    done
}

/// Loss then latency for a message whose bytes left the link at `sent`.
pub fn propagate(link: &LinkSpec, sent: Nanos, rng: &mut impl Rng) -> Transmission {
    if link.draw_loss(rng) {
        return Transmission::Dropped;
    }
    Transmission::Delivered(sent + link.draw_latency(rng))
}

/// Single-destination transmission: loss draw, then queueing behind the
/// backlog, serialization and propagation.
pub fn transmit(
    link: &LinkSpec,
    state: &mut LinkState,
    len: usize,
    now: Nanos,
    rng: &mut impl Rng,
) -> Transmission {
    if link.draw_loss(rng) {
        return Transmission::Dropped;
    }
    let sent = serialize(link, state, len, now);
    Transmission::Delivered(sent + link.draw_latency(rng))
}
