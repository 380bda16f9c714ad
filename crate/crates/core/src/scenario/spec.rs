// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::payload::PayloadKind;
use crate::topology::LinkEntry;

/// A workload: services with their topics, link overrides, run length and
/// optional placement variants.
///
/// ```toml
/// name = "demo"
/// seed = 7
/// duration_s = 10.0
///
/// [rate_limit]          # overlay on the engine defaults
/// limit_mbps = 160.0
///
/// [probe]               # ping probes on every node
/// period_ms = 1000.0
///
/// [[links]]             # same fields as topology links
/// a = "inter_layer:edge"
/// b = "inter_layer:cloud"
/// latency_ms = 25.0
///
/// [[services]]
/// name = "driver"
/// node = "edge/robot"
/// [[services.advertise]]
/// topic = "odom"
/// rate_hz = 50.0
/// size = 200
/// payload = "random"    # random | compressible | zeros
///
/// [[services]]
/// name = "planner"
/// node = "cloud/cloud-1"
/// [[services.request]]
/// topic = "odom"
///
/// [[variants]]          # each variant is a separate run
/// name = "cloud"
/// nodes = { planner = "cloud/cloud-1" }
/// ```
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    #[serde(default)]
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    pub duration_s: f64,
    /// Quiet period after the last publish before final checks.
    #[serde(default = "default_drain")]
    pub drain_s: f64,
    #[serde(default)]
    pub rate_limit: Option<Value>,
    #[serde(default)]
    pub probe: Option<ProbeSpec>,
    #[serde(default)]
    pub links: Vec<LinkEntry>,
    #[serde(default)]
    pub services: Vec<ServiceSpec>,
    #[serde(default)]
    pub variants: Vec<VariantSpec>,
}

fn default_drain() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSpec {
    #[serde(default = "default_probe_period")]
    pub period_ms: f64,
    /// Defaults to five round trips over the slowest configured link.
    #[serde(default)]
    pub timeout_ms: Option<f64>,
}

fn default_probe_period() -> f64 {
    1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServiceSpec {
    pub name: String,
    pub node: String,
    #[serde(default)]
    pub start_s: f64,
    #[serde(default)]
    pub advertise: Vec<AdvertiseSpec>,
    #[serde(default)]
    pub request: Vec<RequestSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdvertiseSpec {
    pub topic: String,
    pub rate_hz: f64,
    pub size: u64,
    #[serde(default)]
    pub payload: PayloadKind,
    #[serde(default)]
    pub scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RequestSpec {
    pub topic: String,
    #[serde(default)]
    pub scope: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VariantSpec {
    pub name: String,
    /// Service name to node path.
    #[serde(default)]
    pub nodes: BTreeMap<String, String>,
}

impl ScenarioSpec {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let spec: Self = toml::from_str(text).map_err(|e| e.to_string())?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.duration_s.is_finite() && self.duration_s >= 0.0) {
            return Err(format!("duration_s must be >= 0, got {}", self.duration_s));
        }
        if !(self.drain_s.is_finite() && self.drain_s >= 0.0) {
            return Err(format!("drain_s must be >= 0, got {}", self.drain_s));
        }
        for s in &self.services {
            if !(s.start_s.is_finite() && s.start_s >= 0.0) {
                return Err(format!("service {}: start_s must be >= 0", s.name));
            }
            for a in &s.advertise {
                if !(a.rate_hz.is_finite() && a.rate_hz > 0.0) {
                    return Err(format!("service {}: topic {} needs rate_hz > 0", s.name, a.topic));
                }
            }
        }
        for v in &self.variants {
            for svc in v.nodes.keys() {
                if !self.services.iter().any(|s| &s.name == svc) {
                    return Err(format!("variant {}: unknown service {svc}", v.name));
                }
            }
        }
        Ok(())
    }

    /// The services with `variant`'s placements applied.
    pub fn placed(&self, variant: Option<&VariantSpec>) -> Vec<ServiceSpec> {
        let mut out = self.services.clone();
        if let Some(v) = variant {
            for s in &mut out {
                if let Some(node) = v.nodes.get(&s.name) {
                    s.node.clone_from(node);
                }
            }
        }
        out
    }
}
