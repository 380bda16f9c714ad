// SPDX-License-Identifier: Apache-2.0

//! Layered topology model and the message/declaration types shared by every
//! other module.
//!
//! A topology is 1–3 layers (at most one per [`LayerKind`]), each with one or
//! more nodes. Every layer owns one intra-layer scope, one inter-layer scope
//! and optionally one external-protocol scope; every node owns one intra-node
//! scope. The first node listed in a layer acts as the layer gateway and hosts
//! bridges between layer-wide scopes.
//!
//! # File format
//!
//! ```toml
//! [[layers]]
//! name = "edge"
//! kind = "edge"
//! external_protocol = true   # optional, default false
//!
//! [[nodes]]
//! layer = "edge"
//! name = "robot-1"
//!
//! [[links]]                  # optional; unlisted links use defaults
//! a = "inter_layer:edge"
//! b = "inter_layer:cloud"
//! latency_ms = 50.0
//! jitter_ms = 10.0           # optional, default 0
//! loss = 0.0001              # optional, default 0
//! bandwidth_mbps = 160.0     # optional, default 0 (unlimited)
//! ```
//!
//! Scopes are written `kind:owner` where owner is a layer name, or
//! `layer/node` for `intra_node`.

mod message;
mod model;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use message::{
    is_reserved_topic, DeclarationKey, FlowDeclaration, FlowDirection, MessageEnvelope,
    ProducerSequencer, RESERVED_PREFIX,
};
pub use model::{BrokerScope, LayerId, LayerKind, NodeId, ScopeKind, ScopeOwner};

use crate::simnet::LinkSpec;

#[derive(Debug, Error)]
pub enum TopologyError {
    #[error("topology must contain 1 to 3 layers, got {0}")]
    LayerCount(usize),
    #[error("duplicate layer name `{0}`")]
    DuplicateLayer(String),
    #[error("more than one layer of kind `{0}`")]
    DuplicateKind(LayerKind),
    #[error("duplicate node `{0}`")]
    DuplicateNode(String),
    #[error("node `{node}` references unknown layer `{layer}`")]
    UnknownLayer { node: String, layer: String },
    #[error("layer `{0}` has no nodes")]
    EmptyLayer(String),
    #[error("invalid scope `{0}`")]
    InvalidScope(String),
    #[error("invalid link {0}")]
    InvalidLink(String),
    #[error("parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopologySpec {
    pub layers: Vec<LayerSpec>,
    #[serde(default)]
    pub nodes: Vec<NodeSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub links: Vec<LinkEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
    #[serde(default)]
    pub external_protocol: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub layer: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinkEntry {
    pub a: String,
    pub b: String,
    pub latency_ms: f64,
    #[serde(default)]
    pub jitter_ms: f64,
    #[serde(default)]
    pub loss: f64,
    #[serde(default)]
    pub bandwidth_mbps: f64,
}

impl TopologySpec {
    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        Ok(toml::from_str(text)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("topology spec serializes")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub id: LayerId,
    pub nodes: Vec<NodeId>,
    pub external_protocol: bool,
}

/// Validated, immutable topology.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    layers: Vec<Layer>,
    links: Vec<LinkSpec>,
}

impl Topology {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TopologyError> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self, TopologyError> {
        build_topology(&TopologySpec::from_toml(text)?)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_ids(&self) -> impl Iterator<Item = &LayerId> {
        self.layers.iter().map(|l| &l.id)
    }

    pub fn layer(&self, name: &str) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id.name == name)
    }

    pub fn layer_by_kind(&self, kind: LayerKind) -> Option<&Layer> {
        self.layers.iter().find(|l| l.id.kind == kind)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &NodeId> {
        self.layers.iter().flat_map(|l| l.nodes.iter())
    }

    pub fn nodes_in<'a>(&'a self, layer: &LayerId) -> &'a [NodeId] {
        self.layers.iter().find(|l| &l.id == layer).map(|l| l.nodes.as_slice()).unwrap_or(&[])
    }

    /// Looks up a node written as `layer/node`.
    pub fn node(&self, path: &str) -> Option<&NodeId> {
        let (layer, name) = path.split_once('/')?;
        self.layer(layer)?.nodes.iter().find(|n| n.name == name)
    }

    pub fn contains_node(&self, node: &NodeId) -> bool {
        self.nodes().any(|n| n == node)
    }

    pub fn contains_layer(&self, layer: &LayerId) -> bool {
        self.layers.iter().any(|l| &l.id == layer)
    }

    /// The node hosting layer-wide bridges, configuration worker and watchdog.
    pub fn gateway(&self, layer: &LayerId) -> Option<&NodeId> {
        self.layers.iter().find(|l| &l.id == layer).and_then(|l| l.nodes.first())
    }

    pub fn is_gateway(&self, node: &NodeId) -> bool {
        self.gateway(&node.layer) == Some(node)
    }

    pub fn has_external(&self, layer: &LayerId) -> bool {
        self.layers.iter().any(|l| &l.id == layer && l.external_protocol)
    }

    /// Every scope in the topology, in a stable order.
    pub fn scopes(&self) -> Vec<BrokerScope> {
        let mut out = Vec::new();
        for layer in &self.layers {
            out.push(BrokerScope::inter_layer(&layer.id));
            out.push(BrokerScope::intra_layer(&layer.id));
            if layer.external_protocol {
                out.push(BrokerScope::external(&layer.id));
            }
            out.extend(layer.nodes.iter().map(BrokerScope::intra_node));
        }
        out
    }

    /// Default data scope for services on `node`: intra-node on edge nodes,
    /// intra-layer on fog and cloud nodes.
    pub fn default_scope(&self, node: &NodeId) -> BrokerScope {
        match node.layer.kind {
            LayerKind::Edge => BrokerScope::intra_node(node),
            LayerKind::Fog | LayerKind::Cloud => BrokerScope::intra_layer(&node.layer),
        }
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn parse_scope(&self, text: &str) -> Result<BrokerScope, TopologyError> {
        let bad = || TopologyError::InvalidScope(text.to_owned());
        let (kind, owner) = text.split_once(':').ok_or_else(bad)?;
        let kind = ScopeKind::parse(kind).ok_or_else(bad)?;
        let scope = match kind {
            ScopeKind::IntraNode => BrokerScope::intra_node(self.node(owner).ok_or_else(bad)?),
            _ => {
                let layer = &self.layer(owner).ok_or_else(bad)?.id;
                match kind {
                    ScopeKind::IntraLayer => BrokerScope::intra_layer(layer),
                    ScopeKind::InterLayer => BrokerScope::inter_layer(layer),
                    _ => {
                        if !self.has_external(layer) {
                            return Err(bad());
                        }
                        BrokerScope::external(layer)
                    }
                }
            }
        };
        Ok(scope)
    }

    pub fn to_spec(&self) -> TopologySpec {
        TopologySpec {
            layers: self
                .layers
                .iter()
                .map(|l| LayerSpec {
                    name: l.id.name.clone(),
                    kind: l.id.kind,
                    external_protocol: l.external_protocol,
                })
                .collect(),
            nodes: self
                .nodes()
                .map(|n| NodeSpec { layer: n.layer.name.clone(), name: n.name.clone() })
                .collect(),
            links: self
                .links
                .iter()
                .map(|l| LinkEntry {
                    a: l.connects.0.to_string(),
                    b: l.connects.1.to_string(),
                    latency_ms: l.latency_ms,
                    jitter_ms: l.jitter_ms,
                    loss: l.loss,
                    bandwidth_mbps: l.bandwidth_mbps,
                })
                .collect(),
        }
    }

    /// Replaces (or adds) the link between the same pair of scopes.
    pub fn with_link(mut self, link: LinkSpec) -> Self {
        self.links.retain(|l| !l.same_endpoints(&link));
        self.links.push(link);
        self
    }

    /// Drops a layer and every link touching it.
    pub fn without_layer(mut self, name: &str) -> Self {
        self.layers.retain(|l| l.id.name != name);
        self.links
            .retain(|l| l.connects.0.layer().name != name && l.connects.1.layer().name != name);
        self
    }
}

pub fn build_topology(spec: &TopologySpec) -> Result<Topology, TopologyError> {
    if spec.layers.is_empty() || spec.layers.len() > 3 {
        return Err(TopologyError::LayerCount(spec.layers.len()));
    }
    let mut names = BTreeSet::new();
    let mut kinds = BTreeSet::new();
    let mut layers: Vec<Layer> = Vec::with_capacity(spec.layers.len());
    for l in &spec.layers {
        if !names.insert(l.name.clone()) {
            return Err(TopologyError::DuplicateLayer(l.name.clone()));
        }
        if !kinds.insert(l.kind) {
            return Err(TopologyError::DuplicateKind(l.kind));
        }
        layers.push(Layer {
            id: LayerId::new(l.name.clone(), l.kind),
            nodes: Vec::new(),
            external_protocol: l.external_protocol,
        });
    }

    let mut seen: BTreeMap<(String, String), ()> = BTreeMap::new();
    for n in &spec.nodes {
        let layer = layers.iter_mut().find(|l| l.id.name == n.layer).ok_or_else(|| {
            TopologyError::UnknownLayer { node: n.name.clone(), layer: n.layer.clone() }
        })?;
        if seen.insert((n.layer.clone(), n.name.clone()), ()).is_some() {
            return Err(TopologyError::DuplicateNode(format!("{}/{}", n.layer, n.name)));
        }
        let id = NodeId::new(layer.id.clone(), n.name.clone());
        layer.nodes.push(id);
    }
    if let Some(empty) = layers.iter().find(|l| l.nodes.is_empty()) {
        return Err(TopologyError::EmptyLayer(empty.id.name.clone()));
    }

    let mut topo = Topology { layers, links: Vec::new() };
    for entry in &spec.links {
        let a = topo.parse_scope(&entry.a)?;
        let b = topo.parse_scope(&entry.b)?;
        let link = LinkSpec {
            latency_ms: entry.latency_ms,
            jitter_ms: entry.jitter_ms,
            loss: entry.loss,
            bandwidth_mbps: entry.bandwidth_mbps,
            connects: (a, b),
        };
        link.validate().map_err(TopologyError::InvalidLink)?;
        if topo.links.iter().any(|l| l.same_endpoints(&link)) {
            return Err(TopologyError::InvalidLink(format!(
                "duplicate link {} <-> {}",
                entry.a, entry.b
            )));
        }
        topo.links.push(link);
    }
    Ok(topo)
}
