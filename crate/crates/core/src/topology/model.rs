// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};

/// Tier of a layer, ordered by distance from the device.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerKind {
    Edge,
    Fog,
    Cloud,
}

impl LayerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Edge => "edge",
            LayerKind::Fog => "fog",
            LayerKind::Cloud => "cloud",
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LayerId {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerId {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self { name: name.into(), kind }
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct NodeId {
    pub layer: LayerId,
    pub name: String,
}

impl NodeId {
    pub fn new(layer: LayerId, name: impl Into<String>) -> Self {
        Self { layer, name: name.into() }
    }
}

/// Rendered as `layer/node`.
impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.layer.name, self.name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeKind {
    IntraNode,
    IntraLayer,
    InterLayer,
    ExternalProtocol,
}

impl ScopeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScopeKind::IntraNode => "intra_node",
            ScopeKind::IntraLayer => "intra_layer",
            ScopeKind::InterLayer => "inter_layer",
            ScopeKind::ExternalProtocol => "external_protocol",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "intra_node" => ScopeKind::IntraNode,
            "intra_layer" => ScopeKind::IntraLayer,
            "inter_layer" => ScopeKind::InterLayer,
            "external_protocol" | "ext" => ScopeKind::ExternalProtocol,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScopeOwner {
    Node(NodeId),
    Layer(LayerId),
}

/// A broker reachability domain. Intra-node scopes are owned by a node, every
/// other kind by a layer.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BrokerScope {
    pub kind: ScopeKind,
    pub owner: ScopeOwner,
}

impl BrokerScope {
    pub fn intra_node(node: &NodeId) -> Self {
        Self { kind: ScopeKind::IntraNode, owner: ScopeOwner::Node(node.clone()) }
    }

    pub fn intra_layer(layer: &LayerId) -> Self {
        Self { kind: ScopeKind::IntraLayer, owner: ScopeOwner::Layer(layer.clone()) }
    }

    pub fn inter_layer(layer: &LayerId) -> Self {
        Self { kind: ScopeKind::InterLayer, owner: ScopeOwner::Layer(layer.clone()) }
    }

    pub fn external(layer: &LayerId) -> Self {
        Self { kind: ScopeKind::ExternalProtocol, owner: ScopeOwner::Layer(layer.clone()) }
    }

    pub fn layer(&self) -> &LayerId {
        match &self.owner {
            ScopeOwner::Node(n) => &n.layer,
            ScopeOwner::Layer(l) => l,
        }
    }

    pub fn node(&self) -> Option<&NodeId> {
        match &self.owner {
            ScopeOwner::Node(n) => Some(n),
            ScopeOwner::Layer(_) => None,
        }
    }

    pub fn is_layer_wide(&self) -> bool {
        matches!(self.kind, ScopeKind::IntraLayer | ScopeKind::ExternalProtocol)
    }
}

/// Rendered as `kind:owner`, e.g. `inter_layer:cloud` or `intra_node:edge/robot-1`.
impl fmt::Display for BrokerScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.owner {
            ScopeOwner::Node(n) => write!(f, "{}:{}", self.kind.as_str(), n),
            ScopeOwner::Layer(l) => write!(f, "{}:{}", self.kind.as_str(), l),
        }
    }
}
