// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::Serialize;

use super::table::FlowTable;
use crate::topology::{BrokerScope, FlowDeclaration, NodeId, ScopeKind, Topology};

/// Where a data message entered the system: the scope its producer published
/// on and the producing node.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Origin {
    pub scope: BrokerScope,
    pub node: NodeId,
}

impl Origin {
    pub fn of(decl: &FlowDeclaration) -> Self {
        Self { scope: decl.origin_scope.clone(), node: decl.origin_node.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BridgeKey {
    pub topic: String,
    pub source_scope: BrokerScope,
    pub dest_scope: BrokerScope,
}

impl fmt::Display for BridgeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}->{}", self.topic, self.source_scope, self.dest_scope)
    }
}

/// One unidirectional forwarding rule hosted on `host`.
///
/// Only messages whose origin is listed in `origins` are picked up; this is
/// what keeps two bridges touching the same scope from feeding each other.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct BridgeSpec {
    pub topic: String,
    pub source_scope: BrokerScope,
    pub dest_scope: BrokerScope,
    pub host: NodeId,
    pub origins: BTreeSet<Origin>,
}

impl BridgeSpec {
    pub fn key(&self) -> BridgeKey {
        BridgeKey {
            topic: self.topic.clone(),
            source_scope: self.source_scope.clone(),
            dest_scope: self.dest_scope.clone(),
        }
    }

    /// Bridges leaving a layer go through the host's rate limiter.
    pub fn is_limited(&self) -> bool {
        self.dest_scope.kind == ScopeKind::InterLayer
    }
}

impl fmt::Display for BridgeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} @{}", self.key(), self.host)
    }
}

/// Whether `scope` can carry service traffic in `topology`.
fn usable(topology: &Topology, scope: &BrokerScope) -> bool {
    match scope.kind {
        ScopeKind::InterLayer => false,
        ScopeKind::IntraNode => scope.node().is_some_and(|n| topology.contains_node(n)),
        ScopeKind::IntraLayer => topology.contains_layer(scope.layer()),
        ScopeKind::ExternalProtocol => topology.has_external(scope.layer()),
    }
}

/// Hops (source, dest, host) carrying messages from `origin` into scope `to`.
fn chain(
    topology: &Topology,
    origin: &Origin,
    to: &BrokerScope,
) -> Vec<(BrokerScope, BrokerScope, NodeId)> {
    let from = &origin.scope;
    if from == to {
        return Vec::new();
    }
    let into = |scope: &BrokerScope, fallback: &NodeId| -> NodeId {
        scope.node().cloned().unwrap_or_else(|| fallback.clone())
    };
    let src_layer = from.layer();
    let dst_layer = to.layer();
    if src_layer == dst_layer {
        return match (from.node(), to.node()) {
            (Some(_), Some(_)) => {
                let mid = BrokerScope::intra_layer(src_layer);
                vec![
                    (from.clone(), mid.clone(), origin.node.clone()),
                    (mid, to.clone(), into(to, &origin.node)),
                ]
            }
            _ => vec![(from.clone(), to.clone(), into(to, &origin.node))],
        };
    }
    let Some(gateway) = topology.gateway(dst_layer) else {
        return Vec::new();
    };
    let mid = BrokerScope::inter_layer(src_layer);
    vec![
        (from.clone(), mid.clone(), origin.node.clone()),
        (mid, to.clone(), into(to, gateway)),
    ]
}

/// Every bridge the declarations in `table` call for, across all nodes.
pub fn compute_all_bridges(table: &FlowTable, topology: &Topology) -> Vec<BridgeSpec> {
    let mut out: BTreeMap<(NodeId, BridgeKey), BTreeSet<Origin>> = BTreeMap::new();
    for topic in table.topics() {
        let advertisers: BTreeSet<Origin> = table
            .advertises(&topic)
            .filter(|d| usable(topology, &d.origin_scope) && topology.contains_node(&d.origin_node))
            .map(Origin::of)
            .collect();
        let targets: BTreeSet<&BrokerScope> = table
            .requests(&topic)
            .map(|d| &d.origin_scope)
            .filter(|s| usable(topology, s))
            .collect();
        for origin in &advertisers {
            for to in &targets {
                for (source_scope, dest_scope, host) in chain(topology, origin, to) {
                    let key = BridgeKey { topic: topic.clone(), source_scope, dest_scope };
                    out.entry((host, key)).or_default().insert(origin.clone());
                }
            }
        }
    }
    out.into_iter()
        .map(|((host, key), origins)| BridgeSpec {
            topic: key.topic,
            source_scope: key.source_scope,
            dest_scope: key.dest_scope,
            host,
            origins,
        })
        .collect()
}

/// The bridges `node` must host for the current table, sorted.
pub fn compute_required_bridges(
    table: &FlowTable,
    topology: &Topology,
    node: &NodeId,
) -> Vec<BridgeSpec> {
    compute_all_bridges(table, topology).into_iter().filter(|b| &b.host == node).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOPO: &str = r#"
        [[layers]]
        name = "edge"
        kind = "edge"
        external_protocol = true
        [[layers]]
        name = "fog"
        kind = "fog"
        external_protocol = true
        [[layers]]
        name = "cloud"
        kind = "cloud"
        [[nodes]]
        layer = "edge"
        name = "robot"
        [[nodes]]
        layer = "edge"
        name = "robot-2"
        [[nodes]]
        layer = "fog"
        name = "fog-1"
        [[nodes]]
        layer = "cloud"
        name = "cloud-1"
    "#;

    fn topo() -> Topology {
        Topology::from_toml(TOPO).unwrap()
    }

    fn scope(t: &Topology, s: &str) -> BrokerScope {
        t.parse_scope(s).unwrap()
    }

    fn node(t: &Topology, s: &str) -> NodeId {
        t.node(s).unwrap().clone()
    }

    fn names(bridges: &[BridgeSpec]) -> BTreeSet<String> {
        bridges.iter().map(ToString::to_string).collect()
    }

    #[test]
    fn empty_table_needs_nothing() {
        assert!(compute_all_bridges(&FlowTable::new(), &topo()).is_empty());
    }

    #[test]
    fn same_scope_pair_needs_nothing() {
        let t = topo();
        let mut table = FlowTable::new();
        let fog = node(&t, "fog/fog-1");
        let s = scope(&t, "intra_layer:fog");
        table.upsert(FlowDeclaration::advertise("a", "s1", s.clone(), fog.clone(), 1.0, 10), 0);
        table.upsert(FlowDeclaration::request("a", "s2", s, fog), 0);
        assert!(compute_all_bridges(&table, &t).is_empty());
    }

    #[test]
    fn edge_to_cloud_takes_two_bridges() {
        let t = topo();
        let mut table = FlowTable::new();
        let robot = node(&t, "edge/robot");
        let cloud = node(&t, "cloud/cloud-1");
        table.upsert(
            FlowDeclaration::advertise("a", "s1", BrokerScope::intra_node(&robot), robot, 1.0, 10),
            0,
        );
        table.upsert(FlowDeclaration::request("a", "s2", scope(&t, "intra_layer:cloud"), cloud), 0);
        let all = compute_all_bridges(&table, &t);
        let expected: BTreeSet<String> = [
            "a intra_node:edge/robot->inter_layer:edge @edge/robot",
            "a inter_layer:edge->intra_layer:cloud @cloud/cloud-1",
        ]
        .iter()
        .map(ToString::to_string)
        .collect();
        assert_eq!(names(&all), expected);
        assert!(all.iter().find(|b| b.dest_scope.kind == ScopeKind::InterLayer).unwrap().is_limited());
    }

    #[test]
    fn one_to_many_matches_figure_three() {
        let t = topo();
        let robot = node(&t, "edge/robot");
        let ext = scope(&t, "ext:edge");
        let mut table = FlowTable::new();
        table.upsert(FlowDeclaration::advertise("t", "s1", ext.clone(), robot.clone(), 10.0, 100), 0);
        table.upsert(FlowDeclaration::request("t", "s2", BrokerScope::intra_node(&robot), robot), 0);
        table.upsert(
            FlowDeclaration::request(
                "t",
                "s2",
                scope(&t, "intra_layer:cloud"),
                node(&t, "cloud/cloud-1"),
            ),
            0,
        );
        table.upsert(FlowDeclaration::request("t", "s3", ext, node(&t, "edge/robot-2")), 0);
        table.upsert(FlowDeclaration::request("t", "s3", scope(&t, "ext:fog"), node(&t, "fog/fog-1")), 0);
        let expected: BTreeSet<String> = [
            "t external_protocol:edge->intra_node:edge/robot @edge/robot",
            "t external_protocol:edge->inter_layer:edge @edge/robot",
            "t inter_layer:edge->intra_layer:cloud @cloud/cloud-1",
            "t inter_layer:edge->external_protocol:fog @fog/fog-1",
        ]
        .iter()
        .map(ToString::to_string)
        .collect();
        assert_eq!(names(&compute_all_bridges(&table, &t)), expected);
    }

    #[test]
    fn node_to_node_goes_through_layer_scope() {
        let t = topo();
        let a = node(&t, "edge/robot");
        let b = node(&t, "edge/robot-2");
        let mut table = FlowTable::new();
        table.upsert(FlowDeclaration::advertise("x", "p", BrokerScope::intra_node(&a), a.clone(), 1.0, 1), 0);
        table.upsert(FlowDeclaration::request("x", "c", BrokerScope::intra_node(&b), b.clone()), 0);
        let on_a = compute_required_bridges(&table, &t, &a);
        let on_b = compute_required_bridges(&table, &t, &b);
        assert_eq!(names(&on_a), ["x intra_node:edge/robot->intra_layer:edge @edge/robot".to_string()].into());
        assert_eq!(
            names(&on_b),
            ["x intra_layer:edge->intra_node:edge/robot-2 @edge/robot-2".to_string()].into()
        );
    }

    #[test]
    fn shared_hops_merge_origins() {
        let t = topo();
        let fog = node(&t, "fog/fog-1");
        let r1 = node(&t, "edge/robot");
        let r2 = node(&t, "edge/robot-2");
        let mut table = FlowTable::new();
        table.upsert(FlowDeclaration::advertise("m", "p", BrokerScope::intra_layer(&fog.layer), fog.clone(), 1.0, 1), 0);
        for r in [&r1, &r2] {
            table.upsert(FlowDeclaration::request("m", "c", BrokerScope::intra_node(r), r.clone()), 0);
        }
        let all = compute_all_bridges(&table, &t);
        assert_eq!(all.len(), 3);
        let out = all.iter().filter(|b| b.host == fog).count();
        assert_eq!(out, 1);
    }

    #[test]
    fn request_without_advertiser_needs_nothing() {
        let t = topo();
        let mut table = FlowTable::new();
        table.upsert(FlowDeclaration::request("a", "s", scope(&t, "intra_layer:fog"), node(&t, "fog/fog-1")), 0);
        assert!(compute_all_bridges(&table, &t).is_empty());
    }
}
