// SPDX-License-Identifier: Apache-2.0

use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfigScope {
    Layer,
    Node,
    Service,
}

impl fmt::Display for ConfigScope {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Layer => "layer",
            Self::Node => "node",
            Self::Service => "service",
        })
    }
}

/// `subject` is a layer name, a `layer/node` path or a service name,
/// depending on `scope`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigDocument {
    pub scope: ConfigScope,
    pub subject: String,
    pub body: Value,
    pub revision: u64,
}

impl ConfigDocument {
    pub fn key(&self) -> (ConfigScope, String) {
        (self.scope, self.subject.clone())
    }

    /// Canonical text of the body: keys sorted, no whitespace.
    pub fn canonical_body(&self) -> String {
        canonical(&self.body)
    }

    /// Value at a dotted path, e.g. `rate_limit.limit_mbps`.
    pub fn lookup(&self, path: &str) -> Option<&Value> {
        path.split('.').try_fold(&self.body, |v, k| v.get(k))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigChangeNotice {
    pub scope: ConfigScope,
    pub subject: String,
    pub revision: u64,
    pub changed: Vec<String>,
}

impl ConfigChangeNotice {
    pub fn touches(&self, prefix: &str) -> bool {
        self.changed.iter().any(|p| p == "." || p == prefix || p.starts_with(&format!("{prefix}.")))
    }
}

/// Serializes with sorted object keys (the map type keeps keys ordered).
pub fn canonical(value: &Value) -> String {
    serde_json::to_string(value).unwrap_or_default()
}

/// Dotted paths of leaves that differ between `old` and `new`, sorted.
/// Objects are compared key by key; anything else is a leaf.
pub fn changed_paths(old: &Value, new: &Value) -> Vec<String> {
    let mut out = Vec::new();
    diff("", old, new, &mut out);
    out.sort();
    out
}

fn join(prefix: &str, key: &str) -> String {
    if prefix.is_empty() {
        key.to_owned()
    } else {
        format!("{prefix}.{key}")
    }
}

fn diff(prefix: &str, old: &Value, new: &Value, out: &mut Vec<String>) {
    match (old, new) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, va) in a {
                match b.get(k) {
                    Some(vb) => diff(&join(prefix, k), va, vb, out),
                    None => leaves(&join(prefix, k), va, out),
                }
            }
            for (k, vb) in b {
                if !a.contains_key(k) {
                    leaves(&join(prefix, k), vb, out);
                }
            }
        }
        (a, b) if a == b => {}
        _ => out.push(if prefix.is_empty() { ".".into() } else { prefix.to_owned() }),
    }
}

fn leaves(prefix: &str, v: &Value, out: &mut Vec<String>) {
    match v {
        Value::Object(m) if !m.is_empty() => {
            for (k, c) in m {
                leaves(&join(prefix, k), c, out);
            }
        }
        _ => out.push(prefix.to_owned()),
    }
}
