// SPDX-License-Identifier: Apache-2.0

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use serde_json::Value;

use super::document::{ConfigDocument, ConfigScope};
use super::ConfigError;
use crate::topology::{LayerId, Topology};

/// Where a worker fetches its layer's documents from.
pub trait ConfigSource: Send + Sync {
    fn fetch(&self, layer: &LayerId) -> Result<Vec<ConfigDocument>, ConfigError>;
}

/// Authoritative document store.
///
/// With a backing file every accepted write is appended as one JSON line;
/// opening the file replays it, the last line per subject winning.
pub struct MainStore {
    topology: Arc<Topology>,
    docs: RwLock<BTreeMap<(ConfigScope, String), ConfigDocument>>,
    file: Option<(PathBuf, Mutex<File>)>,
}

impl std::fmt::Debug for MainStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MainStore").field("docs", &self.docs.read().len()).finish()
    }
}

impl MainStore {
    pub fn in_memory(topology: Arc<Topology>) -> Self {
        Self { topology, docs: RwLock::new(BTreeMap::new()), file: None }
    }

    pub fn open(topology: Arc<Topology>, path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref().to_path_buf();
        let mut docs = BTreeMap::new();
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let doc: ConfigDocument = serde_json::from_str(&line)
                    .map_err(|e| ConfigError::Corrupt { line: i + 1, reason: e.to_string() })?;
                docs.insert(doc.key(), doc);
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { topology, docs: RwLock::new(docs), file: Some((path, Mutex::new(file))) })
    }

    pub fn path(&self) -> Option<&Path> {
        self.file.as_ref().map(|(p, _)| p.as_path())
    }

    fn check_subject(&self, scope: ConfigScope, subject: &str) -> Result<(), ConfigError> {
        let known = match scope {
            ConfigScope::Layer => self.topology.layer(subject).is_some(),
            ConfigScope::Node => self.topology.node(subject).is_some(),
            ConfigScope::Service => !subject.is_empty(),
        };
        if known {
            Ok(())
        } else {
            Err(ConfigError::UnknownSubject(format!("{scope} `{subject}`")))
        }
    }

    /// Stores `body` as the next revision of (scope, subject).
    pub fn main_put(&self, scope: ConfigScope, subject: &str, body: Value) -> Result<u64, ConfigError> {
        self.check_subject(scope, subject)?;
        if !body.is_object() {
            return Err(ConfigError::NotAnObject);
        }
        let mut docs = self.docs.write();
        let revision = docs.get(&(scope, subject.to_owned())).map_or(0, |d| d.revision) + 1;
        let doc = ConfigDocument { scope, subject: subject.to_owned(), body, revision };
        if let Some((_, file)) = &self.file {
            let mut line = serde_json::to_string(&doc).map_err(|e| ConfigError::Codec(e.to_string()))?;
            line.push('\n');
            let mut f = file.lock();
            f.write_all(line.as_bytes())?;
            f.flush()?;
        }
        docs.insert(doc.key(), doc);
        Ok(revision)
    }

    pub fn get(&self, scope: ConfigScope, subject: &str) -> Option<ConfigDocument> {
        self.docs.read().get(&(scope, subject.to_owned())).cloned()
    }

    pub fn list(&self, scope: ConfigScope) -> Vec<ConfigDocument> {
        self.docs.read().values().filter(|d| d.scope == scope).cloned().collect()
    }

    /// Documents a worker of `layer` replicates: the layer's own document,
    /// those of its nodes, and every service document.
    pub fn layer_documents(&self, layer: &LayerId) -> Vec<ConfigDocument> {
        let prefix = format!("{}/", layer.name);
        self.docs
            .read()
            .values()
            .filter(|d| match d.scope {
                ConfigScope::Layer => d.subject == layer.name,
                ConfigScope::Node => d.subject.starts_with(&prefix),
                ConfigScope::Service => true,
            })
            .cloned()
            .collect()
    }
}

impl ConfigSource for MainStore {
    fn fetch(&self, layer: &LayerId) -> Result<Vec<ConfigDocument>, ConfigError> {
        Ok(self.layer_documents(layer))
    }
}
