// SPDX-License-Identifier: Apache-2.0

//! Multi-layer configuration: an authoritative main store, per-layer worker
//! replicas that pull from it periodically, and change notices on each
//! layer's local broker.

mod document;
mod service;
mod store;
mod worker;

use thiserror::Error;

pub use document::{canonical, changed_paths, ConfigChangeNotice, ConfigDocument, ConfigScope};
pub use service::{handle, ConfigOp, ConfigReply, ConfigRequest, ConfigResult, MainService, WorkerLink};
pub use store::{ConfigSource, MainStore};
pub use worker::ConfigWorker;

pub const NOTICE_TOPIC: &str = "__config/notice";
pub const REQ_TOPIC: &str = "__config/req";
pub const REP_TOPIC: &str = "__config/rep";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("unknown subject {0}")]
    UnknownSubject(String),
    #[error("no document or default for {0}")]
    NotFound(String),
    #[error("document body must be an object")]
    NotAnObject,
    #[error("main service unreachable")]
    Unreachable,
    #[error("store file line {line}: {reason}")]
    Corrupt { line: usize, reason: String },
    #[error("encoding failure: {0}")]
    Codec(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
