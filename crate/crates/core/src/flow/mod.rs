// SPDX-License-Identifier: Apache-2.0

//! Dynamic data distribution: declaration tables, bridge computation and the
//! per-node engine that installs bridges and moves messages across them.

mod bridge;
mod bridges;
mod dedupe;
mod engine;
mod table;

pub use bridge::{
    Bridge, COMPRESSED_BYTES_SAVED, CORRUPT_DROPS, DEDUPE_DROPS, DEFAULT_MAX_HOPS, DELIVERED,
    LIMITER_DROPS, LOOP_DETECTIONS,
};
pub use bridges::{compute_all_bridges, compute_required_bridges, BridgeKey, BridgeSpec, Origin};
pub use dedupe::{DedupeWindow, DEFAULT_WINDOW};
pub use engine::{
    EngineContext, EngineSettings, FlowEngine, FlowError, ADVERTISE_TOPIC, BRIDGES_GAUGE,
    CONTROL_MESSAGES, REQUEST_TOPIC, WITHDRAW_TOPIC,
};
pub use table::{FlowTable, Upsert};
