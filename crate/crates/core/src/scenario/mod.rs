// SPDX-License-Identifier: Apache-2.0

//! Declarative workloads: scenario files, the runner that executes them on a
//! simulated deployment, and the summary/diff views over their exports.

pub mod payload;
mod runner;
mod spec;
mod summary;

use thiserror::Error;

pub use payload::{compressible_corpus, PayloadGen, PayloadKind};
pub use runner::{run_scenario, run_scenario_files, run_variant, RunOptions, VariantRun};
pub use spec::{AdvertiseSpec, ProbeSpec, RequestSpec, ScenarioSpec, ServiceSpec, VariantSpec};
pub use summary::{
    deltas_csv, diff_runs, diff_summaries, load_summary, percentile, summarize, DropRow, LinkRow, Summary,
    TopicDelta, TopicRow,
};

pub const METRICS_FILE: &str = "metrics.txt";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const TOPICS_FILE: &str = "topics.csv";
pub const DROPS_FILE: &str = "drops.csv";
pub const LINKS_FILE: &str = "links.csv";
pub const BRIDGES_FILE: &str = "bridges.csv";
pub const NET_LATENCY_FILE: &str = "net_latency.csv";
pub const INVENTORY_FILE: &str = "inventory.txt";
pub const DURATION_GAUGE: &str = "scenario_duration_seconds";

/// Bundled topology and scenario files.
pub mod bundled {
    pub const TOPOLOGY: &str = include_str!("../../scenarios/topology.toml");
    pub const NAVIGATION: &str = include_str!("../../scenarios/navigation.toml");
    pub const ESTOP: &str = include_str!("../../scenarios/estop.toml");
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("setup failed: {0}")]
    Setup(String),
    #[error("io error: {0}")]
    Io(String),
}

impl ScenarioError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Parse(_) => 2,
            Self::Invariant(_) => 3,
            Self::Schema(_) | Self::Setup(_) | Self::Io(_) => 1,
        }
    }
}
