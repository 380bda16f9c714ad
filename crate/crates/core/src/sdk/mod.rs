// SPDX-License-Identifier: Apache-2.0

//! Service-facing API and the deployment that wires brokers, flow engines,
//! heartbeats, configuration and probes together on a simulated network.

mod deployment;
mod service;

use thiserror::Error;

pub use deployment::{Deployment, DeploymentSettings, ENGINE_SERVICE, WATCHDOG_EXPIRIES};
pub use service::{MessageCallback, ServiceBuilder, ServiceHandle, ServiceState, PUBLISHED};

use crate::broker::BrokerError;
use crate::config::ConfigError;
use crate::flow::FlowError;

#[derive(Debug, Error)]
pub enum SdkError {
    #[error("node `{0}` is not part of the topology")]
    UnknownNode(String),
    #[error("topic `{0}` uses the reserved `__` prefix")]
    ReservedTopic(String),
    #[error("empty topic")]
    EmptyTopic,
    #[error("service `{0}` already runs on {1}")]
    DuplicateService(String, String),
    #[error("topic `{0}` advertised twice")]
    DuplicateTopic(String),
    #[error("flow engine on {0} is not live")]
    EngineUnavailable(String),
    #[error("topic `{0}` was not advertised by this service")]
    NotAdvertised(String),
    #[error("service `{0}` is stopped")]
    Stopped(String),
    #[error("scope `{0}` is not usable from this node")]
    InvalidScope(String),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error(transparent)]
    Config(#[from] ConfigError),
}
