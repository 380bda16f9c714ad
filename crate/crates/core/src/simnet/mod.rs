// SPDX-License-Identifier: Apache-2.0

//! Deterministic network simulation: a virtual-time scheduler plus link models
//! with latency, uniform jitter, loss and bandwidth serialization.

mod link;
mod network;
mod scheduler;
pub mod wire;

pub use link::{
    propagate, serialize, transmit, LinkDefaults, LinkSpec, LinkState, Transmission,
};
pub use network::{SimNetwork, LINK_BYTES, LINK_MESSAGES, LOSS_DROPS, OFFERED, UNSUBSCRIBED_DROPS};
pub use scheduler::{Simulator, TimerHandle};
