// SPDX-License-Identifier: Apache-2.0

pub mod broker;
pub mod clock;
pub mod config;
pub mod flow;
pub mod monitor;
pub mod ratelimit;
pub mod scenario;
pub mod sdk;
pub mod simnet;
pub mod topology;
