// SPDX-License-Identifier: Apache-2.0

//! Two-tier inter-layer rate limiting: a client-level bandwidth allocator that
//! hands out per-topic rates, and per-topic token buckets enforcing them.
//! Messages denied a token are dropped, never queued.

mod allocator;
mod bucket;
pub mod compress;
mod limiter;

pub use allocator::{
    allocate, available_bandwidth, classify, AllocationPlan, ConfigError, PublisherAllocation,
    PublisherClass, PublisherRecord, RateLimitConfig,
};
pub use bucket::TokenBucket;
pub use limiter::{LimitError, RateLimiter};
