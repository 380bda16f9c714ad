// SPDX-License-Identifier: Apache-2.0

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("limit_mbps must be > 0, got {0}")]
    Limit(f64),
    #[error("overhead factor alpha must be >= 1, got {0}")]
    Alpha(f64),
    #[error("max share beta must be in (0, 1], got {0}")]
    Beta(f64),
    #[error("min_rate_hz must be > 0, got {0}")]
    MinRate(f64),
    #[error("bucket capacity must be >= 1, got {0}")]
    Capacity(f64),
}

/// Client-level limiter settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RateLimitConfig {
    /// Link budget in megabits per second.
    pub limit_mbps: f64,
    /// Per-message overhead multiplier.
    pub alpha: f64,
    /// Largest fraction of the budget one publisher may take.
    pub beta: f64,
    /// Starvation floor for large-message publishers, Hz.
    pub min_rate_hz: f64,
    /// Token bucket capacity.
    pub bucket_capacity: f64,
    /// Publishers whose max size reaches this many bytes are "large".
    pub large_threshold_bytes: u64,
    pub compression_level: i32,
}

impl Default for RateLimitConfig {
    fn default() -> Self {
        Self {
            limit_mbps: 160.0,
            alpha: 1.02,
            beta: 0.95,
            min_rate_hz: 2.0,
            bucket_capacity: 2.0,
            large_threshold_bytes: 65_536,
            compression_level: 10,
        }
    }
}

impl RateLimitConfig {
    pub fn with_limit(mut self, mbps: f64) -> Self {
        self.limit_mbps = mbps;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.limit_mbps > 0.0 && self.limit_mbps.is_finite()) {
            return Err(ConfigError::Limit(self.limit_mbps));
        }
        if !(self.alpha >= 1.0 && self.alpha.is_finite()) {
            return Err(ConfigError::Alpha(self.alpha));
        }
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(ConfigError::Beta(self.beta));
        }
        if !(self.min_rate_hz > 0.0 && self.min_rate_hz.is_finite()) {
            return Err(ConfigError::MinRate(self.min_rate_hz));
        }
        if !(self.bucket_capacity >= 1.0 && self.bucket_capacity.is_finite()) {
            return Err(ConfigError::Capacity(self.bucket_capacity));
        }
        Ok(())
    }
}

/// Bytes per second available to one client: `limit_mbps · 1024² / 8`.
pub fn available_bandwidth(cfg: &RateLimitConfig) -> f64 {
    cfg.limit_mbps * 1024.0 * 1024.0 / 8.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PublisherClass {
    Standard,
    Large,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherRecord {
    pub topic: String,
    /// Hz. Infinite when the producer did not declare a rate.
    pub advertised_rate: f64,
    /// Running maximum of declared and observed sizes, bytes.
    pub max_size: u64,
    pub class: PublisherClass,
}

impl PublisherRecord {
    pub fn new(topic: impl Into<String>, advertised_rate: f64, max_size: u64, cfg: &RateLimitConfig) -> Self {
        Self {
            topic: topic.into(),
            advertised_rate,
            max_size,
            class: classify(max_size, cfg),
        }
    }

    /// Raises `max_size` (never lowers it) and reclassifies; returns whether it grew.
    pub fn observe(&mut self, size: u64, cfg: &RateLimitConfig) -> bool {
        if size <= self.max_size {
            return false;
        }
        self.max_size = size;
        self.class = classify(size, cfg);
        true
    }

    pub fn demand(&self, alpha: f64) -> f64 {
        if self.max_size == 0 {
            0.0
        } else {
            self.advertised_rate * self.max_size as f64 * alpha
        }
    }
}

pub fn classify(max_size: u64, cfg: &RateLimitConfig) -> PublisherClass {
    if max_size >= cfg.large_threshold_bytes {
        PublisherClass::Large
    } else {
        PublisherClass::Standard
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublisherAllocation {
    pub topic: String,
    pub allocated_rate: f64,
    /// Bytes per second the publisher asked for.
    pub demand: f64,
}

/// Result of one allocation pass.
#[derive(Debug, Clone, PartialEq)]
pub struct AllocationPlan {
    /// In allocation order: standard publishers first, each phase by
    /// descending demand.
    pub allocations: Vec<PublisherAllocation>,
    pub budget: f64,
    /// Budget left after both phases (never negative).
    pub remaining: f64,
    /// Bytes/s granted beyond the budget by the starvation floor.
    pub overcommit: f64,
}

impl AllocationPlan {
    pub fn rate_of(&self, topic: &str) -> Option<f64> {
        self.allocations.iter().find(|a| a.topic == topic).map(|a| a.allocated_rate)
    }
}

/// Two-phase priority allocation.
///
/// Standard publishers are served first, then large ones; inside each phase
/// publishers go by descending demand `rate · size · α` (ties by topic name).
/// Each receives `min(advertised, remaining / (size·α), β·budget / (size·α))`
/// and the remaining budget shrinks by what it was granted. Large publishers
/// are then lifted to the starvation floor (`min_rate_hz`, but never above
/// their advertised rate), which may overcommit the budget.
pub fn allocate(cfg: &RateLimitConfig, publishers: &[PublisherRecord]) -> AllocationPlan {
    let budget = available_bandwidth(cfg);
    let mut remaining = budget;
    let mut granted = 0.0;
    let mut allocations = Vec::with_capacity(publishers.len());

    for class in [PublisherClass::Standard, PublisherClass::Large] {
        let mut phase: Vec<&PublisherRecord> =
            publishers.iter().filter(|p| p.class == class).collect();
        phase.sort_by(|a, b| {
            b.demand(cfg.alpha)
                .partial_cmp(&a.demand(cfg.alpha))
                .unwrap_or(Ordering::Equal)
                .then_with(|| a.topic.cmp(&b.topic))
        });
        for p in phase {
            let unit = p.max_size as f64 * cfg.alpha;
            let mut rate = if unit > 0.0 {
                p.advertised_rate.min(remaining / unit).min(cfg.beta * budget / unit)
            } else {
                p.advertised_rate
            };
            rate = rate.max(0.0);
            if class == PublisherClass::Large {
                rate = rate.max(cfg.min_rate_hz.min(p.advertised_rate));
            }
            let used = if unit > 0.0 { rate * unit } else { 0.0 };
            remaining = (remaining - used).max(0.0);
            granted += used;
            allocations.push(PublisherAllocation {
                topic: p.topic.clone(),
                allocated_rate: rate,
                demand: p.demand(cfg.alpha),
            });
        }
    }

    AllocationPlan { allocations, budget, remaining, overcommit: (granted - budget).max(0.0) }
}
