// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};
use thiserror::Error;

use super::allocator::{allocate, AllocationPlan, PublisherAllocation, PublisherRecord, RateLimitConfig};
use super::bucket::TokenBucket;
use crate::clock::Clock;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LimitError {
    #[error("topic `{0}` is not registered with the limiter")]
    UnknownTopic(String),
}

struct State {
    cfg: RateLimitConfig,
    records: BTreeMap<String, PublisherRecord>,
    plan: AllocationPlan,
}

/// Client-level limiter: one budget shared by every topic leaving a node over
/// its inter-layer scope, one token bucket per topic.
///
/// Allocation, size observation and reconfiguration serialize on one lock;
/// `try_acquire` only takes the lock of the topic's own bucket.
pub struct RateLimiter {
    clock: Arc<dyn Clock>,
    state: Mutex<State>,
    buckets: RwLock<HashMap<String, Arc<Mutex<TokenBucket>>>>,
}

impl std::fmt::Debug for RateLimiter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let st = self.state.lock();
        f.debug_struct("RateLimiter")
            .field("cfg", &st.cfg)
            .field("records", &st.records.len())
            .finish()
    }
}

impl RateLimiter {
    pub fn new(cfg: RateLimitConfig, clock: Arc<dyn Clock>) -> Self {
        let plan = allocate(&cfg, &[]);
        Self {
            clock,
            state: Mutex::new(State { cfg, records: BTreeMap::new(), plan }),
            buckets: RwLock::new(HashMap::new()),
        }
    }

    pub fn config(&self) -> RateLimitConfig {
        self.state.lock().cfg.clone()
    }

    /// Registers or updates a topic. The declared size only raises the
    /// recorded maximum; a zero rate means "unknown" and is treated as
    /// unbounded.
    pub fn register(&self, topic: &str, rate: f64, max_size: u64) {
        let mut st = self.state.lock();
        upsert(&mut st, topic, rate, max_size);
        self.reallocate(&mut st);
    }

    /// Replaces the registered set with `publishers` (topic, rate, size) in a
    /// single reallocation.
    pub fn sync_publishers(&self, publishers: &[(String, f64, u64)]) {
        let mut st = self.state.lock();
        st.records.retain(|t, _| publishers.iter().any(|(p, _, _)| p == t));
        for (topic, rate, size) in publishers {
            upsert(&mut st, topic, *rate, *size);
        }
        self.buckets.write().retain(|t, _| publishers.iter().any(|(p, _, _)| p == t));
        self.reallocate(&mut st);
    }

    pub fn unregister(&self, topic: &str) {
        let mut st = self.state.lock();
        if st.records.remove(topic).is_some() {
            self.buckets.write().remove(topic);
            self.reallocate(&mut st);
        }
    }

    /// Raises the topic's max size when `size` exceeds it and reallocates every
    /// bucket. Returns whether a reallocation happened.
    pub fn observe_size(&self, topic: &str, size: u64) -> Result<bool, LimitError> {
        let mut st = self.state.lock();
        let cfg = st.cfg.clone();
        let record = st
            .records
            .get_mut(topic)
            .ok_or_else(|| LimitError::UnknownTopic(topic.to_owned()))?;
        if !record.observe(size, &cfg) {
            return Ok(false);
        }
        self.reallocate(&mut st);
        Ok(true)
    }

    /// Applies a new configuration and reallocates; bucket token counts carry
    /// over.
    pub fn reconfigure(&self, cfg: RateLimitConfig) {
        let mut st = self.state.lock();
        for record in st.records.values_mut() {
            record.class = super::allocator::classify(record.max_size, &cfg);
        }
        st.cfg = cfg;
        self.reallocate(&mut st);
    }

    pub fn try_acquire(&self, topic: &str) -> Result<bool, LimitError> {
        let bucket = self
            .buckets
            .read()
            .get(topic)
            .cloned()
            .ok_or_else(|| LimitError::UnknownTopic(topic.to_owned()))?;
        let now = self.clock.now();
        let granted = bucket.lock().try_acquire(now);
        Ok(granted)
    }

    pub fn allocation(&self, topic: &str) -> Option<PublisherAllocation> {
        self.state.lock().plan.allocations.iter().find(|a| a.topic == topic).cloned()
    }

    pub fn plan(&self) -> AllocationPlan {
        self.state.lock().plan.clone()
    }

    pub fn records(&self) -> Vec<PublisherRecord> {
        self.state.lock().records.values().cloned().collect()
    }

    pub fn record(&self, topic: &str) -> Option<PublisherRecord> {
        self.state.lock().records.get(topic).cloned()
    }

    pub fn bucket(&self, topic: &str) -> Option<TokenBucket> {
        self.buckets.read().get(topic).map(|b| b.lock().clone())
    }

    pub fn is_registered(&self, topic: &str) -> bool {
        self.state.lock().records.contains_key(topic)
    }

    fn reallocate(&self, st: &mut State) {
        let records: Vec<PublisherRecord> = st.records.values().cloned().collect();
        st.plan = allocate(&st.cfg, &records);
        let now = self.clock.now();
        let mut buckets = self.buckets.write();
        for alloc in &st.plan.allocations {
            match buckets.get(&alloc.topic) {
                Some(b) => {
                    let mut b = b.lock();
                    b.set_capacity(st.cfg.bucket_capacity);
                    b.set_rate(alloc.allocated_rate, now);
                }
                None => {
                    buckets.insert(
                        alloc.topic.clone(),
                        Arc::new(Mutex::new(TokenBucket::new(
                            alloc.allocated_rate,
                            st.cfg.bucket_capacity,
                            now,
                        ))),
                    );
                }
            }
        }
    }
}

fn upsert(st: &mut State, topic: &str, rate: f64, max_size: u64) {
    let rate = if rate > 0.0 { rate } else { f64::INFINITY };
    let cfg = st.cfg.clone();
    st.records
        .entry(topic.to_owned())
        .and_modify(|r| {
            r.advertised_rate = rate;
            r.observe(max_size, &cfg);
        })
        .or_insert_with(|| PublisherRecord::new(topic, rate, max_size, &cfg));
}
