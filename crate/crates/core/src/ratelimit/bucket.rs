// SPDX-License-Identifier: Apache-2.0

use crate::clock::{to_secs_f64, Nanos};

/// Real-valued token bucket; one token per granted message.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBucket {
    tokens: f64,
    capacity: f64,
    rate: f64,
    last_update: Nanos,
}

impl TokenBucket {
    /// Starts full.
    pub fn new(rate: f64, capacity: f64, now: Nanos) -> Self {
        Self { tokens: capacity, capacity, rate, last_update: now }
    }

    pub fn with_tokens(mut self, tokens: f64) -> Self {
        self.tokens = tokens.clamp(0.0, self.capacity);
        self
    }

    pub fn tokens(&self) -> f64 {
        self.tokens
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn capacity(&self) -> f64 {
        self.capacity
    }

    pub fn last_update(&self) -> Nanos {
        self.last_update
    }

    fn refill(&mut self, now: Nanos) {
        let dt = to_secs_f64(now.saturating_sub(self.last_update));
        if self.rate.is_infinite() {
            self.tokens = self.capacity;
        } else if dt > 0.0 {
            self.tokens = (self.tokens + self.rate * dt).min(self.capacity);
        }
        self.last_update = self.last_update.max(now);
    }

    /// Refills for the elapsed time, then spends one token if at least one is
    /// available.
    pub fn try_acquire(&mut self, now: Nanos) -> bool {
        self.refill(now);
        if self.tokens >= 1.0 {
            self.tokens -= 1.0;
            true
        } else {
            false
        }
    }

    /// Switches to a new refill rate; tokens accrued so far at the old rate are
    /// kept.
    pub fn set_rate(&mut self, rate: f64, now: Nanos) {
        self.refill(now);
        self.rate = rate;
    }

    pub fn set_capacity(&mut self, capacity: f64) {
        self.capacity = capacity;
        self.tokens = self.tokens.min(capacity);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::{from_secs_f64, NANOS_PER_SEC};

    #[test]
    fn initial_burst_of_capacity() {
        let mut b = TokenBucket::new(2.0, 2.0, 0);
        assert!(b.try_acquire(0));
        assert!(b.try_acquire(0));
        assert!(!b.try_acquire(0));
    }

    #[test]
    fn half_second_at_two_hz_refills_one_token() {
        let mut b = TokenBucket::new(2.0, 2.0, 0).with_tokens(0.0);
        assert!(b.try_acquire(NANOS_PER_SEC / 2));
        assert_eq!(b.tokens(), 0.0);
    }

    #[test]
    fn zero_rate_never_refills() {
        let mut b = TokenBucket::new(0.0, 2.0, 0);
        let grants = (0..100).filter(|i| b.try_acquire(i * NANOS_PER_SEC)).count();
        assert_eq!(grants, 2);
    }

    #[test]
    fn tokens_capped_at_capacity() {
        let mut b = TokenBucket::new(100.0, 2.0, 0).with_tokens(0.0);
        b.set_rate(100.0, from_secs_f64(60.0));
        assert_eq!(b.tokens(), 2.0);
    }

    #[test]
    fn denied_call_still_moves_last_update() {
        let mut b = TokenBucket::new(1.0, 2.0, 0).with_tokens(0.0);
        assert!(!b.try_acquire(from_secs_f64(0.5)));
        assert_eq!(b.last_update(), from_secs_f64(0.5));
        assert!(b.try_acquire(from_secs_f64(1.0)));
    }

    #[test]
    fn rate_change_keeps_tokens() {
        let mut b = TokenBucket::new(10.0, 2.0, 0).with_tokens(0.5);
        b.set_rate(1.0, 0);
        assert_eq!(b.tokens(), 0.5);
        assert_eq!(b.rate(), 1.0);
    }
}
