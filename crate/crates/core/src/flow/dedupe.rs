// SPDX-License-Identifier: Apache-2.0

use std::collections::{HashMap, HashSet, VecDeque};

use crate::topology::NodeId;

pub const DEFAULT_WINDOW: usize = 1024;

#[derive(Debug, Default)]
struct Track {
    highest: u64,
    recent: VecDeque<u64>,
    members: HashSet<u64>,
}

/// Recently seen sequences per (origin node, topic), bounded per key.
///
/// A sequence older than everything still in a full window is reported as
/// seen: once evicted it can no longer be told apart from a replay.
#[derive(Debug)]
pub struct DedupeWindow {
    capacity: usize,
    tracks: HashMap<(NodeId, String), Track>,
}

impl Default for DedupeWindow {
    fn default() -> Self {
        Self::new(DEFAULT_WINDOW)
    }
}

impl DedupeWindow {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "dedupe window needs capacity");
        Self { capacity, tracks: HashMap::new() }
    }

    /// Records the triple; returns `true` if it was not seen before.
    pub fn insert(&mut self, origin: &NodeId, topic: &str, sequence: u64) -> bool {
        let track = self.tracks.entry((origin.clone(), topic.to_owned())).or_default();
        if track.members.contains(&sequence) {
            return false;
        }
        if track.recent.len() == self.capacity {
            let oldest = track.recent.iter().copied().min().unwrap_or(0);
            if sequence < oldest {
                return false;
            }
            if let Some(evicted) = track.recent.pop_front() {
                track.members.remove(&evicted);
            }
        }
        track.recent.push_back(sequence);
        track.members.insert(sequence);
        track.highest = track.highest.max(sequence);
        true
    }

    pub fn contains(&self, origin: &NodeId, topic: &str, sequence: u64) -> bool {
        self.tracks
            .get(&(origin.clone(), topic.to_owned()))
            .is_some_and(|t| t.members.contains(&sequence))
    }

    pub fn highest(&self, origin: &NodeId, topic: &str) -> Option<u64> {
        self.tracks.get(&(origin.clone(), topic.to_owned())).map(|t| t.highest)
    }
}
