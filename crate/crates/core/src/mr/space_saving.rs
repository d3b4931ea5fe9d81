//! Space-Saving heavy-hitter summary.
//!
//! Keeps at most `capacity` counters. An untracked item evicts the smallest
//! counter (ties resolved towards the smallest key) and inherits its count as
//! overestimation error. Any item whose true count exceeds `total / capacity`
//! is guaranteed to be tracked, and tracked counts never underestimate.

use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Counter {
    pub count: u64,
    pub bytes: u64,
    pub error: u64,
}

#[derive(Debug, Clone)]
pub struct SpaceSaving<K: Ord + Clone> {
    capacity: usize,
    counters: BTreeMap<K, Counter>,
    total: u64,
}

impl<K: Ord + Clone> SpaceSaving<K> {
    /// # Panics
    /// Panics when `capacity` is zero.
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "space-saving needs at least one counter");
        SpaceSaving {
            capacity,
            counters: BTreeMap::new(),
            total: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }

    /// Counts one occurrence of `item` carrying `bytes`.
    pub fn insert(&mut self, item: K, bytes: u64) {
        self.total += 1;
        if let Some(c) = self.counters.get_mut(&item) {
            c.count += 1;
            c.bytes += bytes;
            return;
        }
        if self.counters.len() < self.capacity {
            self.counters.insert(
                item,
                Counter {
                    count: 1,
                    bytes,
                    error: 0,
                },
            );
            return;
        }
        let (victim, min) = self
            .counters
            .iter()
            .min_by(|a, b| a.1.count.cmp(&b.1.count).then_with(|| a.0.cmp(b.0)))
            .map(|(k, c)| (k.clone(), *c))
            .expect("full summary is non-empty");
        self.counters.remove(&victim);
        self.counters.insert(
            item,
            Counter {
                count: min.count + 1,
                bytes: min.bytes + bytes,
                error: min.count,
            },
        );
    }

    pub fn get(&self, item: &K) -> Option<Counter> {
        self.counters.get(item).copied()
    }

    /// Tracked items in key order.
    pub fn iter(&self) -> impl Iterator<Item = (&K, &Counter)> {
        self.counters.iter()
    }
}
