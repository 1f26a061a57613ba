//! Bounded least-recently-used map.
//!
//! Recency is tracked with a monotonically increasing tick per access, which
//! keeps the structure `no_std` friendly at the cost of O(log n) updates.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

#[derive(Debug, Clone)]
pub struct LruMap<K: Ord + Clone, V> {
    capacity: usize,
    tick: u64,
    entries: BTreeMap<K, (u64, V)>,
    by_age: BTreeMap<u64, K>,
}

impl<K: Ord + Clone, V> LruMap<K, V> {
    /// A zero capacity map stores nothing.
    pub fn new(capacity: usize) -> Self {
        LruMap {
            capacity,
            tick: 0,
            entries: BTreeMap::new(),
            by_age: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn contains(&self, key: &K) -> bool {
        self.entries.contains_key(key)
    }

    fn touch(&mut self, key: &K) {
        self.tick += 1;
        let tick = self.tick;
        if let Some((age, _)) = self.entries.get_mut(key) {
            self.by_age.remove(age);
            *age = tick;
            self.by_age.insert(tick, key.clone());
        }
    }

    /// Looks up `key`, marking it most recently used.
    pub fn get(&mut self, key: &K) -> Option<&V> {
        if !self.entries.contains_key(key) {
            return None;
        }
        self.touch(key);
        self.entries.get(key).map(|(_, v)| v)
    }

    /// Inserts or replaces; returns the evicted entry, if any.
    pub fn insert(&mut self, key: K, value: V) -> Option<(K, V)> {
        if self.capacity == 0 {
            return Some((key, value));
        }
        if let Some((_, slot)) = self.entries.get_mut(&key) {
            *slot = value;
            self.touch(&key);
            return None;
        }
        let evicted = if self.entries.len() >= self.capacity {
            self.pop_oldest()
        } else {
            None
        };
        self.tick += 1;
        self.by_age.insert(self.tick, key.clone());
        self.entries.insert(key, (self.tick, value));
        evicted
    }

    pub fn remove(&mut self, key: &K) -> Option<V> {
        let (age, v) = self.entries.remove(key)?;
        self.by_age.remove(&age);
        Some(v)
    }

    fn pop_oldest(&mut self) -> Option<(K, V)> {
        let (_, key) = self.by_age.pop_first()?;
        let (_, v) = self.entries.remove(&key)?;
        Some((key, v))
    }

    /// Keys from least to most recently used.
    pub fn keys_by_recency(&self) -> Vec<K> {
        self.by_age.values().cloned().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn evicts_least_recently_used() {
        let mut m = LruMap::new(2);
        m.insert(1, "a");
        m.insert(2, "b");
        assert_eq!(m.get(&1), Some(&"a"));
        assert_eq!(m.insert(3, "c"), Some((2, "b")));
        assert_eq!(m.keys_by_recency(), vec![1, 3]);
    }

    #[test]
    fn overwrite_refreshes() {
        let mut m = LruMap::new(2);
        m.insert(1, 10);
        m.insert(2, 20);
        assert_eq!(m.insert(1, 11), None);
        assert_eq!(m.insert(3, 30), Some((2, 20)));
        assert_eq!(m.get(&1), Some(&11));
    }

    #[test]
    fn zero_capacity_stores_nothing() {
        let mut m = LruMap::new(0);
        assert_eq!(m.insert(1, 1), Some((1, 1)));
        assert!(m.is_empty());
    }
}
