use std::collections::{BTreeMap, HashMap};

/// Fixed-capacity least-recently-used set of content ids.
#[derive(Debug, Clone)]
pub struct LruCache {
    capacity: usize,
    clock: u64,
    stamps: HashMap<u32, u64>,
    order: BTreeMap<u64, u32>,
}

impl LruCache {
    pub fn new(capacity: usize) -> Self {
        LruCache {
            capacity: capacity.max(1),
            clock: 0,
            stamps: HashMap::new(),
            order: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.stamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stamps.is_empty()
    }

    pub fn contains(&self, key: u32) -> bool {
        self.stamps.contains_key(&key)
    }

    fn touch(&mut self, key: u32) {
        self.clock += 1;
        if let Some(old) = self.stamps.insert(key, self.clock) {
            self.order.remove(&old);
        }
        self.order.insert(self.clock, key);
    }

    /// Look the key up; a miss inserts it when `admit` is set. Returns hit.
    pub fn access(&mut self, key: u32, admit: bool) -> bool {
        if self.stamps.contains_key(&key) {
            self.touch(key);
            return true;
        }
        if admit {
            if self.stamps.len() >= self.capacity {
                self.evict(1);
            }
            self.touch(key);
        }
        false
    }

    /// Drop up to `n` least recently used entries.
    pub fn evict(&mut self, n: usize) {
        for _ in 0..n {
            let Some((_, key)) = self.order.pop_first() else { break };
            self.stamps.remove(&key);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_traced_two_slots() {
        // A B A C B with two slots: miss miss hit miss(evicts B) miss
        let mut c = LruCache::new(2);
        let hits: Vec<bool> = [1, 2, 1, 3, 2].iter().map(|&k| c.access(k, true)).collect();
        assert_eq!(hits, vec![false, false, true, false, false]);
        assert!(c.contains(3) && c.contains(2) && !c.contains(1));
    }

    #[test]
    fn rejected_keys_are_not_cached() {
        let mut c = LruCache::new(2);
        assert!(!c.access(9, false));
        assert!(!c.access(9, true));
        assert!(c.access(9, true));
        c.evict(5);
        assert!(c.is_empty());
    }
}
