use std::collections::{BTreeMap, VecDeque};

use super::{validate_key, Pattern, TsError, Tuple, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct WaiterId(pub u64);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum WaitMode {
    Read,
    Get,
}

#[derive(Debug)]
struct Waiter {
    id: WaiterId,
    pattern: Pattern,
    mode: WaitMode,
}

/// A tuple handed to a previously blocked waiter by [`Store::put`].
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    pub waiter: WaiterId,
    pub tuple: Tuple,
}

#[derive(Debug, Clone, PartialEq)]
pub enum WaitOutcome {
    Ready(Tuple),
    Waiting(WaiterId),
}

/// Non-blocking matching core.
///
/// Per-key queues are FIFO. When a prefix pattern matches several keys the
/// lexicographically smallest key wins, which keeps selection deterministic.
#[derive(Debug, Default)]
pub struct Store {
    entries: BTreeMap<String, VecDeque<Value>>,
    len: usize,
    waiters: VecDeque<Waiter>,
    next_waiter: u64,
    closed: bool,
}

impl Store {
    pub fn new() -> Self {
        Self::default()
    }

    /// Number of tuples currently stored.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn waiting(&self) -> usize {
        self.waiters.len()
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    /// Inserts a tuple, first offering it to blocked waiters in
    /// registration order. Every matching reader receives a copy; the first
    /// matching getter consumes it and ends the scan.
    pub fn put(&mut self, key: impl Into<String>, value: Value) -> Result<Vec<Delivery>, TsError> {
        let key = key.into();
        validate_key(&key)?;
        let mut deliveries = Vec::new();
        let mut i = 0;
        while i < self.waiters.len() {
            if !self.waiters[i].pattern.matches(&key) {
                i += 1;
                continue;
            }
            let w = self.waiters.remove(i).expect("index in range");
            deliveries.push(Delivery {
                waiter: w.id,
                tuple: Tuple::new(key.clone(), value.clone()),
            });
            if w.mode == WaitMode::Get {
                return Ok(deliveries);
            }
        }
        self.entries.entry(key).or_default().push_back(value);
        self.len += 1;
        Ok(deliveries)
    }

    fn first_match(&self, pattern: &Pattern) -> Option<&str> {
        match pattern {
            Pattern::Exact(k) => self.entries.get_key_value(k).map(|(k, _)| k.as_str()),
            Pattern::Prefix(p) => self
                .entries
                .range::<str, _>((
                    std::ops::Bound::Included(p.as_str()),
                    std::ops::Bound::Unbounded,
                ))
                .next()
                .filter(|(k, _)| k.starts_with(p.as_str()))
                .map(|(k, _)| k.as_str()),
        }
    }

    pub fn try_read(&self, pattern: &Pattern) -> Option<Tuple> {
        let key = self.first_match(pattern)?;
        let value = self.entries[key].front()?.clone();
        Some(Tuple::new(key, value))
    }

    pub fn try_get(&mut self, pattern: &Pattern) -> Option<Tuple> {
        let key = self.first_match(pattern)?.to_string();
        let queue = self.entries.get_mut(&key)?;
        let value = queue.pop_front()?;
        if queue.is_empty() {
            self.entries.remove(&key);
        }
        self.len -= 1;
        Some(Tuple::new(key, value))
    }

    pub fn count(&self, pattern: &Pattern) -> usize {
        match pattern {
            Pattern::Exact(k) => self.entries.get(k).map_or(0, VecDeque::len),
            Pattern::Prefix(p) if p.is_empty() => self.len,
            Pattern::Prefix(p) => self
                .entries
                .range::<str, _>((
                    std::ops::Bound::Included(p.as_str()),
                    std::ops::Bound::Unbounded,
                ))
                .take_while(|(k, _)| k.starts_with(p.as_str()))
                .map(|(_, q)| q.len())
                .sum(),
        }
    }

    pub fn clear(&mut self, pattern: &Pattern) -> usize {
        let keys: Vec<String> = match pattern {
            Pattern::Exact(k) if self.entries.contains_key(k) => vec![k.clone()],
            Pattern::Exact(_) => Vec::new(),
            Pattern::Prefix(p) => self
                .entries
                .range::<str, _>((
                    std::ops::Bound::Included(p.as_str()),
                    std::ops::Bound::Unbounded,
                ))
                .take_while(|(k, _)| k.starts_with(p.as_str()))
                .map(|(k, _)| k.clone())
                .collect(),
        };
        let mut removed = 0;
        for k in keys {
            if let Some(q) = self.entries.remove(&k) {
                removed += q.len();
            }
        }
        self.len -= removed;
        removed
    }

    fn wait(&mut self, pattern: &Pattern, mode: WaitMode) -> Result<WaitOutcome, TsError> {
        let hit = match mode {
            WaitMode::Read => self.try_read(pattern),
            WaitMode::Get => self.try_get(pattern),
        };
        if let Some(t) = hit {
            return Ok(WaitOutcome::Ready(t));
        }
        if self.closed {
            return Err(TsError::WaitAborted);
        }
        let id = WaiterId(self.next_waiter);
        self.next_waiter += 1;
        self.waiters.push_back(Waiter {
            id,
            pattern: pattern.clone(),
            mode,
        });
        Ok(WaitOutcome::Waiting(id))
    }

    /// Non-destructive read, or registers a read waiter.
    pub fn read_or_wait(&mut self, pattern: &Pattern) -> Result<WaitOutcome, TsError> {
        self.wait(pattern, WaitMode::Read)
    }

    /// Destructive take, or registers a get waiter.
    pub fn get_or_wait(&mut self, pattern: &Pattern) -> Result<WaitOutcome, TsError> {
        self.wait(pattern, WaitMode::Get)
    }

    /// Withdraws a blocked request. Returns false if it was already served.
    pub fn cancel(&mut self, id: WaiterId) -> bool {
        match self.waiters.iter().position(|w| w.id == id) {
            Some(i) => {
                self.waiters.remove(i);
                true
            }
            None => false,
        }
    }

    /// Aborts every blocked request; later waits fail immediately unless a
    /// match already exists. Stored tuples are kept.
    pub fn shutdown(&mut self) -> Vec<WaiterId> {
        self.closed = true;
        self.waiters.drain(..).map(|w| w.id).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn int(v: i64) -> Value {
        Value::Int(v)
    }

    #[test]
    fn single_round_trip() {
        let mut s = Store::new();
        s.put("a", int(1)).unwrap();
        assert_eq!(
            s.try_get(&Pattern::exact("a")),
            Some(Tuple::new("a", int(1)))
        );
        assert!(s.is_empty());
    }

    #[test]
    fn fifo_per_key() {
        let mut s = Store::new();
        s.put("a", int(1)).unwrap();
        s.put("a", int(2)).unwrap();
        assert_eq!(s.try_get(&Pattern::exact("a")).unwrap().value, int(1));
        assert_eq!(s.try_get(&Pattern::exact("a")).unwrap().value, int(2));
        assert_eq!(s.try_get(&Pattern::exact("a")), None);
    }

    #[test]
    fn read_is_non_destructive() {
        let mut s = Store::new();
        s.put("a", int(7)).unwrap();
        assert_eq!(s.try_read(&Pattern::exact("a")).unwrap().value, int(7));
        assert_eq!(s.try_read(&Pattern::exact("a")).unwrap().value, int(7));
        assert_eq!(s.count(&Pattern::exact("a")), 1);
    }

    #[test]
    fn prefix_read() {
        let mut s = Store::new();
        s.put("z:1", int(1)).unwrap();
        s.put("z:0", int(0)).unwrap();
        s.put("y", int(9)).unwrap();
        let t = s.try_read(&Pattern::parse("z:*").unwrap()).unwrap();
        assert!(t.key.starts_with("z:"));
        assert_eq!(t.key, "z:0");
    }

    #[test]
    fn mismatched_pattern_stays_blocked() {
        let mut s = Store::new();
        s.put("task", int(1)).unwrap();
        let out = s.get_or_wait(&Pattern::parse("done:*").unwrap()).unwrap();
        assert!(matches!(out, WaitOutcome::Waiting(_)));
        assert_eq!(s.count(&Pattern::exact("task")), 1);
    }

    #[test]
    fn put_wakes_exactly_one_getter() {
        let mut s = Store::new();
        let ids: Vec<_> = (0..4)
            .map(|_| match s.get_or_wait(&Pattern::exact("task")).unwrap() {
                WaitOutcome::Waiting(id) => id,
                WaitOutcome::Ready(_) => panic!("store is empty"),
            })
            .collect();
        let d = s.put("task", Value::from("d1")).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].waiter, ids[0]);
        assert!(s.is_empty());
        assert_eq!(s.waiting(), 3);
    }

    #[test]
    fn readers_observe_and_getter_consumes() {
        let mut s = Store::new();
        let p = Pattern::exact("k");
        let r1 = s.read_or_wait(&p).unwrap();
        let g = s.get_or_wait(&p).unwrap();
        let r2 = s.read_or_wait(&p).unwrap();
        let d = s.put("k", int(3)).unwrap();
        let woke: Vec<_> = d.iter().map(|d| d.waiter).collect();
        let id = |o: WaitOutcome| match o {
            WaitOutcome::Waiting(id) => id,
            _ => unreachable!(),
        };
        // the getter ends the scan; the later reader keeps waiting
        assert_eq!(woke, vec![id(r1), id(g)]);
        assert!(s.is_empty());
        assert_eq!(s.waiting(), 1);
        let _ = r2;
    }

    #[test]
    fn reader_only_leaves_tuple_stored() {
        let mut s = Store::new();
        let _ = s.read_or_wait(&Pattern::exact("k")).unwrap();
        let d = s.put("k", int(1)).unwrap();
        assert_eq!(d.len(), 1);
        assert_eq!(s.count(&Pattern::exact("k")), 1);
    }

    #[test]
    fn count_and_clear() {
        let mut s = Store::new();
        assert_eq!(s.count(&Pattern::all()), 0);
        assert_eq!(s.clear(&Pattern::all()), 0);
        for i in 0..3 {
            s.put(format!("done:{i}"), Value::Unit).unwrap();
        }
        for _ in 0..5 {
            s.put("task", Value::Unit).unwrap();
        }
        s.put("z:0:1:0-16:0-16", Value::Unit).unwrap();
        s.put("z:0:1:0-16:16-32", Value::Unit).unwrap();
        s.put("z:1:1:0-16:0-16", Value::Unit).unwrap();
        assert_eq!(s.count(&Pattern::parse("done:*").unwrap()), 3);
        assert_eq!(s.count(&Pattern::exact("task")), 5);
        assert_eq!(s.clear(&Pattern::parse("z:0:*").unwrap()), 2);
        assert_eq!(s.count(&Pattern::parse("z:*").unwrap()), 1);
        assert_eq!(s.clear(&Pattern::all()), 9);
        assert_eq!(s.count(&Pattern::all()), 0);
        assert!(s.is_empty());
    }

    #[test]
    fn malformed_key_rejected() {
        let mut s = Store::new();
        assert_eq!(
            s.put("a b", Value::Unit),
            Err(TsError::MalformedKey("a b".into()))
        );
        assert!(s.is_empty());
    }

    #[test]
    fn cancel_and_shutdown() {
        let mut s = Store::new();
        let WaitOutcome::Waiting(a) = s.get_or_wait(&Pattern::exact("x")).unwrap() else {
            panic!()
        };
        assert!(s.cancel(a));
        assert!(!s.cancel(a));
        assert!(s.put("x", int(1)).unwrap().is_empty());
        let WaitOutcome::Waiting(b) = s.read_or_wait(&Pattern::exact("y")).unwrap() else {
            panic!()
        };
        assert_eq!(s.shutdown(), vec![b]);
        assert_eq!(
            s.get_or_wait(&Pattern::exact("y")),
            Err(TsError::WaitAborted)
        );
        // existing matches are still served after shutdown
        assert!(matches!(
            s.get_or_wait(&Pattern::exact("x")),
            Ok(WaitOutcome::Ready(_))
        ));
    }
}
