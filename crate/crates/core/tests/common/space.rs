//! Reference model and randomized workloads for tuple-space clients.

use std::collections::{BTreeMap, HashSet, VecDeque};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use acan_core::tuplespace::{Pattern, Tuple, TupleSpaceClient, Value};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KEYS: [&str; 6] = ["a", "a:1", "a:2", "b", "b:x", "task"];

/// Reference multiset: FIFO per key, smallest matching key wins.
#[derive(Default)]
pub struct Model {
    pub map: BTreeMap<String, VecDeque<i64>>,
}

impl Model {
    pub fn first_key(&self, p: &Pattern) -> Option<String> {
        self.map
            .iter()
            .find(|(k, q)| !q.is_empty() && p.matches(k))
            .map(|(k, _)| k.clone())
    }

    pub fn take(&mut self, p: &Pattern) -> Option<(String, i64)> {
        let k = self.first_key(p)?;
        let v = self.map.get_mut(&k).unwrap().pop_front().unwrap();
        Some((k, v))
    }

    pub fn peek(&self, p: &Pattern) -> Option<(String, i64)> {
        let k = self.first_key(p)?;
        Some((k.clone(), self.map[&k][0]))
    }

    pub fn count(&self, p: &Pattern) -> usize {
        self.map
            .iter()
            .filter(|(k, _)| p.matches(k))
            .map(|(_, q)| q.len())
            .sum()
    }

    pub fn clear(&mut self, p: &Pattern) -> usize {
        let mut n = 0;
        for (k, q) in self.map.iter_mut() {
            if p.matches(k) {
                n += q.len();
                q.clear();
            }
        }
        n
    }
}

fn random_pattern(rng: &mut impl Rng) -> Pattern {
    match rng.random_range(0..4) {
        0 => Pattern::prefix("a"),
        1 => Pattern::prefix("b:"),
        _ => Pattern::exact(KEYS[rng.random_range(0..KEYS.len())]),
    }
}

pub fn as_pair(t: Option<Tuple>) -> Option<(String, i64)> {
    t.map(|t| match t.value {
        Value::Int(v) => (t.key, v),
        other => panic!("unexpected value {other:?}"),
    })
}

/// 10,000 random operations checked step by step against the model, then
/// the conservation and exactly-once accounting.
pub fn stress(client: &dyn TupleSpaceClient, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::default();
    let mut next = 0i64;
    let mut taken = HashSet::new();
    let (mut puts, mut removed) = (0usize, 0usize);
    for _ in 0..10_000 {
        match rng.random_range(0..100) {
            0..=44 => {
                let k = KEYS[rng.random_range(0..KEYS.len())];
                client.put(k, Value::Int(next)).unwrap();
                model.map.entry(k.to_string()).or_default().push_back(next);
                next += 1;
                puts += 1;
            }
            45..=69 => {
                let p = random_pattern(&mut rng);
                let got = as_pair(client.try_get(&p).unwrap());
                assert_eq!(got, model.take(&p), "try_get {p}");
                if let Some((_, v)) = got {
                    assert!(taken.insert(v), "value {v} taken twice");
                    removed += 1;
                }
            }
            70..=79 => {
                let p = random_pattern(&mut rng);
                if model.count(&p) > 0 {
                    let got = client.get(&p).unwrap();
                    let want = model.take(&p).unwrap();
                    assert_eq!(as_pair(Some(got)), Some(want.clone()));
                    assert!(taken.insert(want.1));
                    removed += 1;
                }
            }
            80..=89 => {
                let p = random_pattern(&mut rng);
                assert_eq!(
                    as_pair(client.try_read(&p).unwrap()),
                    model.peek(&p),
                    "try_read {p}"
                );
            }
            90..=97 => {
                let p = random_pattern(&mut rng);
                assert_eq!(client.count(&p).unwrap(), model.count(&p), "count {p}");
            }
            _ => {
                let p = Pattern::exact(KEYS[rng.random_range(0..KEYS.len())]);
                let n = client.clear(&p).unwrap();
                assert_eq!(n, model.clear(&p));
                removed += n;
            }
        }
    }
    let remaining = client.count(&Pattern::all()).unwrap();
    assert_eq!(puts, removed + remaining, "conservation");
    // Drain: every remaining value comes out exactly once, in model order.
    while let Some((k, v)) = as_pair(client.try_get(&Pattern::all()).unwrap()) {
        assert_eq!(model.take(&Pattern::all()), Some((k, v)));
        assert!(taken.insert(v));
    }
    assert_eq!(client.count(&Pattern::all()).unwrap(), 0);
}

/// Producers and blocked consumers on one key: every value is taken once.
pub fn concurrent_takes(make: impl Fn() -> Arc<dyn TupleSpaceClient + Send + Sync>) {
    const PRODUCERS: i64 = 3;
    const PER: i64 = 200;
    let consumers: Vec<_> = (0..4)
        .map(|_| {
            let c = make();
            thread::spawn(move || {
                let mut got = Vec::new();
                loop {
                    let t = c.get(&Pattern::prefix("job")).unwrap();
                    match t.value {
                        Value::Int(-1) => return got,
                        Value::Int(v) => got.push(v),
                        other => panic!("{other:?}"),
                    }
                }
            })
        })
        .collect();
    // Consumers are blocked on an empty space before anything is put.
    thread::sleep(Duration::from_millis(50));
    let producers: Vec<_> = (0..PRODUCERS)
        .map(|p| {
            let c = make();
            thread::spawn(move || {
                for i in 0..PER {
                    c.put("job", Value::Int(p * PER + i)).unwrap();
                }
            })
        })
        .collect();
    for p in producers {
        p.join().unwrap();
    }
    let c = make();
    for _ in 0..4 {
        c.put("job:stop", Value::Int(-1)).unwrap();
    }
    let mut all: Vec<i64> = consumers
        .into_iter()
        .flat_map(|h| h.join().unwrap())
        .collect();
    all.sort_unstable();
    assert_eq!(all, (0..PRODUCERS * PER).collect::<Vec<_>>());
    assert_eq!(c.count(&Pattern::all()).unwrap(), 0);
}
