use std::collections::HashMap;
use std::sync::{Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use super::{Pattern, Store, TsError, Tuple, TupleSpaceClient, Value, WaitOutcome, WaiterId};

#[derive(Default)]
struct Inner {
    store: Store,
    delivered: HashMap<WaiterId, Result<Tuple, TsError>>,
}

impl Inner {
    fn deliver(&mut self, deliveries: Vec<super::Delivery>) -> bool {
        let any = !deliveries.is_empty();
        for d in deliveries {
            self.delivered.insert(d.waiter, Ok(d.tuple));
        }
        any
    }
}

/// Thread-safe tuple space. Blocked callers are served in registration
/// order and sleep on a condition variable, never spinning.
#[derive(Default)]
pub struct TupleSpace {
    inner: Mutex<Inner>,
    wake: Condvar,
}

#[derive(Clone, Copy)]
enum Mode {
    Read,
    Get,
}

impl TupleSpace {
    pub fn new() -> Self {
        Self::default()
    }

    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }

    pub fn put(&self, key: &str, value: Value) -> Result<(), TsError> {
        let mut inner = self.lock();
        let deliveries = inner.store.put(key, value)?;
        if inner.deliver(deliveries) {
            self.wake.notify_all();
        }
        Ok(())
    }

    fn wait(
        &self,
        pattern: &Pattern,
        mode: Mode,
        timeout: Option<Duration>,
    ) -> Result<Option<Tuple>, TsError> {
        let mut inner = self.lock();
        let outcome = match mode {
            Mode::Read => inner.store.read_or_wait(pattern)?,
            Mode::Get => inner.store.get_or_wait(pattern)?,
        };
        let id = match outcome {
            WaitOutcome::Ready(t) => return Ok(Some(t)),
            WaitOutcome::Waiting(id) => id,
        };
        let deadline = timeout.map(|t| Instant::now() + t);
        loop {
            if let Some(r) = inner.delivered.remove(&id) {
                return r.map(Some);
            }
            match deadline {
                None => inner = self.wake.wait(inner).unwrap_or_else(|e| e.into_inner()),
                Some(d) => {
                    let now = Instant::now();
                    if now >= d {
                        // cancel under the same lock so a concurrent put cannot
                        // hand us a tuple we then drop
                        inner.store.cancel(id);
                        return Ok(None);
                    }
                    inner = self
                        .wake
                        .wait_timeout(inner, d - now)
                        .unwrap_or_else(|e| e.into_inner())
                        .0;
                }
            }
        }
    }

    pub fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.wait(pattern, Mode::Read, None)
            .map(|t| t.expect("untimed wait"))
    }

    pub fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.wait(pattern, Mode::Get, None)
            .map(|t| t.expect("untimed wait"))
    }

    /// Blocking get that gives up after `timeout`.
    pub fn get_timeout(
        &self,
        pattern: &Pattern,
        timeout: Duration,
    ) -> Result<Option<Tuple>, TsError> {
        self.wait(pattern, Mode::Get, Some(timeout))
    }

    pub fn read_timeout(
        &self,
        pattern: &Pattern,
        timeout: Duration,
    ) -> Result<Option<Tuple>, TsError> {
        self.wait(pattern, Mode::Read, Some(timeout))
    }

    pub fn try_get(&self, pattern: &Pattern) -> Option<Tuple> {
        self.lock().store.try_get(pattern)
    }

    pub fn try_read(&self, pattern: &Pattern) -> Option<Tuple> {
        self.lock().store.try_read(pattern)
    }

    pub fn count(&self, pattern: &Pattern) -> usize {
        self.lock().store.count(pattern)
    }

    pub fn clear(&self, pattern: &Pattern) -> usize {
        self.lock().store.clear(pattern)
    }

    pub fn waiting(&self) -> usize {
        self.lock().store.waiting()
    }

    /// Wakes every blocked caller with [`TsError::WaitAborted`].
    pub fn shutdown(&self) {
        let mut inner = self.lock();
        for id in inner.store.shutdown() {
            inner.delivered.insert(id, Err(TsError::WaitAborted));
        }
        self.wake.notify_all();
    }
}

impl TupleSpaceClient for TupleSpace {
    fn put(&self, key: &str, value: Value) -> Result<(), TsError> {
        TupleSpace::put(self, key, value)
    }

    fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        TupleSpace::read(self, pattern)
    }

    fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        TupleSpace::get(self, pattern)
    }

    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        Ok(TupleSpace::try_get(self, pattern))
    }

    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        Ok(TupleSpace::try_read(self, pattern))
    }

    fn count(&self, pattern: &Pattern) -> Result<usize, TsError> {
        Ok(TupleSpace::count(self, pattern))
    }

    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError> {
        Ok(TupleSpace::clear(self, pattern))
    }
}
