//! The surface actors are written against.
//!
//! Manager and handler logic is plain `async` code over [`Runtime`]. The
//! discrete-event engine implements the blocking calls as suspensions on
//! the virtual clock and cancels an actor by dropping its future at a
//! suspension point; the threaded runtime blocks real threads.

use crate::tuplespace::{Pattern, TsError, Tuple, Value};

/// Observations an actor reports to whoever hosts it. The host stamps them
/// with the time and turns them into metrics and the event log.
#[derive(Debug, Clone, PartialEq)]
pub enum Note {
    /// A pouch round was released.
    PouchIssued {
        stage: String,
        fresh: usize,
        reissued: usize,
    },
    TaskIssued {
        id: String,
        attempt: u32,
    },
    /// A harvest finished; `timeout` is the adapted value.
    Harvest {
        stage: String,
        fraction: f64,
        timeout: f64,
    },
    Loss {
        epoch: usize,
        sample: usize,
        loss: f64,
    },
    Committed {
        id: String,
    },
    Checkpoint {
        epoch: usize,
        sample: usize,
    },
    Recovered {
        epoch: usize,
        sample: usize,
        stage: String,
    },
    TaskDone {
        id: String,
    },
    /// Task tuple could not be parsed or executed.
    ProtocolError {
        detail: String,
    },
    /// Task re-put because it exceeded capacity or was not ready.
    Stored {
        id: String,
    },
    /// Finished work dropped because its sample was already committed or an
    /// input vanished.
    Abandoned {
        id: String,
    },
}

#[allow(async_fn_in_trait)]
pub trait Runtime {
    /// Current time in (virtual) seconds.
    fn now(&self) -> f64;

    /// Processing speed of the calling actor, in cost units per second.
    fn speed(&self) -> f64;

    async fn sleep(&self, secs: f64);

    async fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError>;

    async fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError>;

    fn put(&self, key: &str, value: Value) -> Result<(), TsError>;

    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError>;

    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError>;

    fn count(&self, pattern: &Pattern) -> Result<usize, TsError>;

    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError>;

    fn note(&self, note: Note);

    fn exists(&self, key: &str) -> Result<bool, TsError> {
        Ok(self.count(&Pattern::exact(key))? > 0)
    }
}
