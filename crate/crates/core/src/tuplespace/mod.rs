//! Tuple space: a multiset of `(key, value)` tuples with blocking,
//! synchronizing `read`/`get` and non-blocking probes.
//!
//! Three front-ends share one matching core ([`Store`]):
//!
//! - [`Store`] itself is single-threaded and never blocks. A request that
//!   cannot be satisfied registers a waiter and the caller is told which
//!   waiters a later `put` satisfied. The discrete-event simulator drives
//!   it directly.
//! - [`TupleSpace`] wraps the store for real threads; blocked callers park
//!   on a per-waiter slot.
//! - [`net`] exposes a [`TupleSpace`] over newline-delimited JSON on TCP,
//!   and [`RemoteTupleSpace`] is the matching client.
//!
//! Keys are colon-separated segments. Patterns are either an exact key or a
//! prefix followed by a single trailing `*`.

pub mod net;
mod shared;
mod store;
pub mod wire;

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

pub use net::{serve, RemoteTupleSpace, ServerHandle};
pub use shared::TupleSpace;
pub use store::{Delivery, Store, WaitOutcome, WaiterId};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TsError {
    #[error("malformed key {0:?}")]
    MalformedKey(String),
    #[error("malformed pattern {0:?}")]
    MalformedPattern(String),
    #[error("wait aborted: tuple space shut down")]
    WaitAborted,
    #[error("transport error: {0}")]
    Transport(String),
    #[error("protocol error: {0}")]
    Protocol(String),
}

/// Opaque tuple payload. The store never looks inside.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    /// A bare marker (done flags).
    Unit,
    Int(i64),
    Text(String),
    /// A numeric block; shared so reads are cheap, immutable once inserted.
    Block(Arc<[f32]>),
}

impl Value {
    pub fn block(values: Vec<f32>) -> Self {
        Value::Block(values.into())
    }

    pub fn as_text(&self) -> Option<&str> {
        match self {
            Value::Text(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_block(&self) -> Option<&[f32]> {
        match self {
            Value::Block(b) => Some(b),
            _ => None,
        }
    }
}

impl From<&str> for Value {
    fn from(s: &str) -> Self {
        Value::Text(s.to_string())
    }
}

impl From<String> for Value {
    fn from(s: String) -> Self {
        Value::Text(s)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<Vec<f32>> for Value {
    fn from(v: Vec<f32>) -> Self {
        Value::block(v)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tuple {
    pub key: String,
    pub value: Value,
}

impl Tuple {
    pub fn new(key: impl Into<String>, value: Value) -> Self {
        Self {
            key: key.into(),
            value,
        }
    }
}

fn is_wildcard(c: char) -> bool {
    matches!(c, '*' | '?')
}

/// Checks a key against the tuple invariants: non-empty, no whitespace, no
/// wildcard characters.
pub fn validate_key(key: &str) -> Result<(), TsError> {
    if key.is_empty() || key.chars().any(|c| c.is_whitespace() || is_wildcard(c)) {
        return Err(TsError::MalformedKey(key.to_string()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Pattern {
    Exact(String),
    /// Matches every key starting with the stored prefix (the `*` is not
    /// stored). An empty prefix matches everything.
    Prefix(String),
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Self, TsError> {
        match text.strip_suffix('*') {
            Some(prefix) => {
                if prefix.chars().any(|c| c.is_whitespace() || is_wildcard(c)) {
                    return Err(TsError::MalformedPattern(text.to_string()));
                }
                Ok(Pattern::Prefix(prefix.to_string()))
            }
            None => {
                validate_key(text).map_err(|_| TsError::MalformedPattern(text.to_string()))?;
                Ok(Pattern::Exact(text.to_string()))
            }
        }
    }

    pub fn exact(key: impl Into<String>) -> Self {
        Pattern::Exact(key.into())
    }

    pub fn prefix(prefix: impl Into<String>) -> Self {
        Pattern::Prefix(prefix.into())
    }

    pub fn all() -> Self {
        Pattern::Prefix(String::new())
    }

    pub fn matches(&self, key: &str) -> bool {
        match self {
            Pattern::Exact(k) => k == key,
            Pattern::Prefix(p) => key.starts_with(p.as_str()),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Pattern::Exact(k) => f.write_str(k),
            Pattern::Prefix(p) => write!(f, "{p}*"),
        }
    }
}

impl std::str::FromStr for Pattern {
    type Err = TsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Pattern::parse(s)
    }
}

/// The blocking client surface shared by the in-process and TCP front-ends.
pub trait TupleSpaceClient {
    fn put(&self, key: &str, value: Value) -> Result<(), TsError>;
    fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError>;
    fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError>;
    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError>;
    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError>;
    fn count(&self, pattern: &Pattern) -> Result<usize, TsError>;
    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError>;
}
