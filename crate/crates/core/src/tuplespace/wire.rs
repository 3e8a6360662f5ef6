//! Newline-delimited JSON frames for the TCP front-end.
//!
//! ```text
//! -> {"op":"put","key":"a","value":[1.0,2.5]}
//! <- {"status":"ok"}
//! -> {"op":"get","pattern":"a*"}
//! <- {"status":"ok","key":"a","value":[1.0,2.5]}
//! ```
//!
//! Payloads map to JSON as: marker ↔ `null`, integer ↔ integer, text ↔
//! string, numeric block ↔ array of decimal floats (decoded to `f32`).
//! Besides the six core ops the service accepts `tryread`, a non-blocking
//! read probe.

use serde::{Deserialize, Serialize};
use serde_json::Value as Json;

use super::{TsError, Tuple, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Op {
    Put,
    Read,
    Get,
    Tryget,
    Tryread,
    Count,
    Clear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Request {
    pub op: Op,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pattern: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Json>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Err,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<Json>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Response {
    pub fn ok() -> Self {
        Self {
            status: Status::Ok,
            key: None,
            value: None,
            count: None,
            error: None,
        }
    }

    pub fn tuple(t: Tuple) -> Self {
        Self {
            key: Some(t.key),
            value: Some(encode_value(&t.value)),
            ..Self::ok()
        }
    }

    pub fn count(n: usize) -> Self {
        Self {
            count: Some(n),
            ..Self::ok()
        }
    }

    pub fn err(e: &TsError) -> Self {
        Self {
            status: Status::Err,
            error: Some(encode_error(e)),
            ..Self::ok()
        }
    }

    /// The tuple carried by a successful read/get response, if any.
    pub fn into_tuple(self) -> Result<Option<Tuple>, TsError> {
        match self.key {
            None => Ok(None),
            Some(key) => {
                let value = decode_value(self.value.as_ref().unwrap_or(&Json::Null))?;
                Ok(Some(Tuple { key, value }))
            }
        }
    }
}

pub fn encode_value(v: &Value) -> Json {
    match v {
        Value::Unit => Json::Null,
        Value::Int(i) => Json::from(*i),
        Value::Text(s) => Json::String(s.clone()),
        Value::Block(b) => Json::Array(b.iter().map(|&x| Json::from(f64::from(x))).collect()),
    }
}

pub fn decode_value(j: &Json) -> Result<Value, TsError> {
    match j {
        Json::Null => Ok(Value::Unit),
        Json::String(s) => Ok(Value::Text(s.clone())),
        Json::Number(n) => n
            .as_i64()
            .map(Value::Int)
            .ok_or_else(|| TsError::Protocol(format!("non-integer scalar {n}"))),
        Json::Array(items) => items
            .iter()
            .map(|x| {
                x.as_f64()
                    .map(|f| f as f32)
                    .ok_or_else(|| TsError::Protocol(format!("non-numeric block entry {x}")))
            })
            .collect::<Result<Vec<f32>, _>>()
            .map(Value::block),
        Json::Bool(_) | Json::Object(_) => Err(TsError::Protocol(format!("unsupported value {j}"))),
    }
}

// Error strings carry a stable prefix so the client can rebuild the variant.
fn encode_error(e: &TsError) -> String {
    match e {
        TsError::MalformedKey(k) => format!("malformed-key:{k}"),
        TsError::MalformedPattern(p) => format!("malformed-pattern:{p}"),
        TsError::WaitAborted => "wait-aborted".to_string(),
        TsError::Transport(m) => format!("transport:{m}"),
        TsError::Protocol(m) => format!("protocol:{m}"),
    }
}

pub fn decode_error(s: &str) -> TsError {
    let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
    match kind {
        "malformed-key" => TsError::MalformedKey(rest.to_string()),
        "malformed-pattern" => TsError::MalformedPattern(rest.to_string()),
        "wait-aborted" => TsError::WaitAborted,
        "transport" => TsError::Transport(rest.to_string()),
        _ => TsError::Protocol(rest.to_string()),
    }
}
