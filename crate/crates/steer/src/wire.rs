//! JSON wire format for task records and stored values.
//!
//! One UTF-8 JSON object per message, with keys in sorted order so an
//! unchanged record always re-encodes to the same bytes:
//!
//! ```text
//! {"failure": null | {"error_kind", "message"},
//!  "inputs": {"args": [...], "kwargs": {...}},
//!  "method", "resources_hint": null | {"nodes", "pool"},
//!  "result": null | value, "ser_metrics": {"<name>_ms": float | null},
//!  "success": null | bool, "task_id", "timestamps": {"<event>": ISO-8601 | null},
//!  "topic"}
//! ```
//!
//! Byte strings are written as `{"__bytes__": "<base64>"}` and proxies as
//! `{"__proxy__": {"key", "size_bytes", "store"}}`; user maps may not use
//! either key.

use std::collections::BTreeMap;
use std::fmt;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use chrono::{DateTime, SecondsFormat, Utc};
use serde_json::{Map, Number, Value as Json};

use steer_core::{
    Event, Failure, ProxyRef, ResourcesHint, SerializationMetrics, Stamp, TaskId, TaskRecord,
    Timestamps, Value,
};

pub const BYTES_KEY: &str = "__bytes__";
pub const PROXY_KEY: &str = "__proxy__";

/// Where in a record an unencodable value sits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Location {
    Arg(usize),
    Kwarg(String),
    Result,
    Stored,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Arg(i) => write!(f, "argument {i}"),
            Location::Kwarg(k) => write!(f, "keyword argument `{k}`"),
            Location::Result => f.write_str("result"),
            Location::Stored => f.write_str("stored value"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EncodeError {
    #[error("{location}: non-finite float cannot be encoded")]
    NonFinite { location: Location },
    #[error("{location}: map key `{key}` is reserved")]
    ReservedKey { location: Location, key: String },
}

impl EncodeError {
    pub fn location(&self) -> Option<&Location> {
        match self {
            EncodeError::NonFinite { location } | EncodeError::ReservedKey { location, .. } => {
                Some(location)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DecodeError {
    #[error("malformed JSON: {0}")]
    Json(String),
    #[error("missing or invalid field `{0}`")]
    Field(&'static str),
    #[error("invalid base64 payload")]
    Base64,
    #[error("invalid timestamp for `{0}`")]
    Timestamp(String),
    #[error("timestamps out of order")]
    Order,
    #[error("unknown stored-value tag {0:#04x}")]
    StoreTag(u8),
}

fn value_to_json(v: &Value, loc: &Location) -> Result<Json, EncodeError> {
    Ok(match v {
        Value::Null => Json::Null,
        Value::Bool(b) => Json::Bool(*b),
        Value::Int(i) => Json::Number((*i).into()),
        Value::Float(f) => Json::Number(Number::from_f64(*f).ok_or_else(|| {
            EncodeError::NonFinite {
                location: loc.clone(),
            }
        })?),
        Value::Str(s) => Json::String(s.clone()),
        Value::Bytes(b) => {
            let mut m = Map::new();
            m.insert(BYTES_KEY.into(), Json::String(B64.encode(b)));
            Json::Object(m)
        }
        Value::List(items) => Json::Array(
            items
                .iter()
                .map(|x| value_to_json(x, loc))
                .collect::<Result<_, _>>()?,
        ),
        Value::Map(m) => {
            let mut out = Map::new();
            for (k, x) in m {
                if k == BYTES_KEY || k == PROXY_KEY {
                    return Err(EncodeError::ReservedKey {
                        location: loc.clone(),
                        key: k.clone(),
                    });
                }
                out.insert(k.clone(), value_to_json(x, loc)?);
            }
            Json::Object(out)
        }
        Value::Proxy(p) => {
            let mut inner = Map::new();
            inner.insert("key".into(), Json::String(p.key.clone()));
            inner.insert("store".into(), Json::String(p.store.clone()));
            inner.insert("size_bytes".into(), Json::Number(p.size_bytes.into()));
            let mut m = Map::new();
            m.insert(PROXY_KEY.into(), Json::Object(inner));
            Json::Object(m)
        }
    })
}

fn json_to_value(j: Json) -> Result<Value, DecodeError> {
    Ok(match j {
        Json::Null => Value::Null,
        Json::Bool(b) => Value::Bool(b),
        Json::Number(n) => match n.as_i64() {
            Some(i) if !n.is_f64() => Value::Int(i),
            _ => Value::Float(n.as_f64().ok_or(DecodeError::Field("number"))?),
        },
        Json::String(s) => Value::Str(s),
        Json::Array(items) => Value::List(
            items
                .into_iter()
                .map(json_to_value)
                .collect::<Result<_, _>>()?,
        ),
        Json::Object(m) => {
            if m.len() == 1 {
                if let Some(Json::String(b)) = m.get(BYTES_KEY) {
                    return B64.decode(b).map(Value::Bytes).map_err(|_| DecodeError::Base64);
                }
                if let Some(Json::Object(p)) = m.get(PROXY_KEY) {
                    return Ok(Value::Proxy(ProxyRef {
                        key: str_field(&p, "key")?,
                        store: str_field(&p, "store")?,
                        size_bytes: p
                            .get("size_bytes")
                            .and_then(Json::as_u64)
                            .ok_or(DecodeError::Field("size_bytes"))?,
                    }));
                }
            }
            Value::Map(
                m.into_iter()
                    .map(|(k, v)| Ok((k, json_to_value(v)?)))
                    .collect::<Result<BTreeMap<_, _>, DecodeError>>()?,
            )
        }
    })
}

fn str_field(m: &Map<String, Json>, key: &'static str) -> Result<String, DecodeError> {
    m.get(key)
        .and_then(Json::as_str)
        .map(str::to_owned)
        .ok_or(DecodeError::Field(key))
}

/// Serializes the `inputs` object on its own, so callers can time it and
/// stamp `request_sent` before the envelope is written.
pub fn encode_inputs(args: &[Value], kwargs: &BTreeMap<String, Value>) -> Result<Json, EncodeError> {
    let args = args
        .iter()
        .enumerate()
        .map(|(i, a)| value_to_json(a, &Location::Arg(i)))
        .collect::<Result<Vec<_>, _>>()?;
    let mut kw = Map::new();
    for (k, v) in kwargs {
        kw.insert(k.clone(), value_to_json(v, &Location::Kwarg(k.clone()))?);
    }
    let mut m = Map::new();
    m.insert("args".into(), Json::Array(args));
    m.insert("kwargs".into(), Json::Object(kw));
    Ok(Json::Object(m))
}

pub fn encode_result(result: Option<&Value>) -> Result<Json, EncodeError> {
    result.map_or(Ok(Json::Null), |v| value_to_json(v, &Location::Result))
}

fn stamp_to_json(s: Option<Stamp>) -> Json {
    match s {
        None => Json::Null,
        Some(s) => Json::String(
            DateTime::<Utc>::from_timestamp_nanos(s.0).to_rfc3339_opts(SecondsFormat::Nanos, true),
        ),
    }
}

fn opt_f64(v: Option<f64>) -> Json {
    v.and_then(Number::from_f64).map_or(Json::Null, Json::Number)
}

/// Writes a record whose inputs and result were serialized beforehand.
pub fn encode_parts(record: &TaskRecord, inputs: Json, result: Json) -> Vec<u8> {
    let mut m = Map::new();
    m.insert("task_id".into(), Json::String(record.task_id.0.clone()));
    m.insert("topic".into(), Json::String(record.topic.clone()));
    m.insert("method".into(), Json::String(record.method.clone()));
    m.insert("inputs".into(), inputs);
    m.insert("result".into(), result);
    m.insert(
        "success".into(),
        record.success.map_or(Json::Null, Json::Bool),
    );
    m.insert(
        "failure".into(),
        record.failure.as_ref().map_or(Json::Null, |f| {
            let mut fm = Map::new();
            fm.insert("error_kind".into(), Json::String(f.error_kind.clone()));
            fm.insert("message".into(), Json::String(f.message.clone()));
            Json::Object(fm)
        }),
    );
    let mut ts = Map::new();
    for e in Event::ALL {
        ts.insert(e.name().into(), stamp_to_json(record.timestamps.get(e)));
    }
    m.insert("timestamps".into(), Json::Object(ts));
    let mut sm = Map::new();
    for name in SerializationMetrics::FIELDS {
        sm.insert(name.into(), opt_f64(record.ser_metrics.get(name)));
    }
    m.insert("ser_metrics".into(), Json::Object(sm));
    m.insert(
        "resources_hint".into(),
        record.resources_hint.as_ref().map_or(Json::Null, |h| {
            let mut hm = Map::new();
            hm.insert("pool".into(), Json::String(h.pool.clone()));
            hm.insert("nodes".into(), Json::Number(h.nodes.into()));
            Json::Object(hm)
        }),
    );
    serde_json::to_vec(&Json::Object(m)).expect("JSON values always serialize")
}

pub fn encode(record: &TaskRecord) -> Result<Vec<u8>, EncodeError> {
    let inputs = encode_inputs(&record.args, &record.kwargs)?;
    let result = encode_result(record.result.as_ref())?;
    Ok(encode_parts(record, inputs, result))
}

fn parse_stamp(name: &str, j: &Json) -> Result<Option<Stamp>, DecodeError> {
    match j {
        Json::Null => Ok(None),
        Json::String(s) => DateTime::parse_from_rfc3339(s)
            .ok()
            .and_then(|d| d.timestamp_nanos_opt())
            .map(|n| Some(Stamp(n)))
            .ok_or_else(|| DecodeError::Timestamp(name.into())),
        _ => Err(DecodeError::Timestamp(name.into())),
    }
}

pub fn decode(bytes: &[u8]) -> Result<TaskRecord, DecodeError> {
    let json: Json = serde_json::from_slice(bytes).map_err(|e| DecodeError::Json(e.to_string()))?;
    let Json::Object(mut m) = json else {
        return Err(DecodeError::Field("<root>"));
    };
    let task_id = str_field(&m, "task_id")?;
    let topic = str_field(&m, "topic")?;
    let method = str_field(&m, "method")?;

    let Some(Json::Object(mut inputs)) = m.remove("inputs") else {
        return Err(DecodeError::Field("inputs"));
    };
    let Some(Json::Array(args)) = inputs.remove("args") else {
        return Err(DecodeError::Field("args"));
    };
    let Some(Json::Object(kwargs)) = inputs.remove("kwargs") else {
        return Err(DecodeError::Field("kwargs"));
    };
    let args = args
        .into_iter()
        .map(json_to_value)
        .collect::<Result<Vec<_>, _>>()?;
    let kwargs = kwargs
        .into_iter()
        .map(|(k, v)| Ok((k, json_to_value(v)?)))
        .collect::<Result<BTreeMap<_, _>, DecodeError>>()?;

    let mut record = TaskRecord::new(TaskId(task_id), topic, method, args).with_kwargs(kwargs);
    record.result = match m.remove("result") {
        None | Some(Json::Null) => None,
        Some(v) => Some(json_to_value(v)?),
    };
    record.success = match m.get("success") {
        None | Some(Json::Null) => None,
        Some(Json::Bool(b)) => Some(*b),
        _ => return Err(DecodeError::Field("success")),
    };
    record.failure = match m.get("failure") {
        None | Some(Json::Null) => None,
        Some(Json::Object(f)) => Some(Failure {
            error_kind: str_field(f, "error_kind")?,
            message: str_field(f, "message")?,
        }),
        _ => return Err(DecodeError::Field("failure")),
    };
    if let Some(Json::Object(ts)) = m.get("timestamps") {
        let mut stamps = Timestamps::default();
        for e in Event::ALL {
            if let Some(s) = ts.get(e.name()).map(|j| parse_stamp(e.name(), j)).transpose()?.flatten() {
                stamps.mark_at(e, s).map_err(|_| DecodeError::Order)?;
            }
        }
        record.timestamps = stamps;
    }
    if let Some(Json::Object(sm)) = m.get("ser_metrics") {
        for name in SerializationMetrics::FIELDS {
            if let Some(v) = sm.get(name).and_then(Json::as_f64) {
                record.ser_metrics.set(name, v);
            }
        }
    }
    record.resources_hint = match m.get("resources_hint") {
        None | Some(Json::Null) => None,
        Some(Json::Object(h)) => Some(ResourcesHint {
            pool: str_field(h, "pool")?,
            nodes: h
                .get("nodes")
                .and_then(Json::as_u64)
                .ok_or(DecodeError::Field("nodes"))? as u32,
        }),
        _ => return Err(DecodeError::Field("resources_hint")),
    };
    Ok(record)
}

/// Best-effort task id recovery from an undecodable message.
pub fn peek_task_id(bytes: &[u8]) -> Option<String> {
    let json: Json = serde_json::from_slice(bytes).ok()?;
    json.get("task_id")?.as_str().map(str::to_owned)
}

const STORE_RAW: u8 = 0x00;
const STORE_JSON: u8 = 0x01;

/// Serialized form of a value held in the key-value store: byte strings
/// are stored raw behind a one-byte tag, everything else as JSON.
pub fn to_store_bytes(v: &Value) -> Result<Vec<u8>, EncodeError> {
    match v {
        Value::Bytes(b) => {
            let mut out = Vec::with_capacity(b.len() + 1);
            out.push(STORE_RAW);
            out.extend_from_slice(b);
            Ok(out)
        }
        other => {
            let j = value_to_json(other, &Location::Stored)?;
            let mut out = vec![STORE_JSON];
            serde_json::to_writer(&mut out, &j).expect("JSON values always serialize");
            Ok(out)
        }
    }
}

pub fn from_store_bytes(bytes: &[u8]) -> Result<Value, DecodeError> {
    match bytes.split_first() {
        Some((&STORE_RAW, rest)) => Ok(Value::Bytes(rest.to_vec())),
        Some((&STORE_JSON, rest)) => {
            let j: Json =
                serde_json::from_slice(rest).map_err(|e| DecodeError::Json(e.to_string()))?;
            json_to_value(j)
        }
        Some((&tag, _)) => Err(DecodeError::StoreTag(tag)),
        None => Err(DecodeError::Field("<empty>")),
    }
}
