//! Task argument and result values.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

/// By-reference stand-in for a value held in a key-value store.
///
/// Only the locator travels on the wire; the payload stays in the store
/// until someone resolves the reference.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProxyRef {
    pub key: String,
    /// Broker address, or `"in-process"`.
    pub store: String,
    /// Size of the stored (serialized) payload.
    pub size_bytes: u64,
}

/// A task input or result.
#[derive(Debug, Clone, PartialEq)]
pub enum Value {
    Null,
    Bool(bool),
    Int(i64),
    Float(f64),
    Str(String),
    Bytes(Vec<u8>),
    List(Vec<Value>),
    Map(BTreeMap<String, Value>),
    Proxy(ProxyRef),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Float(v) => Some(*v),
            Value::Int(v) => Some(*v as f64),
            _ => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            Value::Str(s) => Some(s),
            _ => None,
        }
    }

    pub fn as_bytes(&self) -> Option<&[u8]> {
        match self {
            Value::Bytes(b) => Some(b),
            _ => None,
        }
    }

    pub fn as_list(&self) -> Option<&[Value]> {
        match self {
            Value::List(l) => Some(l),
            _ => None,
        }
    }

    pub fn as_map(&self) -> Option<&BTreeMap<String, Value>> {
        match self {
            Value::Map(m) => Some(m),
            _ => None,
        }
    }

    pub fn as_proxy(&self) -> Option<&ProxyRef> {
        match self {
            Value::Proxy(p) => Some(p),
            _ => None,
        }
    }

    /// True if this value or anything nested in it is a proxy.
    pub fn contains_proxy(&self) -> bool {
        match self {
            Value::Proxy(_) => true,
            Value::List(l) => l.iter().any(Value::contains_proxy),
            Value::Map(m) => m.values().any(Value::contains_proxy),
            _ => false,
        }
    }

    /// Map lookup shorthand; `None` for non-maps.
    pub fn get(&self, key: &str) -> Option<&Value> {
        self.as_map().and_then(|m| m.get(key))
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Float(v)
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<bool> for Value {
    fn from(v: bool) -> Self {
        Value::Bool(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Str(v.into())
    }
}

impl From<String> for Value {
    fn from(v: String) -> Self {
        Value::Str(v)
    }
}

impl From<Vec<u8>> for Value {
    fn from(v: Vec<u8>) -> Self {
        Value::Bytes(v)
    }
}

impl From<Vec<f64>> for Value {
    fn from(v: Vec<f64>) -> Self {
        Value::List(v.into_iter().map(Value::Float).collect())
    }
}

impl From<ProxyRef> for Value {
    fn from(v: ProxyRef) -> Self {
        Value::Proxy(v)
    }
}
