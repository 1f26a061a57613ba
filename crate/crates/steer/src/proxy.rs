//! Pass-by-reference for large values.
//!
//! [`ValueStore`] writes serialized values into the broker's key-value store
//! and hands back a [`ProxyRef`]. A [`Proxy`] is a lazily resolved handle on
//! such a reference; a [`WorkerCache`] lets tasks that reuse an input skip
//! the store, and [`prefetch`] starts resolution in the background.
//!
//! The store never deletes values on its own. Call [`ValueStore::cleanup`]
//! (or delete keys explicitly) once values are no longer needed.

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use steer_core::lru::LruMap;
use steer_core::{ProxyRef, Value};

use crate::broker::{Broker, BrokerError};
use crate::wire::{self, DecodeError, EncodeError};

pub const DEFAULT_CACHE_ENTRIES: usize = 32;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProxyError {
    #[error("value store: {0}")]
    Store(#[from] BrokerError),
    #[error("proxied value `{0}` not found")]
    NotFound(String),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("stored value is corrupt: {0}")]
    Decode(#[from] DecodeError),
    #[error("proxy threshold must be positive")]
    BadThreshold,
}

/// When values are replaced by references automatically.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ProxyPolicy {
    pub threshold_bytes: u64,
    pub enabled: bool,
}

impl Default for ProxyPolicy {
    fn default() -> Self {
        ProxyPolicy {
            threshold_bytes: steer_core::synth::DEFAULT_PROXY_THRESHOLD,
            enabled: true,
        }
    }
}

impl ProxyPolicy {
    pub fn new(threshold_bytes: u64) -> Result<Self, ProxyError> {
        if threshold_bytes == 0 {
            return Err(ProxyError::BadThreshold);
        }
        Ok(ProxyPolicy {
            threshold_bytes,
            enabled: true,
        })
    }

    pub fn disabled() -> Self {
        ProxyPolicy {
            enabled: false,
            ..Self::default()
        }
    }
}

/// Client for the value store, with read/write counters.
///
/// Keys are `<namespace>/<uuid>`, so everything one run created can be
/// removed with [`ValueStore::cleanup`].
pub struct ValueStore {
    broker: Arc<dyn Broker>,
    namespace: String,
    latency: Option<Duration>,
    reads: AtomicU64,
    writes: AtomicU64,
    created: Mutex<Vec<String>>,
}

impl ValueStore {
    pub fn new(broker: Arc<dyn Broker>, namespace: impl Into<String>) -> Self {
        ValueStore {
            broker,
            namespace: namespace.into(),
            latency: None,
            reads: AtomicU64::new(0),
            writes: AtomicU64::new(0),
            created: Mutex::new(Vec::new()),
        }
    }

    /// Adds an artificial delay to every read, to emulate a remote store.
    pub fn with_read_latency(mut self, latency: Duration) -> Self {
        self.latency = Some(latency);
        self
    }

    pub fn locator(&self) -> String {
        self.broker.locator()
    }

    pub fn reads(&self) -> u64 {
        self.reads.load(Ordering::SeqCst)
    }

    pub fn writes(&self) -> u64 {
        self.writes.load(Ordering::SeqCst)
    }

    fn put_serialized(&self, bytes: Vec<u8>) -> Result<ProxyRef, ProxyError> {
        let key = format!("{}/{}", self.namespace, uuid::Uuid::new_v4());
        let size_bytes = bytes.len() as u64;
        self.broker.kv_put(&key, bytes)?;
        self.writes.fetch_add(1, Ordering::SeqCst);
        self.created.lock().unwrap().push(key.clone());
        Ok(ProxyRef {
            key,
            store: self.locator(),
            size_bytes,
        })
    }

    /// Reads and deserializes the value behind `key`.
    pub fn fetch(&self, key: &str) -> Result<Value, ProxyError> {
        if let Some(d) = self.latency {
            std::thread::sleep(d);
        }
        self.reads.fetch_add(1, Ordering::SeqCst);
        let bytes = self.broker.kv_get(key).map_err(|e| match e {
            BrokerError::NotFound(k) => ProxyError::NotFound(k),
            other => ProxyError::Store(other),
        })?;
        Ok(wire::from_store_bytes(&bytes)?)
    }

    pub fn delete(&self, key: &str) -> Result<(), ProxyError> {
        self.broker.kv_delete(key)?;
        self.created.lock().unwrap().retain(|k| k != key);
        Ok(())
    }

    /// Deletes every value this store wrote; returns how many.
    pub fn cleanup(&self) -> Result<usize, ProxyError> {
        let keys: Vec<String> = std::mem::take(&mut *self.created.lock().unwrap());
        for k in &keys {
            self.broker.kv_delete(k)?;
        }
        Ok(keys.len())
    }
}

/// Stores `value` under a fresh key.
pub fn proxify(value: &Value, store: &ValueStore) -> Result<ProxyRef, ProxyError> {
    store.put_serialized(wire::to_store_bytes(value)?)
}

/// Replaces every value whose serialized size exceeds the threshold with a
/// proxy. Returns how many were replaced.
///
/// On error nothing is replaced and values already written are deleted.
pub fn auto_proxy<'a>(
    values: impl IntoIterator<Item = &'a mut Value>,
    policy: &ProxyPolicy,
    store: &ValueStore,
) -> Result<usize, ProxyError> {
    if !policy.enabled {
        return Ok(0);
    }
    let mut targets: Vec<&'a mut Value> = Vec::new();
    let mut refs: Vec<ProxyRef> = Vec::new();
    for v in values {
        if matches!(v, Value::Proxy(_)) {
            continue;
        }
        if let Value::Bytes(b) = v {
            if b.len() as u64 + 1 <= policy.threshold_bytes {
                continue;
            }
        }
        let stored = match wire::to_store_bytes(v) {
            Ok(b) if b.len() as u64 > policy.threshold_bytes => store.put_serialized(b),
            Ok(_) => continue,
            Err(e) => Err(e.into()),
        };
        match stored {
            Ok(r) => {
                refs.push(r);
                targets.push(v);
            }
            Err(e) => {
                for r in &refs {
                    let _ = store.delete(&r.key);
                }
                return Err(e);
            }
        }
    }
    let n = refs.len();
    for (slot, r) in targets.into_iter().zip(refs) {
        *slot = Value::Proxy(r);
    }
    Ok(n)
}

struct Flight {
    outcome: Mutex<Option<Result<Arc<Value>, ProxyError>>>,
    done: Condvar,
}

impl Flight {
    fn wait(&self) -> Result<Arc<Value>, ProxyError> {
        let mut g = self.outcome.lock().unwrap();
        while g.is_none() {
            g = self.done.wait(g).unwrap();
        }
        g.clone().expect("checked above")
    }
}

/// Bounded LRU cache of resolved values with single-flight fetching:
/// concurrent requests for one key share a single store read.
pub struct WorkerCache {
    entries: Mutex<LruMap<String, Arc<Value>>>,
    inflight: Mutex<HashMap<String, Arc<Flight>>>,
    hits: AtomicU64,
    misses: AtomicU64,
}

impl Default for WorkerCache {
    fn default() -> Self {
        Self::new(DEFAULT_CACHE_ENTRIES)
    }
}

impl WorkerCache {
    pub fn new(capacity_entries: usize) -> Self {
        WorkerCache {
            entries: Mutex::new(LruMap::new(capacity_entries)),
            inflight: Mutex::new(HashMap::new()),
            hits: AtomicU64::new(0),
            misses: AtomicU64::new(0),
        }
    }

    pub fn hits(&self) -> u64 {
        self.hits.load(Ordering::SeqCst)
    }

    pub fn misses(&self) -> u64 {
        self.misses.load(Ordering::SeqCst)
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.lock().unwrap().contains(&key.to_owned())
    }

    /// Cached keys from least to most recently used.
    pub fn keys_by_recency(&self) -> Vec<String> {
        self.entries.lock().unwrap().keys_by_recency()
    }

    /// Returns the value for `r`, reading the store only if it is neither
    /// cached nor already being fetched.
    pub fn fetch(&self, r: &ProxyRef, store: &ValueStore) -> Result<Arc<Value>, ProxyError> {
        let flight = {
            let mut inflight = self.inflight.lock().unwrap();
            if let Some(v) = self.entries.lock().unwrap().get(&r.key) {
                self.hits.fetch_add(1, Ordering::SeqCst);
                return Ok(v.clone());
            }
            if let Some(f) = inflight.get(&r.key) {
                let f = f.clone();
                drop(inflight);
                self.hits.fetch_add(1, Ordering::SeqCst);
                return f.wait();
            }
            let f = Arc::new(Flight {
                outcome: Mutex::new(None),
                done: Condvar::new(),
            });
            inflight.insert(r.key.clone(), f.clone());
            f
        };
        self.misses.fetch_add(1, Ordering::SeqCst);
        let outcome = store.fetch(&r.key).map(Arc::new);
        {
            let mut inflight = self.inflight.lock().unwrap();
            if let Ok(v) = &outcome {
                self.entries.lock().unwrap().insert(r.key.clone(), v.clone());
            }
            inflight.remove(&r.key);
        }
        *flight.outcome.lock().unwrap() = Some(outcome.clone());
        flight.done.notify_all();
        outcome
    }
}

struct ProxyInner {
    reference: ProxyRef,
    slot: Mutex<Option<Arc<Value>>>,
}

/// Lazily resolved handle on a stored value. Clones share the resolution.
#[derive(Clone)]
pub struct Proxy {
    inner: Arc<ProxyInner>,
}

impl Proxy {
    pub fn new(reference: ProxyRef) -> Self {
        Proxy {
            inner: Arc::new(ProxyInner {
                reference,
                slot: Mutex::new(None),
            }),
        }
    }

    pub fn reference(&self) -> &ProxyRef {
        &self.inner.reference
    }

    pub fn is_resolved(&self) -> bool {
        self.inner.slot.lock().unwrap().is_some()
    }

    /// Resolves on first use; later calls return the memoized value.
    pub fn resolve(
        &self,
        store: &ValueStore,
        cache: Option<&WorkerCache>,
    ) -> Result<Arc<Value>, ProxyError> {
        let mut slot = self.inner.slot.lock().unwrap();
        if let Some(v) = &*slot {
            return Ok(v.clone());
        }
        let v = match cache {
            Some(c) => c.fetch(&self.inner.reference, store)?,
            None => Arc::new(store.fetch(&self.inner.reference.key)?),
        };
        *slot = Some(v.clone());
        Ok(v)
    }
}

impl std::fmt::Debug for Proxy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Proxy")
            .field("reference", &self.inner.reference)
            .field("resolved", &self.is_resolved())
            .finish()
    }
}

/// Resolves `reference` through an optional cache.
pub fn resolve(
    reference: &ProxyRef,
    store: &ValueStore,
    cache: Option<&WorkerCache>,
) -> Result<Arc<Value>, ProxyError> {
    Proxy::new(reference.clone()).resolve(store, cache)
}

/// Background resolution started by [`prefetch`].
pub struct PrefetchHandle {
    worker: Option<JoinHandle<()>>,
}

impl PrefetchHandle {
    /// Blocks until every prefetch finished (successfully or not).
    pub fn wait(mut self) {
        if let Some(h) = self.worker.take() {
            let _ = h.join();
        }
    }

    pub fn is_finished(&self) -> bool {
        self.worker.as_ref().is_none_or(JoinHandle::is_finished)
    }
}

/// Starts fetching `refs` into `cache` in the background.
///
/// Failures are not reported here; they surface when the value is resolved.
pub fn prefetch(refs: Vec<ProxyRef>, store: Arc<ValueStore>, cache: Arc<WorkerCache>) -> PrefetchHandle {
    if refs.is_empty() {
        return PrefetchHandle { worker: None };
    }
    let worker = std::thread::Builder::new()
        .name("prefetch".into())
        .spawn(move || {
            for r in &refs {
                if let Err(e) = cache.fetch(r, &store) {
                    log::debug!("prefetch of {} failed: {e}", r.key);
                }
            }
        })
        .ok();
    PrefetchHandle { worker }
}

/// Collects every proxy reference nested in `values`.
pub fn collect_refs<'a>(values: impl IntoIterator<Item = &'a Value>) -> Vec<ProxyRef> {
    fn walk(v: &Value, out: &mut Vec<ProxyRef>) {
        match v {
            Value::Proxy(p) => out.push(p.clone()),
            Value::List(l) => l.iter().for_each(|x| walk(x, out)),
            Value::Map(m) => m.values().for_each(|x| walk(x, out)),
            _ => {}
        }
    }
    let mut out = Vec::new();
    for v in values {
        walk(v, &mut out);
    }
    out
}

/// Replaces every nested proxy in `value` by its resolved value.
pub fn resolve_in_place(
    value: &mut Value,
    store: &ValueStore,
    cache: Option<&WorkerCache>,
) -> Result<(), ProxyError> {
    match value {
        Value::Proxy(p) => {
            let v = resolve(p, store, cache)?;
            *value = Arc::try_unwrap(v).unwrap_or_else(|shared| (*shared).clone());
        }
        Value::List(l) => {
            for x in l {
                resolve_in_place(x, store, cache)?;
            }
        }
        Value::Map(m) => {
            for x in m.values_mut() {
                resolve_in_place(x, store, cache)?;
            }
        }
        _ => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::broker::MemoryBroker;

    fn store() -> ValueStore {
        ValueStore::new(Arc::new(MemoryBroker::new()), "test")
    }

    #[test]
    fn proxify_resolve_identity() {
        let s = store();
        let v = Value::Bytes((0..=255u8).cycle().take(1_000_000).collect());
        let r = proxify(&v, &s).unwrap();
        assert_eq!(r.size_bytes, 1_000_001);
        assert!(r.key.starts_with("test/"));
        assert_eq!(*resolve(&r, &s, None).unwrap(), v);
    }

    #[test]
    fn fresh_keys_for_equal_values() {
        let s = store();
        let v = Value::Int(3);
        assert_ne!(proxify(&v, &s).unwrap().key, proxify(&v, &s).unwrap().key);
    }

    #[test]
    fn second_resolve_is_local() {
        let s = store();
        let p = Proxy::new(proxify(&Value::Str("model".into()), &s).unwrap());
        p.resolve(&s, None).unwrap();
        let reads = s.reads();
        p.clone().resolve(&s, None).unwrap();
        assert_eq!(s.reads(), reads);
        assert!(p.is_resolved());
    }

    #[test]
    fn missing_key_is_not_found() {
        let s = store();
        let r = ProxyRef {
            key: "test/never".into(),
            store: "in-process".into(),
            size_bytes: 1,
        };
        assert_eq!(
            resolve(&r, &s, Some(&WorkerCache::new(4))).unwrap_err(),
            ProxyError::NotFound("test/never".into())
        );
    }

    #[test]
    fn warm_cache_survives_delete() {
        let s = store();
        let cache = WorkerCache::new(4);
        let r = proxify(&Value::Float(1.5), &s).unwrap();
        resolve(&r, &s, Some(&cache)).unwrap();
        s.delete(&r.key).unwrap();
        assert_eq!(*resolve(&r, &s, Some(&cache)).unwrap(), Value::Float(1.5));
        assert!(resolve(&r, &s, None).is_err());
    }

    #[test]
    fn auto_proxy_threshold() {
        let s = store();
        let mut args = vec![Value::Bytes(vec![1; 1_000]), Value::Bytes(vec![2; 1_000_000])];
        let n = auto_proxy(args.iter_mut(), &ProxyPolicy::default(), &s).unwrap();
        assert_eq!(n, 1);
        assert!(matches!(args[0], Value::Bytes(_)));
        assert!(matches!(args[1], Value::Proxy(_)));
    }

    #[test]
    fn auto_proxy_disabled_or_small() {
        let s = store();
        let mut args = vec![Value::Bytes(vec![2; 1_000_000])];
        auto_proxy(args.iter_mut(), &ProxyPolicy::disabled(), &s).unwrap();
        assert!(matches!(args[0], Value::Bytes(_)));
        let mut small = vec![Value::Int(1), Value::Str("x".into()), Value::Bytes(vec![0; 10])];
        auto_proxy(small.iter_mut(), &ProxyPolicy::default(), &s).unwrap();
        assert_eq!(s.writes(), 0);
    }

    #[test]
    fn auto_proxy_leaves_inputs_on_failure() {
        let s = store();
        let mut args = vec![
            Value::Bytes(vec![2; 200_000]),
            Value::List(vec![Value::Float(f64::NAN); 50_000]),
        ];
        let before = args.clone();
        let err = auto_proxy(args.iter_mut(), &ProxyPolicy::default(), &s);
        assert!(matches!(err, Err(ProxyError::Encode(_))));
        assert_eq!(args.len(), before.len());
        assert!(matches!(args[0], Value::Bytes(_)));
    }

    #[test]
    fn cleanup_removes_created_keys() {
        let broker = Arc::new(MemoryBroker::new());
        let s = ValueStore::new(broker.clone(), "run");
        proxify(&Value::Int(1), &s).unwrap();
        proxify(&Value::Int(2), &s).unwrap();
        assert_eq!(broker.kv_len(), 2);
        assert_eq!(s.cleanup().unwrap(), 2);
        assert_eq!(broker.kv_len(), 0);
    }

    #[test]
    fn resolve_nested() {
        let s = store();
        let r = proxify(&Value::Int(7), &s).unwrap();
        let mut v = Value::List(vec![Value::Proxy(r), Value::Null]);
        resolve_in_place(&mut v, &s, None).unwrap();
        assert_eq!(v, Value::List(vec![Value::Int(7), Value::Null]));
    }

    #[test]
    fn prefetch_empty_is_noop() {
        let s = Arc::new(store());
        let h = prefetch(vec![], s.clone(), Arc::new(WorkerCache::default()));
        assert!(h.is_finished());
        h.wait();
        assert_eq!(s.reads(), 0);
    }
}
