//! Proxy round trips, single-flight fetching and the LRU shadow model.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Barrier};
use std::thread;
use std::time::Duration;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer::broker::MemoryBroker;
use steer::proxy::{self, prefetch, proxify, ValueStore, WorkerCache};
use steer::wire;
use steer_core::{ProxyRef, Value};

pub fn store() -> ValueStore {
    ValueStore::new(Arc::new(MemoryBroker::new()), "run")
}

pub fn random_bytes(len: usize, seed: u64) -> Vec<u8> {
    let mut v = vec![0u8; len];
    ChaCha8Rng::seed_from_u64(seed).fill_bytes(&mut v);
    v
}

/// Size of the reference as it appears inside an encoded task record.
pub fn encoded_ref_len(r: &ProxyRef) -> usize {
    let inputs = wire::encode_inputs(&[Value::Proxy(r.clone())], &BTreeMap::new()).unwrap();
    serde_json::to_vec(&inputs).unwrap().len()
}

/// Proxies `len` random bytes and checks the resolved value byte for byte.
pub fn bytes_identity(len: usize, seed: u64) {
    let s = store();
    let v = Value::Bytes(random_bytes(len, seed));
    let r = proxify(&v, &s).unwrap();
    assert!(encoded_ref_len(&r) <= 512);
    let back = proxy::resolve(&r, &s, None).unwrap();
    assert_eq!(wire::to_store_bytes(&back).unwrap(), wire::to_store_bytes(&v).unwrap());
}

/// Eight threads resolve one key at once through a shared cache.
pub fn concurrent_resolves_share_one_read() {
    let s = Arc::new(store().with_read_latency(Duration::from_millis(20)));
    let r = proxify(&Value::Bytes(random_bytes(1000, 3)), &s).unwrap();
    let cache = Arc::new(WorkerCache::default());
    let gate = Arc::new(Barrier::new(8));
    let handles: Vec<_> = (0..8)
        .map(|_| {
            let (s, r, cache, gate) = (s.clone(), r.clone(), cache.clone(), gate.clone());
            thread::spawn(move || {
                gate.wait();
                proxy::resolve(&r, &s, Some(&cache)).unwrap()
            })
        })
        .collect();
    let values: Vec<_> = handles.into_iter().map(|h| h.join().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] == w[1]));
    assert_eq!(s.reads(), 1);
    assert_eq!(cache.misses(), 1);
    assert_eq!(cache.hits(), 7);
}

pub fn prefetch_twice_reads_once() {
    let s = Arc::new(store().with_read_latency(Duration::from_millis(20)));
    let r = proxify(&Value::Str("weights".into()), &s).unwrap();
    let cache = Arc::new(WorkerCache::default());
    let a = prefetch(vec![r.clone()], s.clone(), cache.clone());
    let b = prefetch(vec![r.clone()], s.clone(), cache.clone());
    a.wait();
    b.wait();
    assert_eq!(s.reads(), 1);
    assert!(cache.contains(&r.key));
}

pub fn resolve_joins_an_inflight_prefetch() {
    let s = Arc::new(store().with_read_latency(Duration::from_millis(50)));
    let r = proxify(&Value::Int(9), &s).unwrap();
    let cache = Arc::new(WorkerCache::default());
    let h = prefetch(vec![r.clone()], s.clone(), cache.clone());
    thread::sleep(Duration::from_millis(5));
    assert_eq!(*proxy::resolve(&r, &s, Some(&cache)).unwrap(), Value::Int(9));
    h.wait();
    assert_eq!(s.reads(), 1);
}

/// Resolves keys `0..10` in the order given through a cache of `cap`
/// entries, tracking recency and store reads with a plain list.
pub fn lru_shadow(cap: usize, order: &[usize]) {
    let s = store();
    let refs: Vec<ProxyRef> = (0..10).map(|i| proxify(&Value::Int(i), &s).unwrap()).collect();
    let cache = WorkerCache::new(cap);
    let mut shadow: Vec<String> = Vec::new();
    let mut resolved = BTreeSet::new();
    let mut expected_reads = 0;
    for &i in order {
        let key = refs[i].key.clone();
        let v = proxy::resolve(&refs[i], &s, Some(&cache)).unwrap();
        assert_eq!(*v, Value::Int(i as i64));
        resolved.insert(key.clone());
        if let Some(pos) = shadow.iter().position(|k| *k == key) {
            shadow.remove(pos);
        } else {
            expected_reads += 1;
            if shadow.len() == cap {
                shadow.remove(0);
            }
        }
        shadow.push(key);
        let cached = cache.keys_by_recency();
        assert_eq!(cached, shadow);
        assert!(cached.len() <= cap);
        assert!(cached.iter().all(|k| resolved.contains(k)));
        assert_eq!(s.reads(), expected_reads);
    }
}
