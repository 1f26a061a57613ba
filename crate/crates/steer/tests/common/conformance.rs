//! Semantics every broker backend must share.

use std::collections::HashMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer::broker::{Broker, BrokerError, MemoryBroker, TcpBroker, TcpBrokerServer, Topic};

fn topic(name: &str) -> Topic {
    Topic::new(name).unwrap()
}

pub fn request_round_trip_and_order(b: &dyn Broker) {
    let t = topic("sim");
    b.register_topic(&t).unwrap();
    b.publish_request(&t, b"a".to_vec()).unwrap();
    b.publish_request(&t, b"b".to_vec()).unwrap();
    let wait = Duration::from_millis(100);
    assert_eq!(b.consume_request(&[t.clone()], wait).unwrap(), Some((t.clone(), b"a".to_vec())));
    assert_eq!(b.consume_request(&[t.clone()], wait).unwrap(), Some((t.clone(), b"b".to_vec())));
}

pub fn result_round_trip_and_order(b: &dyn Broker) {
    let t = topic("train");
    b.register_topic(&t).unwrap();
    for m in [&b"x"[..], b"y", b"z"] {
        b.publish_result(&t, m.to_vec()).unwrap();
    }
    let wait = Duration::from_millis(100);
    let got: Vec<_> = (0..3).map(|_| b.consume_result(&t, wait).unwrap().unwrap()).collect();
    assert_eq!(got, vec![b"x".to_vec(), b"y".to_vec(), b"z".to_vec()]);
}

pub fn unknown_topic_rejected(b: &dyn Broker) {
    let t = topic("nobody");
    assert_eq!(
        b.publish_request(&t, vec![1]),
        Err(BrokerError::UnknownTopic("nobody".into()))
    );
    assert!(matches!(b.publish_result(&t, vec![1]), Err(BrokerError::UnknownTopic(_))));
    assert!(matches!(
        b.consume_request(&[t], Duration::from_millis(1)),
        Err(BrokerError::UnknownTopic(_))
    ));
}

pub fn empty_consume_times_out(b: &dyn Broker) {
    let t = topic("idle");
    b.register_topic(&t).unwrap();
    let start = Instant::now();
    assert_eq!(b.consume_request(&[t.clone()], Duration::from_millis(10)).unwrap(), None);
    assert_eq!(b.consume_result(&t, Duration::from_millis(10)).unwrap(), None);
    let took = start.elapsed();
    assert!(took >= Duration::from_millis(18), "{took:?}");
    assert!(took < Duration::from_millis(500), "{took:?}");
}

pub fn multi_topic_exactly_once(b: &dyn Broker) {
    let (t1, t2) = (topic("alpha"), topic("beta"));
    b.register_topic(&t1).unwrap();
    b.register_topic(&t2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut published = Vec::new();
    for i in 0..60u32 {
        let t = if rng.random_bool(0.5) { &t1 } else { &t2 };
        b.publish_request(t, i.to_be_bytes().to_vec()).unwrap();
        published.push((t.clone(), i));
    }
    let mut consumed = Vec::new();
    while consumed.len() < published.len() {
        // randomized consumer schedule: sometimes one topic, sometimes both
        let set = match rng.random_range(0..3) {
            0 => vec![t1.clone()],
            1 => vec![t2.clone()],
            _ => vec![t2.clone(), t1.clone()],
        };
        if let Some((t, m)) = b.consume_request(&set, Duration::from_millis(1)).unwrap() {
            assert!(set.contains(&t));
            consumed.push((t, u32::from_be_bytes(m.try_into().unwrap())));
        }
    }
    assert_eq!(b.consume_request(&[t1, t2], Duration::from_millis(5)).unwrap(), None);
    published.sort();
    consumed.sort();
    assert_eq!(published, consumed);
}

/// P producers and C consumers on each queue; the consumed multiset must
/// equal the published multiset.
pub fn concurrent_exactly_once(b: Arc<dyn Broker>) {
    let t = topic("load");
    b.register_topic(&t).unwrap();
    const PRODUCERS: u32 = 4;
    const CONSUMERS: usize = 5;
    const PER_PRODUCER: u32 = 250;
    let total = (PRODUCERS * PER_PRODUCER) as usize;
    for results in [false, true] {
        let delivered = Arc::new(AtomicUsize::new(0));
        let mut handles = Vec::new();
        for c in 0..CONSUMERS {
            let (b, t, delivered) = (b.clone(), t.clone(), delivered.clone());
            handles.push(thread::spawn(move || {
                let mut mine = Vec::new();
                let mut rng = ChaCha8Rng::seed_from_u64(c as u64);
                while delivered.load(Ordering::SeqCst) < total {
                    let wait = Duration::from_millis(rng.random_range(1..5));
                    let got = if results {
                        b.consume_result(&t, wait).unwrap()
                    } else {
                        b.consume_request(&[t.clone()], wait).unwrap().map(|(_, m)| m)
                    };
                    if let Some(m) = got {
                        delivered.fetch_add(1, Ordering::SeqCst);
                        mine.push(u32::from_be_bytes(m.try_into().unwrap()));
                    }
                }
                mine
            }));
        }
        let producers: Vec<_> = (0..PRODUCERS)
            .map(|p| {
                let (b, t) = (b.clone(), t.clone());
                thread::spawn(move || {
                    for i in 0..PER_PRODUCER {
                        let msg = (p * PER_PRODUCER + i).to_be_bytes().to_vec();
                        if results {
                            b.publish_result(&t, msg).unwrap();
                        } else {
                            b.publish_request(&t, msg).unwrap();
                        }
                    }
                })
            })
            .collect();
        for p in producers {
            p.join().unwrap();
        }
        let mut counts: HashMap<u32, usize> = HashMap::new();
        for h in handles {
            for m in h.join().unwrap() {
                *counts.entry(m).or_default() += 1;
            }
        }
        assert_eq!(counts.len(), total);
        assert!(counts.values().all(|&c| c == 1));
    }
}

pub fn kv_semantics(b: &dyn Broker) {
    let mut payload = vec![0u8; 1_000_000];
    ChaCha8Rng::seed_from_u64(1).fill(&mut payload[..]);
    b.kv_put("run/blob", payload.clone()).unwrap();
    assert_eq!(b.kv_get("run/blob").unwrap(), payload);
    b.kv_put("run/blob", b"newer".to_vec()).unwrap();
    assert_eq!(b.kv_get("run/blob").unwrap(), b"newer".to_vec());
    b.kv_delete("run/blob").unwrap();
    assert_eq!(b.kv_get("run/blob"), Err(BrokerError::NotFound("run/blob".into())));
    assert_eq!(b.kv_put("", vec![]), Err(BrokerError::InvalidKey));
    b.kv_delete("never-there").unwrap();
}

pub fn empty_topic_set_rejected(b: &dyn Broker) {
    assert_eq!(
        b.consume_request(&[], Duration::from_millis(1)),
        Err(BrokerError::NoTopics)
    );
}

/// Every check against fresh brokers from `make`.
pub fn run_all(make: fn() -> (Arc<dyn Broker>, Option<TcpBrokerServer>)) {
    let checks: [fn(&dyn Broker); 7] = [
        request_round_trip_and_order,
        result_round_trip_and_order,
        unknown_topic_rejected,
        empty_consume_times_out,
        multi_topic_exactly_once,
        kv_semantics,
        empty_topic_set_rejected,
    ];
    for check in checks {
        let (b, _server) = make();
        check(&*b);
    }
    let (b, _server) = make();
    concurrent_exactly_once(b);
}

pub fn memory() -> (Arc<dyn Broker>, Option<TcpBrokerServer>) {
    (Arc::new(MemoryBroker::new()), None)
}

pub fn tcp() -> (Arc<dyn Broker>, Option<TcpBrokerServer>) {
    let server = TcpBrokerServer::bind("127.0.0.1:0").unwrap();
    let client = TcpBroker::connect(server.local_addr()).unwrap();
    (Arc::new(client), Some(server))
}
