#![allow(dead_code)]

use std::sync::Arc;
use std::time::{Duration, Instant};

use steer::broker::{Broker, Topic};
use steer::clock;
use steer::wire;
use steer_core::{Event, TaskId, TaskRecord, Value};

/// Stamps and publishes a request the way a thinker would.
pub fn send(b: &dyn Broker, topic: &Topic, id: &str, method: &str, args: Vec<Value>) {
    let mut r = TaskRecord::new(TaskId(id.into()), topic.as_str(), method, args);
    clock::mark(&mut r, Event::Created).unwrap();
    clock::mark(&mut r, Event::RequestSent).unwrap();
    b.publish_request(topic, wire::encode(&r).unwrap()).unwrap();
}

/// Collects `n` decoded results, stamping `result_received`.
pub fn collect(b: &dyn Broker, topic: &Topic, n: usize, limit: Duration) -> Vec<TaskRecord> {
    let deadline = Instant::now() + limit;
    let mut out = Vec::new();
    while out.len() < n {
        let left = deadline.saturating_duration_since(Instant::now());
        assert!(!left.is_zero(), "only {} of {n} results arrived", out.len());
        if let Some(bytes) = b.consume_result(topic, left.min(Duration::from_millis(50))).unwrap() {
            let mut r = wire::decode(&bytes).unwrap();
            clock::mark(&mut r, Event::ResultReceived).unwrap();
            out.push(r);
        }
    }
    out
}

pub fn memory_broker(topics: &[&str]) -> (Arc<dyn Broker>, Vec<Topic>) {
    let topics: Vec<Topic> = topics.iter().map(|t| Topic::new(*t).unwrap()).collect();
    let b = steer::broker::MemoryBroker::with_topics(&topics);
    (Arc::new(b), topics)
}

pub mod listing;
pub mod conformance;
pub mod proxy_props;
pub mod tracker;
