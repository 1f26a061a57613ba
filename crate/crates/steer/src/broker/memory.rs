use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use super::{check_key, Broker, BrokerError, Topic, IN_PROCESS};

#[derive(Default)]
struct Queues {
    pairs: HashMap<Topic, (VecDeque<Vec<u8>>, VecDeque<Vec<u8>>)>,
    cursor: usize,
}

/// In-process broker: all queues behind one lock, values in a separate map.
#[derive(Default)]
pub struct MemoryBroker {
    queues: Mutex<Queues>,
    requests_ready: Condvar,
    results_ready: Condvar,
    kv: Mutex<HashMap<String, Arc<[u8]>>>,
}

impl MemoryBroker {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_topics<'a>(topics: impl IntoIterator<Item = &'a Topic>) -> Self {
        let b = Self::new();
        for t in topics {
            b.register_topic(t).expect("in-process registration cannot fail");
        }
        b
    }

    pub fn kv_len(&self) -> usize {
        self.kv.lock().unwrap().len()
    }
}

impl Broker for MemoryBroker {
    fn register_topic(&self, topic: &Topic) -> Result<(), BrokerError> {
        self.queues
            .lock()
            .unwrap()
            .pairs
            .entry(topic.clone())
            .or_default();
        Ok(())
    }

    fn publish_request(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError> {
        let mut q = self.queues.lock().unwrap();
        let pair = q
            .pairs
            .get_mut(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        pair.0.push_back(message);
        drop(q);
        self.requests_ready.notify_all();
        Ok(())
    }

    fn consume_request(
        &self,
        topics: &[Topic],
        timeout: Duration,
    ) -> Result<Option<(Topic, Vec<u8>)>, BrokerError> {
        if topics.is_empty() {
            return Err(BrokerError::NoTopics);
        }
        let deadline = Instant::now() + timeout;
        let mut q = self.queues.lock().unwrap();
        if let Some(t) = topics.iter().find(|t| !q.pairs.contains_key(*t)) {
            return Err(BrokerError::UnknownTopic(t.to_string()));
        }
        loop {
            let start = q.cursor;
            for i in 0..topics.len() {
                let idx = (start + i) % topics.len();
                let topic = &topics[idx];
                if let Some(msg) = q.pairs.get_mut(topic).and_then(|p| p.0.pop_front()) {
                    q.cursor = idx + 1;
                    return Ok(Some((topic.clone(), msg)));
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            q = self.requests_ready.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    fn publish_result(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError> {
        let mut q = self.queues.lock().unwrap();
        let pair = q
            .pairs
            .get_mut(topic)
            .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
        pair.1.push_back(message);
        drop(q);
        self.results_ready.notify_all();
        Ok(())
    }

    fn consume_result(
        &self,
        topic: &Topic,
        timeout: Duration,
    ) -> Result<Option<Vec<u8>>, BrokerError> {
        let deadline = Instant::now() + timeout;
        let mut q = self.queues.lock().unwrap();
        loop {
            let pair = q
                .pairs
                .get_mut(topic)
                .ok_or_else(|| BrokerError::UnknownTopic(topic.to_string()))?;
            if let Some(msg) = pair.1.pop_front() {
                return Ok(Some(msg));
            }
            let now = Instant::now();
            if now >= deadline {
                return Ok(None);
            }
            q = self.results_ready.wait_timeout(q, deadline - now).unwrap().0;
        }
    }

    fn kv_put(&self, key: &str, value: Vec<u8>) -> Result<(), BrokerError> {
        check_key(key)?;
        self.kv.lock().unwrap().insert(key.to_owned(), value.into());
        Ok(())
    }

    fn kv_get(&self, key: &str) -> Result<Vec<u8>, BrokerError> {
        check_key(key)?;
        let v = self
            .kv
            .lock()
            .unwrap()
            .get(key)
            .cloned()
            .ok_or_else(|| BrokerError::NotFound(key.to_owned()))?;
        Ok(v.to_vec())
    }

    fn kv_delete(&self, key: &str) -> Result<(), BrokerError> {
        check_key(key)?;
        self.kv.lock().unwrap().remove(key);
        Ok(())
    }

    fn locator(&self) -> String {
        IN_PROCESS.to_owned()
    }
}
