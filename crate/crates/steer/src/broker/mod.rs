//! Per-topic request/result queue pairs plus a key-value store.
//!
//! Two interchangeable backends implement [`Broker`]: [`MemoryBroker`] for
//! a single process and [`TcpBroker`], a client for [`TcpBrokerServer`].
//! Queues are unbounded FIFOs and every message is delivered to exactly one
//! consumer. Nothing is persisted.

mod memory;
pub mod tcp;

use std::fmt;
use std::time::Duration;

pub use memory::MemoryBroker;
pub use tcp::{TcpBroker, TcpBrokerServer};

/// Locator reported by in-process stores.
pub const IN_PROCESS: &str = "in-process";

/// Named channel owning one request queue and one result queue.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Topic(String);

impl Topic {
    /// Topic names are non-empty and contain no whitespace.
    pub fn new(name: impl Into<String>) -> Result<Topic, BrokerError> {
        let name = name.into();
        if name.is_empty() || name.chars().any(char::is_whitespace) {
            return Err(BrokerError::InvalidTopic(name));
        }
        Ok(Topic(name))
    }

    /// For compile-time constant names; panics on an invalid name.
    pub fn fixed(name: &'static str) -> Topic {
        Topic::new(name).expect("invalid topic name")
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Topic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BrokerError {
    #[error("unknown topic `{0}`")]
    UnknownTopic(String),
    #[error("invalid topic name `{0}`")]
    InvalidTopic(String),
    #[error("key must be non-empty")]
    InvalidKey,
    #[error("key `{0}` not found")]
    NotFound(String),
    #[error("consume needs at least one topic")]
    NoTopics,
    #[error("broker unreachable: {0}")]
    Io(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
}

impl From<std::io::Error> for BrokerError {
    fn from(e: std::io::Error) -> Self {
        BrokerError::Io(e.to_string())
    }
}

pub trait Broker: Send + Sync {
    /// Creates the queue pair for `topic`; registering twice is a no-op.
    fn register_topic(&self, topic: &Topic) -> Result<(), BrokerError>;

    fn publish_request(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError>;

    /// Next request from any of `topics`, or `None` after `timeout`.
    ///
    /// Topics are scanned round-robin so one busy topic cannot starve the rest.
    fn consume_request(
        &self,
        topics: &[Topic],
        timeout: Duration,
    ) -> Result<Option<(Topic, Vec<u8>)>, BrokerError>;

    fn publish_result(&self, topic: &Topic, message: Vec<u8>) -> Result<(), BrokerError>;

    fn consume_result(&self, topic: &Topic, timeout: Duration)
        -> Result<Option<Vec<u8>>, BrokerError>;

    fn kv_put(&self, key: &str, value: Vec<u8>) -> Result<(), BrokerError>;

    /// Absent keys yield [`BrokerError::NotFound`].
    fn kv_get(&self, key: &str) -> Result<Vec<u8>, BrokerError>;

    /// Deleting an absent key is not an error.
    fn kv_delete(&self, key: &str) -> Result<(), BrokerError>;

    /// Address other processes can use to reach this store.
    fn locator(&self) -> String;
}

pub(crate) fn check_key(key: &str) -> Result<(), BrokerError> {
    if key.is_empty() {
        Err(BrokerError::InvalidKey)
    } else {
        Ok(())
    }
}
