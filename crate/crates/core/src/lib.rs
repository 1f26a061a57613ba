//! Allocation-only building blocks for steering ensembles of computational
//! tasks.
//!
//! Everything in this crate is pure: no clocks, threads, sockets or files.
//! Callers supply instants and randomness seeds; the `steer` crate layers the
//! concurrent runtime, wire format and command line on top.
//!
//! - [`value`] and [`record`]: the task data model and lifecycle accounting.
//! - [`resources`]: the pool ledger behind the blocking resource tracker.
//! - [`lru`]: the eviction policy used by worker value caches.
//! - [`stats`]: medians and busy-interval utilization.
//! - [`synth`]: synthetic benchmark configuration and payloads.
//! - [`campaign`]: search-space generation, simulated assays, the bootstrap
//!   ridge surrogate, UCB ranking and record scoring.

#![no_std]

extern crate alloc;

pub mod campaign;
pub mod lru;
pub mod record;
pub mod resources;
pub mod stats;
pub mod synth;
pub mod value;

pub use record::{
    Event, Failure, OverheadReport, RecordError, ResourcesHint, SerializationMetrics, Stamp,
    TaskId, TaskRecord, Timestamps,
};
pub use resources::{LedgerError, ResourceLedger};
pub use value::{ProxyRef, Value};
