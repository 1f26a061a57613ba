//! Process clock.
//!
//! Stamps are wall-clock nanoseconds, but they advance with the monotonic
//! clock from a per-process anchor, so durations inside one process never go
//! backwards. Differences between stamps taken in two processes assume both
//! read the same host clock.

use std::sync::OnceLock;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use steer_core::{Event, RecordError, Stamp, TaskRecord};

fn anchor() -> &'static (Instant, i64) {
    static ANCHOR: OnceLock<(Instant, i64)> = OnceLock::new();
    ANCHOR.get_or_init(|| {
        let wall = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_nanos() as i64)
            .unwrap_or(0);
        (Instant::now(), wall)
    })
}

pub fn now() -> Stamp {
    let (start, wall) = anchor();
    Stamp(wall + start.elapsed().as_nanos() as i64)
}

/// Stamps `event` with the current instant.
///
/// A stamp that would precede an earlier event (possible only when the
/// earlier one came from another process) is raised to that event's stamp.
pub fn mark(record: &mut TaskRecord, event: Event) -> Result<Stamp, RecordError> {
    mark_at(record, event, now())
}

/// Like [`mark`], for an instant captured earlier.
pub fn mark_at(record: &mut TaskRecord, event: Event, at: Stamp) -> Result<Stamp, RecordError> {
    let at = record
        .timestamps
        .latest_before(event)
        .map_or(at, |prev| prev.max(at));
    record.mark_at(event, at)?;
    Ok(at)
}

#[derive(Debug, Clone, Copy)]
pub struct Stopwatch(Instant);

impl Stopwatch {
    pub fn start() -> Self {
        Stopwatch(Instant::now())
    }

    pub fn ms(&self) -> f64 {
        self.0.elapsed().as_secs_f64() * 1e3
    }
}
