//! Task records and lifecycle accounting.
//!
//! A [`TaskRecord`] travels from the policy side to a worker and back. Each
//! hop stamps one of seven lifecycle events; [`TaskRecord::overhead_breakdown`]
//! turns a completed record into per-segment durations.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use core::time::Duration;

use crate::value::Value;

/// Unique task identifier, preserved across every hop.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct TaskId(pub String);

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for TaskId {
    fn from(s: &str) -> Self {
        TaskId(s.into())
    }
}

/// Wall-clock instant in nanoseconds since the Unix epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Stamp(pub i64);

impl Stamp {
    pub fn from_millis(ms: i64) -> Self {
        Stamp(ms * 1_000_000)
    }

    /// Duration from `earlier` to `self`, saturating at zero.
    pub fn since(self, earlier: Stamp) -> Duration {
        Duration::from_nanos(self.0.saturating_sub(earlier.0).max(0) as u64)
    }
}

/// The seven lifecycle events, in the order they must occur.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Event {
    Created,
    RequestSent,
    RequestReceived,
    ComputeStarted,
    ComputeEnded,
    ResultSent,
    ResultReceived,
}

impl Event {
    pub const ALL: [Event; 7] = [
        Event::Created,
        Event::RequestSent,
        Event::RequestReceived,
        Event::ComputeStarted,
        Event::ComputeEnded,
        Event::ResultSent,
        Event::ResultReceived,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Event::Created => "created",
            Event::RequestSent => "request_sent",
            Event::RequestReceived => "request_received",
            Event::ComputeStarted => "compute_started",
            Event::ComputeEnded => "compute_ended",
            Event::ResultSent => "result_sent",
            Event::ResultReceived => "result_received",
        }
    }

    pub fn from_name(name: &str) -> Option<Event> {
        Event::ALL.into_iter().find(|e| e.name() == name)
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timestamps {
    stamps: [Option<Stamp>; 7],
}

impl Timestamps {
    pub fn get(&self, event: Event) -> Option<Stamp> {
        self.stamps[event.index()]
    }

    /// Latest stamp among events that precede `event`.
    pub fn latest_before(&self, event: Event) -> Option<Stamp> {
        self.stamps[..event.index()].iter().flatten().copied().max()
    }

    /// Earliest stamp among events that follow `event`.
    pub fn earliest_after(&self, event: Event) -> Option<Stamp> {
        self.stamps[event.index() + 1..]
            .iter()
            .flatten()
            .copied()
            .min()
    }

    /// Sets `event` at `at`, refusing double marks and order violations.
    pub fn mark_at(&mut self, event: Event, at: Stamp) -> Result<(), RecordError> {
        if self.get(event).is_some() {
            return Err(RecordError::DoubleMark(event));
        }
        if let Some(prev) = self.latest_before(event) {
            if at < prev {
                return Err(RecordError::NonMonotonic { event });
            }
        }
        if let Some(next) = self.earliest_after(event) {
            if at > next {
                return Err(RecordError::NonMonotonic { event });
            }
        }
        self.stamps[event.index()] = Some(at);
        Ok(())
    }

    pub fn missing(&self) -> Vec<Event> {
        Event::ALL
            .into_iter()
            .filter(|e| self.get(*e).is_none())
            .collect()
    }

    pub fn is_monotone(&self) -> bool {
        self.stamps
            .iter()
            .flatten()
            .zip(self.stamps.iter().flatten().skip(1))
            .all(|(a, b)| a <= b)
    }

    pub fn iter(&self) -> impl Iterator<Item = (Event, Stamp)> + '_ {
        Event::ALL
            .into_iter()
            .filter_map(|e| self.get(e).map(|s| (e, s)))
    }
}

/// Serialization and proxy-resolution durations in milliseconds.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SerializationMetrics {
    pub input_serialize_ms: Option<f64>,
    pub input_deserialize_ms: Option<f64>,
    pub result_serialize_ms: Option<f64>,
    pub result_deserialize_ms: Option<f64>,
    pub proxy_resolve_ms: Option<f64>,
}

impl SerializationMetrics {
    pub const FIELDS: [&'static str; 5] = [
        "input_serialize_ms",
        "input_deserialize_ms",
        "result_serialize_ms",
        "result_deserialize_ms",
        "proxy_resolve_ms",
    ];

    pub fn get(&self, name: &str) -> Option<f64> {
        match name {
            "input_serialize_ms" => self.input_serialize_ms,
            "input_deserialize_ms" => self.input_deserialize_ms,
            "result_serialize_ms" => self.result_serialize_ms,
            "result_deserialize_ms" => self.result_deserialize_ms,
            "proxy_resolve_ms" => self.proxy_resolve_ms,
            _ => None,
        }
    }

    pub fn set(&mut self, name: &str, ms: f64) -> bool {
        let slot = match name {
            "input_serialize_ms" => &mut self.input_serialize_ms,
            "input_deserialize_ms" => &mut self.input_deserialize_ms,
            "result_serialize_ms" => &mut self.result_serialize_ms,
            "result_deserialize_ms" => &mut self.result_deserialize_ms,
            "proxy_resolve_ms" => &mut self.proxy_resolve_ms,
            _ => return false,
        };
        *slot = Some(ms.max(0.0));
        true
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Failure {
    pub error_kind: String,
    pub message: String,
}

impl Failure {
    pub fn new(kind: impl Into<String>, message: impl Into<String>) -> Self {
        Failure {
            error_kind: kind.into(),
            message: message.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ResourcesHint {
    pub pool: String,
    pub nodes: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RecordError {
    #[error("event {0} already marked")]
    DoubleMark(Event),
    #[error("marking {event} would break timestamp ordering")]
    NonMonotonic { event: Event },
    #[error("record already completed")]
    AlreadyCompleted,
    #[error("record is missing lifecycle events: {missing:?}")]
    Incomplete { missing: Vec<Event> },
}

/// One task's full life: request, outcome and profiling data.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRecord {
    pub task_id: TaskId,
    pub topic: String,
    pub method: String,
    pub args: Vec<Value>,
    pub kwargs: BTreeMap<String, Value>,
    pub result: Option<Value>,
    /// `None` until the task completes.
    pub success: Option<bool>,
    pub failure: Option<Failure>,
    pub timestamps: Timestamps,
    pub ser_metrics: SerializationMetrics,
    pub resources_hint: Option<ResourcesHint>,
}

impl TaskRecord {
    pub fn new(
        task_id: TaskId,
        topic: impl Into<String>,
        method: impl Into<String>,
        args: Vec<Value>,
    ) -> Self {
        TaskRecord {
            task_id,
            topic: topic.into(),
            method: method.into(),
            args,
            kwargs: BTreeMap::new(),
            result: None,
            success: None,
            failure: None,
            timestamps: Timestamps::default(),
            ser_metrics: SerializationMetrics::default(),
            resources_hint: None,
        }
    }

    pub fn with_kwargs(mut self, kwargs: BTreeMap<String, Value>) -> Self {
        self.kwargs = kwargs;
        self
    }

    pub fn mark_at(&mut self, event: Event, at: Stamp) -> Result<(), RecordError> {
        self.timestamps.mark_at(event, at)
    }

    pub fn is_complete(&self) -> bool {
        self.success.is_some()
    }

    pub fn set_success(&mut self, result: Value) -> Result<(), RecordError> {
        if self.is_complete() {
            return Err(RecordError::AlreadyCompleted);
        }
        self.result = Some(result);
        self.success = Some(true);
        Ok(())
    }

    /// Completes the record as failed; any partial result is dropped.
    pub fn set_failure(&mut self, failure: Failure) -> Result<(), RecordError> {
        if self.is_complete() {
            return Err(RecordError::AlreadyCompleted);
        }
        self.result = None;
        self.failure = Some(failure);
        self.success = Some(false);
        Ok(())
    }

    pub fn overhead_breakdown(&self) -> Result<OverheadReport, RecordError> {
        OverheadReport::from_record(self)
    }
}

/// Per-segment durations of one completed round trip.
///
/// The five non-compute segments partition `created..result_received`, so
/// they sum to `total_overhead` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverheadReport {
    /// `created` to `request_sent`: client-side proxying and input serialization.
    pub submit_prep: Duration,
    pub request_transfer: Duration,
    /// `request_received` to `compute_started`: decode, pool queueing, proxy resolution.
    pub queue_to_compute: Duration,
    pub compute: Duration,
    /// `compute_ended` to `result_sent`: result proxying and serialization.
    pub result_prep: Duration,
    pub result_transfer: Duration,
    pub total_overhead: Duration,
    pub serialization_ms: f64,
    pub proxy_resolve_ms: f64,
}

impl OverheadReport {
    pub const SEGMENTS: [&'static str; 7] = [
        "submit_prep",
        "request_transfer",
        "queue_to_compute",
        "compute",
        "result_prep",
        "result_transfer",
        "total_overhead",
    ];

    pub fn from_record(record: &TaskRecord) -> Result<Self, RecordError> {
        let ts = &record.timestamps;
        let missing = ts.missing();
        if !missing.is_empty() {
            return Err(RecordError::Incomplete { missing });
        }
        let at = |e| ts.get(e).expect("checked above");
        let created = at(Event::Created);
        let sent = at(Event::RequestSent);
        let received = at(Event::RequestReceived);
        let started = at(Event::ComputeStarted);
        let ended = at(Event::ComputeEnded);
        let result_sent = at(Event::ResultSent);
        let result_received = at(Event::ResultReceived);
        let compute = ended.since(started);
        let m = &record.ser_metrics;
        let serialization_ms = [
            m.input_serialize_ms,
            m.input_deserialize_ms,
            m.result_serialize_ms,
            m.result_deserialize_ms,
        ]
        .iter()
        .flatten()
        .sum();
        Ok(OverheadReport {
            submit_prep: sent.since(created),
            request_transfer: received.since(sent),
            queue_to_compute: started.since(received),
            compute,
            result_prep: result_sent.since(ended),
            result_transfer: result_received.since(result_sent),
            total_overhead: result_received.since(created).saturating_sub(compute),
            serialization_ms,
            proxy_resolve_ms: m.proxy_resolve_ms.unwrap_or(0.0),
        })
    }

    /// Segment by name in milliseconds (see [`Self::SEGMENTS`]).
    pub fn segment_ms(&self, name: &str) -> Option<f64> {
        let d = match name {
            "submit_prep" => self.submit_prep,
            "request_transfer" => self.request_transfer,
            "queue_to_compute" => self.queue_to_compute,
            "compute" => self.compute,
            "result_prep" => self.result_prep,
            "result_transfer" => self.result_transfer,
            "total_overhead" => self.total_overhead,
            _ => return None,
        };
        Some(d.as_secs_f64() * 1e3)
    }

    /// Sum of the non-compute segments.
    pub fn segment_sum(&self) -> Duration {
        self.submit_prep
            + self.request_transfer
            + self.queue_to_compute
            + self.result_prep
            + self.result_transfer
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn record_at(ms: &[i64]) -> TaskRecord {
        let mut r = TaskRecord::new("t1".into(), "sim", "f", vec![Value::Int(1)]);
        for (e, t) in Event::ALL.into_iter().zip(ms) {
            r.mark_at(e, Stamp::from_millis(*t)).unwrap();
        }
        r
    }

    #[test]
    fn breakdown_of_reference_timeline() {
        let r = record_at(&[0, 1, 2, 3, 13, 14, 15]);
        let o = r.overhead_breakdown().unwrap();
        assert_eq!(o.compute, Duration::from_millis(10));
        assert_eq!(o.total_overhead, Duration::from_millis(5));
        assert_eq!(o.request_transfer, Duration::from_millis(1));
        assert_eq!(o.queue_to_compute, Duration::from_millis(1));
        assert_eq!(o.result_transfer, Duration::from_millis(1));
        assert_eq!(o.segment_sum(), o.total_overhead);
    }

    #[test]
    fn zero_length_task_is_all_overhead() {
        let r = record_at(&[0, 2, 3, 5, 5, 6, 9]);
        let o = r.overhead_breakdown().unwrap();
        assert_eq!(o.compute, Duration::ZERO);
        assert_eq!(o.total_overhead, Duration::from_millis(9));
    }

    #[test]
    fn missing_event_is_reported() {
        let mut r = TaskRecord::new("t1".into(), "sim", "f", vec![]);
        for (e, t) in Event::ALL.into_iter().zip([0, 1, 2, 3, 4, 5, 6]) {
            if e != Event::ResultSent {
                r.mark_at(e, Stamp::from_millis(t)).unwrap();
            }
        }
        match r.overhead_breakdown() {
            Err(RecordError::Incomplete { missing }) => assert_eq!(missing, vec![Event::ResultSent]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn double_mark_rejected() {
        let mut r = TaskRecord::new("t1".into(), "sim", "f", vec![]);
        r.mark_at(Event::Created, Stamp(5)).unwrap();
        assert_eq!(
            r.mark_at(Event::Created, Stamp(6)),
            Err(RecordError::DoubleMark(Event::Created))
        );
    }

    #[test]
    fn out_of_order_mark_rejected() {
        let mut ts = Timestamps::default();
        ts.mark_at(Event::RequestSent, Stamp(10)).unwrap();
        assert!(matches!(
            ts.mark_at(Event::Created, Stamp(11)),
            Err(RecordError::NonMonotonic { .. })
        ));
        ts.mark_at(Event::Created, Stamp(10)).unwrap();
        assert!(matches!(
            ts.mark_at(Event::ComputeStarted, Stamp(9)),
            Err(RecordError::NonMonotonic { .. })
        ));
    }

    #[test]
    fn completion_is_exclusive() {
        let mut r = TaskRecord::new("t1".into(), "sim", "f", vec![]);
        assert!(r.result.is_none() && r.failure.is_none() && !r.is_complete());
        r.set_failure(Failure::new("boom", "body failed")).unwrap();
        assert_eq!(r.success, Some(false));
        assert!(r.result.is_none());
        assert_eq!(r.set_success(Value::Null), Err(RecordError::AlreadyCompleted));
    }

    #[test]
    fn event_names_round_trip() {
        for e in Event::ALL {
            assert_eq!(Event::from_name(e.name()), Some(e));
        }
        assert_eq!(Event::from_name("nope"), None);
    }
}
