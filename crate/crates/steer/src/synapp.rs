//! Synthetic benchmark driver.
//!
//! A planner submits one task per worker, then every arriving result
//! triggers the next submission until `T` tasks have completed. The task
//! sleeps for `D` seconds (sleep, not spin, so eight workers fit on a small
//! machine) and returns `O` bytes.
//!
//! The first `N` tasks are warm-up: they are recorded but left out of the
//! medians.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use steer_core::stats::{median, Window};
use steer_core::synth::{make_input, make_output, ConfigError, SynAppConfig};
use steer_core::{Event, OverheadReport, TaskRecord, Value};

use crate::broker::{Broker, BrokerError, Topic};
use crate::proxy::{ProxyPolicy, ValueStore};
use crate::taskserver::{serve, MethodRegistry, ServerConfig, ServerError, TaskDefinition, TaskInputs};
use crate::thinker::{AgentSpec, Context, Thinker, ThinkerError};

pub const TOPIC: &str = "synapp";
pub const METHOD: &str = "synthetic";
const POOL: &str = "workers";

#[derive(Debug, thiserror::Error)]
pub enum SynAppError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("task {task_id} failed ({kind}): {message}")]
    TaskFailed {
        task_id: String,
        kind: String,
        message: String,
    },
    #[error("only {completed} of {expected} tasks completed")]
    Incomplete { completed: usize, expected: usize },
    #[error("task {0} is missing lifecycle timestamps")]
    Timestamps(String),
    #[error(transparent)]
    Thinker(#[from] ThinkerError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error("invalid sweep: {0}")]
    Sweep(&'static str),
}

/// One completed task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskRow {
    pub task_id: String,
    /// Submission order.
    pub index: usize,
    pub warmup: bool,
    pub overhead: OverheadReport,
    pub compute_started: steer_core::Stamp,
    pub compute_ended: steer_core::Stamp,
    pub created: steer_core::Stamp,
    pub result_received: steer_core::Stamp,
    pub timestamps: steer_core::Timestamps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub config: SynAppConfig,
    /// In completion order.
    pub tasks: Vec<TaskRow>,
    /// Median of each overhead segment (ms) over non-warm-up tasks.
    pub medians: BTreeMap<&'static str, f64>,
    /// From the first submission to the last result.
    pub utilization_all: f64,
    /// From the moment every warm-up task had started to the last result.
    pub utilization_steady: f64,
    pub wall_time: Duration,
    pub max_in_flight: u64,
}

impl MetricsReport {
    pub fn median_ms(&self, segment: &str) -> Option<f64> {
        self.medians.get(segment).copied()
    }

    /// Median per-task communication and serialization cost.
    pub fn median_overhead_ms(&self) -> f64 {
        self.medians["total_overhead"]
    }

    /// Per-task rows: id, order, warm-up flag and every segment in ms.
    pub fn write_tasks_csv(&self, w: impl Write) -> csv::Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["task_id", "index", "warmup"];
        header.extend(OverheadReport::SEGMENTS.iter().map(|s| s.to_owned()));
        header.extend(["serialization_ms", "proxy_resolve_ms"]);
        out.write_record(header.iter().map(|h| match *h {
            "task_id" | "index" | "warmup" | "serialization_ms" | "proxy_resolve_ms" => h.to_string(),
            seg => format!("{seg}_ms"),
        }))?;
        for t in &self.tasks {
            let mut row = vec![t.task_id.clone(), t.index.to_string(), t.warmup.to_string()];
            row.extend(
                OverheadReport::SEGMENTS
                    .iter()
                    .map(|s| format!("{:.4}", t.overhead.segment_ms(s).unwrap_or(0.0))),
            );
            row.push(format!("{:.4}", t.overhead.serialization_ms));
            row.push(format!("{:.4}", t.overhead.proxy_resolve_ms));
            out.write_record(row)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Task definitions the driver expects on the server side.
pub fn registry(workers: usize) -> Result<MethodRegistry, ServerError> {
    let mut reg = MethodRegistry::new();
    reg.add_pool(POOL, workers)?;
    reg.register(TaskDefinition::new(METHOD, POOL, |i: TaskInputs| {
        let d = i.kwarg("duration_s").and_then(Value::as_f64).unwrap_or(0.0);
        let o = i.kwarg("output_size").and_then(Value::as_i64).unwrap_or(0);
        if d > 0.0 {
            std::thread::sleep(Duration::from_secs_f64(d));
        }
        Ok(Value::Bytes(make_output(o.max(0) as usize)))
    }))?;
    Ok(reg)
}

fn policy(config: &SynAppConfig) -> ProxyPolicy {
    if config.use_proxy {
        ProxyPolicy {
            threshold_bytes: config.threshold_bytes,
            enabled: true,
        }
    } else {
        ProxyPolicy::disabled()
    }
}

/// Starts a task server for `config` on `broker`, runs the workload and shuts
/// the server down.
pub fn run_with_server(config: &SynAppConfig, broker: Arc<dyn Broker>) -> Result<MetricsReport, SynAppError> {
    config.validate()?;
    let topic = Topic::fixed(TOPIC);
    let worker_store = Arc::new(ValueStore::new(broker.clone(), format!("synapp-worker-{}", uuid::Uuid::new_v4())));
    let mut server_cfg = ServerConfig::with_store(worker_store.clone(), policy(config));
    // inputs are unique, so the cache only needs to hold prefetched values
    server_cfg.cache_entries = 2 * config.workers;
    server_cfg.poll = Duration::from_millis(5);
    let server = serve(broker.clone(), registry(config.workers)?, &[topic], server_cfg)?;
    let report = run_synapp(config, broker);
    server.shutdown();
    let _ = worker_store.cleanup();
    report
}

/// Same, on a fresh in-process broker.
pub fn run_local(config: &SynAppConfig) -> Result<MetricsReport, SynAppError> {
    run_with_server(config, Arc::new(crate::broker::MemoryBroker::new()))
}

struct Driver {
    config: SynAppConfig,
    topic: Topic,
    rows: Mutex<Vec<TaskRecord>>,
    order: Mutex<BTreeMap<String, usize>>,
    next_index: AtomicUsize,
    failure: Mutex<Option<SynAppError>>,
    max_in_flight: AtomicU64,
}

impl Driver {
    fn submit_next(&self, ctx: &Context<Driver>) -> Result<bool, crate::thinker::BoxError> {
        let index = self.next_index.fetch_add(1, Ordering::SeqCst);
        if index >= self.config.tasks {
            return Ok(false);
        }
        // generated before `created` so it is not counted as overhead
        let input = Value::Bytes(make_input(&self.config, index));
        let req = crate::thinker::TaskRequest::new(&self.topic, METHOD, vec![input])
            .kwarg("duration_s", self.config.duration_s)
            .kwarg("output_size", self.config.output_size as i64);
        let id = ctx.submit_request(req)?;
        self.order.lock().unwrap().insert(id.0, index);
        self.max_in_flight.fetch_max(ctx.in_flight(), Ordering::SeqCst);
        Ok(true)
    }
}

/// Runs the workload against a server already serving [`TOPIC`] with
/// [`registry`].
pub fn run_synapp(config: &SynAppConfig, broker: Arc<dyn Broker>) -> Result<MetricsReport, SynAppError> {
    config.validate()?;
    let topic = Topic::fixed(TOPIC);
    let store = Arc::new(ValueStore::new(broker.clone(), format!("synapp-{}", uuid::Uuid::new_v4())));
    let driver = Driver {
        config: config.clone(),
        topic: topic.clone(),
        rows: Mutex::new(Vec::with_capacity(config.tasks)),
        order: Mutex::new(BTreeMap::new()),
        next_index: AtomicUsize::new(0),
        failure: Mutex::new(None),
        max_in_flight: AtomicU64::new(0),
    };
    let mut thinker = Thinker::new(broker, std::slice::from_ref(&topic), driver)
        .with_value_store(store.clone(), policy(config))
        .with_poll_interval(Duration::from_millis(5));

    thinker.register(AgentSpec::looping("planner", |ctx: &Context<Driver>| {
        let d = ctx.state();
        for _ in 0..d.config.workers {
            if !d.submit_next(ctx)? {
                break;
            }
        }
        loop {
            if d.failure.lock().unwrap().is_some() || d.rows.lock().unwrap().len() >= d.config.tasks {
                return Ok(());
            }
            if ctx.wait_done(Duration::from_millis(5)) {
                return Ok(());
            }
        }
    }))?;

    thinker.register(AgentSpec::result_processor(
        "consumer",
        topic,
        |ctx: &Context<Driver>, mut r: TaskRecord| {
            let d = ctx.state();
            for v in r.args.drain(..).chain(r.result.take()) {
                if let (Value::Proxy(p), Some(s)) = (&v, ctx.value_store()) {
                    s.delete(&p.key)?;
                }
            }
            if r.success != Some(true) {
                let f = r.failure.clone().unwrap_or_else(|| steer_core::Failure::new("unknown", ""));
                *d.failure.lock().unwrap() = Some(SynAppError::TaskFailed {
                    task_id: r.task_id.0.clone(),
                    kind: f.error_kind,
                    message: f.message,
                });
                ctx.set_done();
                return Ok(());
            }
            r.kwargs.clear();
            d.rows.lock().unwrap().push(r);
            d.submit_next(ctx)?;
            Ok(())
        },
    ))?;

    let start = Instant::now();
    let run = thinker.run()?;
    let wall_time = start.elapsed();
    let _ = store.cleanup();
    if let Some(f) = run.agents.iter().flat_map(|a| a.failures.first()).next() {
        return Err(SynAppError::TaskFailed {
            task_id: String::new(),
            kind: "agent".into(),
            message: f.clone(),
        });
    }

    let d = thinker.state();
    if let Some(e) = d.failure.lock().unwrap().take() {
        return Err(e);
    }
    let records = std::mem::take(&mut *d.rows.lock().unwrap());
    if records.len() != config.tasks {
        return Err(SynAppError::Incomplete {
            completed: records.len(),
            expected: config.tasks,
        });
    }
    let order = d.order.lock().unwrap();
    let max_in_flight = d.max_in_flight.load(Ordering::SeqCst);
    build_report(config, &records, &order, wall_time, max_in_flight)
}

fn build_report(
    config: &SynAppConfig,
    records: &[TaskRecord],
    order: &BTreeMap<String, usize>,
    wall_time: Duration,
    max_in_flight: u64,
) -> Result<MetricsReport, SynAppError> {
    let mut tasks = Vec::with_capacity(records.len());
    for r in records {
        let overhead = r
            .overhead_breakdown()
            .map_err(|_| SynAppError::Timestamps(r.task_id.0.clone()))?;
        let at = |e| r.timestamps.get(e).expect("complete record");
        let index = order.get(&r.task_id.0).copied().unwrap_or(usize::MAX);
        tasks.push(TaskRow {
            task_id: r.task_id.0.clone(),
            index,
            warmup: index < config.workers,
            overhead,
            compute_started: at(Event::ComputeStarted),
            compute_ended: at(Event::ComputeEnded),
            created: at(Event::Created),
            result_received: at(Event::ResultReceived),
            timestamps: r.timestamps.clone(),
        });
    }

    let steady: Vec<&TaskRow> = {
        let s: Vec<&TaskRow> = tasks.iter().filter(|t| !t.warmup).collect();
        if s.is_empty() {
            tasks.iter().collect()
        } else {
            s
        }
    };
    let medians = OverheadReport::SEGMENTS
        .iter()
        .map(|seg| {
            let xs: Vec<f64> = steady.iter().map(|t| t.overhead.segment_ms(seg).unwrap()).collect();
            (*seg, median(&xs).unwrap_or(0.0))
        })
        .collect();

    let first = tasks.iter().map(|t| t.created).min().expect("at least one task");
    let last = tasks.iter().map(|t| t.result_received).max().expect("at least one task");
    let ramped = tasks
        .iter()
        .filter(|t| t.warmup)
        .map(|t| t.compute_started)
        .max()
        .unwrap_or(first);
    let busy: Vec<_> = tasks.iter().map(|t| (t.compute_started, t.compute_ended)).collect();
    let util = |w: Window| steer_core::stats::utilization(&busy, config.workers, w).unwrap_or(0.0);

    Ok(MetricsReport {
        config: config.clone(),
        medians,
        utilization_all: util(Window::new(first, last)),
        utilization_steady: util(Window::new(ramped, last)),
        tasks,
        wall_time,
        max_in_flight,
    })
}

/// One input size of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub input_size: usize,
    pub direct_median_ms: f64,
    pub proxy_median_ms: f64,
}

impl SweepRow {
    /// Proxy over direct median overhead.
    pub fn ratio(&self) -> f64 {
        self.proxy_median_ms / self.direct_median_ms
    }

    pub fn percent_change(&self) -> f64 {
        (self.ratio() - 1.0) * 100.0
    }
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["input_size_bytes", "direct_median_ms", "proxy_median_ms", "ratio", "percent_change"])?;
    for r in rows {
        out.write_record([
            r.input_size.to_string(),
            format!("{:.4}", r.direct_median_ms),
            format!("{:.4}", r.proxy_median_ms),
            format!("{:.4}", r.ratio()),
            format!("{:.2}", r.percent_change()),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Runs `base` with and without proxying at each input size.
///
/// The proxy runs use `base.threshold_bytes`. `repeats` independent runs
/// per mode are reduced to the median of their medians.
pub fn sweep_input_size(
    sizes: &[usize],
    base: &SynAppConfig,
    repeats: usize,
    mut run: impl FnMut(&SynAppConfig) -> Result<MetricsReport, SynAppError>,
) -> Result<Vec<SweepRow>, SynAppError> {
    if sizes.is_empty() {
        return Err(SynAppError::Sweep("no sizes"));
    }
    if sizes.windows(2).any(|w| w[0] > w[1]) {
        return Err(SynAppError::Sweep("sizes must be sorted ascending"));
    }
    let repeats = repeats.max(1);
    let mut rows = Vec::new();
    for &size in sizes {
        let mut medians = [Vec::new(), Vec::new()];
        for rep in 0..repeats {
            // alternate the order so drift affects both modes alike
            let modes = if rep % 2 == 0 { [false, true] } else { [true, false] };
            for use_proxy in modes {
                let cfg = SynAppConfig {
                    input_size: size,
                    use_proxy,
                    seed: base.seed.wrapping_add(rep as u64),
                    ..base.clone()
                };
                medians[use_proxy as usize].push(run(&cfg)?.median_overhead_ms());
            }
        }
        rows.push(SweepRow {
            input_size: size,
            direct_median_ms: median(&medians[0]).unwrap_or(f64::NAN),
            proxy_median_ms: median(&medians[1]).unwrap_or(f64::NAN),
        });
    }
    Ok(rows)
}

/// One grid point of an envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopeRow {
    pub duration_s: f64,
    pub size_bytes: usize,
    pub workers: usize,
    pub utilization_all: f64,
    pub utilization_steady: f64,
}

pub fn write_envelope_csv(rows: &[EnvelopeRow], w: impl Write) -> csv::Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record([
        "duration_s",
        "size_bytes",
        "workers",
        "utilization_incl_warmup",
        "utilization_excl_warmup",
    ])?;
    for r in rows {
        out.write_record([
            r.duration_s.to_string(),
            r.size_bytes.to_string(),
            r.workers.to_string(),
            format!("{:.4}", r.utilization_all),
            format!("{:.4}", r.utilization_steady),
        ])?;
    }
    out.flush()?;
    Ok(())
}

/// Utilization over the grid, with `I = O = s` and `T = tasks_per_worker · N`.
pub fn envelope(
    durations: &[f64],
    sizes: &[usize],
    workers: &[usize],
    base: &SynAppConfig,
    tasks_per_worker: usize,
    mut run: impl FnMut(&SynAppConfig) -> Result<MetricsReport, SynAppError>,
) -> Result<Vec<EnvelopeRow>, SynAppError> {
    if durations.is_empty() || sizes.is_empty() || workers.is_empty() {
        return Err(SynAppError::Sweep("every grid axis needs at least one value"));
    }
    let mut rows = Vec::new();
    for &n in workers {
        for &s in sizes {
            for &d in durations {
                let cfg = SynAppConfig {
                    tasks: tasks_per_worker.max(1) * n,
                    duration_s: d,
                    input_size: s,
                    output_size: s,
                    workers: n,
                    ..base.clone()
                };
                let r = run(&cfg)?;
                rows.push(EnvelopeRow {
                    duration_s: d,
                    size_bytes: s,
                    workers: n,
                    utilization_all: r.utilization_all,
                    utilization_steady: r.utilization_steady,
                });
            }
        }
    }
    Ok(rows)
}
