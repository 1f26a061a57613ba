//! Executes task requests on named worker pools.
//!
//! An intake thread consumes requests from every served topic, resolves the
//! method, starts prefetching proxied inputs into the pool's cache and queues
//! the task. Each pool is a set of worker threads; a worker resolves inputs,
//! runs the body between `compute_started` and `compute_ended`, proxies a
//! large result and publishes the completed record. Body errors, panics and
//! timeouts become failure results; nothing takes a worker down.

use std::collections::{BTreeMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::Duration;

use steer_core::stats::{self, StatsError, Window};
use steer_core::{Event, Failure, TaskId, TaskRecord, Value};

use crate::broker::{Broker, BrokerError, Topic};
use crate::clock::{self, Stopwatch};
use crate::proxy::{self, PrefetchHandle, ProxyPolicy, ValueStore, WorkerCache};
use crate::thinker::BoxError;
use crate::wire;

pub const DECODE_ERROR: &str = "decode_error";
pub const UNKNOWN_METHOD: &str = "unknown_method";
pub const TIMEOUT: &str = "timeout";
pub const TASK_ERROR: &str = "task_error";
pub const RESOLVE_ERROR: &str = "resolve_error";
pub const ENCODE_ERROR: &str = "encode_error";

/// Resolved positional and keyword arguments handed to a task body.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TaskInputs {
    pub args: Vec<Value>,
    pub kwargs: BTreeMap<String, Value>,
}

impl TaskInputs {
    pub fn arg(&self, i: usize) -> Result<&Value, BoxError> {
        self.args
            .get(i)
            .ok_or_else(|| format!("missing argument {i}").into())
    }

    pub fn kwarg(&self, key: &str) -> Option<&Value> {
        self.kwargs.get(key)
    }
}

pub type TaskFn = Arc<dyn Fn(TaskInputs) -> Result<Value, BoxError> + Send + Sync>;

#[derive(Clone)]
pub struct TaskDefinition {
    pub method: String,
    pub body: TaskFn,
    pub pool: String,
    /// Accounting only; a task always occupies one worker.
    pub nodes_per_task: u32,
    pub timeout: Option<Duration>,
}

impl TaskDefinition {
    pub fn new(
        method: impl Into<String>,
        pool: impl Into<String>,
        body: impl Fn(TaskInputs) -> Result<Value, BoxError> + Send + Sync + 'static,
    ) -> Self {
        TaskDefinition {
            method: method.into(),
            body: Arc::new(body),
            pool: pool.into(),
            nodes_per_task: 1,
            timeout: None,
        }
    }

    pub fn nodes(mut self, n: u32) -> Self {
        self.nodes_per_task = n;
        self
    }

    /// Bodies running longer than `d` are reported as failed with kind
    /// `timeout`. The body's thread is left to finish on its own.
    pub fn timeout(mut self, d: Duration) -> Self {
        self.timeout = Some(d);
        self
    }
}

impl std::fmt::Debug for TaskDefinition {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TaskDefinition")
            .field("method", &self.method)
            .field("pool", &self.pool)
            .field("nodes_per_task", &self.nodes_per_task)
            .field("timeout", &self.timeout)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ServerError {
    #[error("method `{0}` is already registered")]
    DuplicateMethod(String),
    #[error("pool `{0}` is already defined")]
    DuplicatePool(String),
    #[error("unknown pool `{0}`")]
    UnknownPool(String),
    #[error("pool `{0}` needs at least one worker")]
    EmptyPool(String),
    #[error("no topics to serve")]
    NoTopics,
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, Clone, Default)]
pub struct MethodRegistry {
    methods: BTreeMap<String, TaskDefinition>,
    pools: BTreeMap<String, usize>,
}

impl MethodRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_pool(&mut self, name: impl Into<String>, workers: usize) -> Result<(), ServerError> {
        let name = name.into();
        if workers == 0 {
            return Err(ServerError::EmptyPool(name));
        }
        if self.pools.contains_key(&name) {
            return Err(ServerError::DuplicatePool(name));
        }
        self.pools.insert(name, workers);
        Ok(())
    }

    pub fn register(&mut self, def: TaskDefinition) -> Result<(), ServerError> {
        if !self.pools.contains_key(&def.pool) {
            return Err(ServerError::UnknownPool(def.pool));
        }
        if self.methods.contains_key(&def.method) {
            return Err(ServerError::DuplicateMethod(def.method));
        }
        self.methods.insert(def.method.clone(), def);
        Ok(())
    }

    pub fn method(&self, name: &str) -> Option<&TaskDefinition> {
        self.methods.get(name)
    }

    pub fn workers(&self, pool: &str) -> Option<usize> {
        self.pools.get(pool).copied()
    }

    pub fn pool_names(&self) -> Vec<String> {
        self.pools.keys().cloned().collect()
    }

    pub fn methods_in(&self, pool: &str) -> Vec<&str> {
        self.methods
            .values()
            .filter(|d| d.pool == pool)
            .map(|d| d.method.as_str())
            .collect()
    }

    /// Utilization of `pool` over `window`, counting records of the methods
    /// bound to it against its configured worker count.
    pub fn utilization(&self, records: &[TaskRecord], pool: &str, window: Window) -> Result<f64, StatsError> {
        let methods = self.methods_in(pool);
        let mine: Vec<&TaskRecord> = records
            .iter()
            .filter(|r| methods.contains(&r.method.as_str()))
            .collect();
        utilization(mine, self.workers(pool).unwrap_or(0), window)
    }
}

/// Σ compute time inside `window` ÷ (workers × window length).
pub fn utilization<'a>(
    records: impl IntoIterator<Item = &'a TaskRecord>,
    workers: usize,
    window: Window,
) -> Result<f64, StatsError> {
    let busy: Vec<_> = records
        .into_iter()
        .filter_map(|r| {
            Some((
                r.timestamps.get(Event::ComputeStarted)?,
                r.timestamps.get(Event::ComputeEnded)?,
            ))
        })
        .collect();
    stats::utilization(&busy, workers, window)
}

#[derive(Clone)]
pub struct ServerConfig {
    /// Needed to resolve proxied inputs and to proxy large results.
    pub store: Option<Arc<ValueStore>>,
    pub policy: ProxyPolicy,
    pub cache_entries: usize,
    pub prefetch: bool,
    /// How long one intake consume waits before rechecking for shutdown.
    pub poll: Duration,
}

impl Default for ServerConfig {
    fn default() -> Self {
        ServerConfig {
            store: None,
            policy: ProxyPolicy::disabled(),
            cache_entries: proxy::DEFAULT_CACHE_ENTRIES,
            prefetch: true,
            poll: Duration::from_millis(20),
        }
    }
}

impl ServerConfig {
    pub fn with_store(store: Arc<ValueStore>, policy: ProxyPolicy) -> Self {
        ServerConfig {
            store: Some(store),
            policy,
            ..Self::default()
        }
    }
}

/// Counters for one pool.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct PoolStats {
    pub workers: usize,
    pub executed: u64,
    pub running: usize,
    /// Most bodies ever running at once.
    pub peak_running: usize,
}

struct Job {
    record: TaskRecord,
    def: Arc<TaskDefinition>,
    prefetch: Option<PrefetchHandle>,
}

struct PoolState {
    queue: VecDeque<Job>,
    target: usize,
    live: usize,
    draining: bool,
    stats: PoolStats,
}

struct Pool {
    name: String,
    state: Mutex<PoolState>,
    wake: Condvar,
    cache: Arc<WorkerCache>,
    handles: Mutex<Vec<JoinHandle<()>>>,
}

struct Shared {
    broker: Arc<dyn Broker>,
    config: ServerConfig,
}

impl Pool {
    fn spawn_workers(self: &Arc<Self>, shared: &Arc<Shared>, n: usize) {
        let mut handles = self.handles.lock().unwrap();
        for i in 0..n {
            let (pool, shared) = (self.clone(), shared.clone());
            let h = thread::Builder::new()
                .name(format!("{}-worker-{i}", self.name))
                .spawn(move || pool.work(&shared))
                .expect("failed to spawn worker");
            handles.push(h);
        }
    }

    fn work(&self, shared: &Shared) {
        loop {
            let job = {
                let mut st = self.state.lock().unwrap();
                loop {
                    if st.live > st.target {
                        st.live -= 1;
                        return;
                    }
                    if let Some(job) = st.queue.pop_front() {
                        break job;
                    }
                    if st.draining {
                        st.live -= 1;
                        return;
                    }
                    st = self.wake.wait(st).unwrap();
                }
            };
            let record = execute(job, shared, &self.cache, || {
                let mut st = self.state.lock().unwrap();
                st.stats.running += 1;
                st.stats.peak_running = st.stats.peak_running.max(st.stats.running);
            });
            {
                let mut st = self.state.lock().unwrap();
                st.stats.running -= 1;
                st.stats.executed += 1;
            }
            publish(shared, record);
        }
    }
}

fn fail(record: &mut TaskRecord, kind: &str, msg: impl Into<String>) {
    let _ = record.set_failure(Failure::new(kind, msg));
}

/// Runs one task to completion; never panics on task errors.
fn execute(job: Job, shared: &Shared, cache: &WorkerCache, on_start: impl FnOnce()) -> TaskRecord {
    let Job {
        mut record,
        def,
        prefetch,
    } = job;
    let mut inputs = TaskInputs {
        args: record.args.clone(),
        kwargs: record.kwargs.clone(),
    };
    let needs_resolve = inputs.args.iter().chain(inputs.kwargs.values()).any(Value::contains_proxy);
    if needs_resolve {
        let sw = Stopwatch::start();
        let resolved = match &shared.config.store {
            Some(store) => inputs
                .args
                .iter_mut()
                .chain(inputs.kwargs.values_mut())
                .try_for_each(|v| proxy::resolve_in_place(v, store, Some(cache)))
                .map_err(|e| e.to_string()),
            None => Err("proxied input but the server has no value store".to_owned()),
        };
        record.ser_metrics.proxy_resolve_ms = Some(sw.ms());
        if let Err(msg) = resolved {
            fail(&mut record, RESOLVE_ERROR, msg);
            return record;
        }
    }
    drop(prefetch);

    on_start();
    let _ = clock::mark(&mut record, Event::ComputeStarted);
    let outcome = run_body(&def, inputs);
    let _ = clock::mark(&mut record, Event::ComputeEnded);

    match outcome {
        Ok(mut value) => {
            if let Some(store) = &shared.config.store {
                if let Err(e) = proxy::auto_proxy(std::iter::once(&mut value), &shared.config.policy, store) {
                    fail(&mut record, RESOLVE_ERROR, format!("could not store result: {e}"));
                    return record;
                }
            }
            let _ = record.set_success(value);
        }
        Err(f) => {
            let _ = record.set_failure(f);
        }
    }
    record
}

fn run_body(def: &TaskDefinition, inputs: TaskInputs) -> Result<Value, Failure> {
    let body = def.body.clone();
    let call = move || match catch_unwind(AssertUnwindSafe(|| body(inputs))) {
        Ok(Ok(v)) => Ok(v),
        Ok(Err(e)) => Err(Failure::new(TASK_ERROR, e.to_string())),
        Err(p) => Err(Failure::new(TASK_ERROR, panic_text(p.as_ref()))),
    };
    let Some(limit) = def.timeout else {
        return call();
    };
    let (tx, rx) = mpsc::channel();
    let spawned = thread::Builder::new()
        .name(format!("{}-body", def.method))
        .spawn(move || {
            let _ = tx.send(call());
        });
    if let Err(e) = spawned {
        return Err(Failure::new(TASK_ERROR, format!("cannot start body: {e}")));
    }
    match rx.recv_timeout(limit) {
        Ok(r) => r,
        Err(_) => Err(Failure::new(
            TIMEOUT,
            format!("exceeded {:.3} s", limit.as_secs_f64()),
        )),
    }
}

fn panic_text(p: &(dyn std::any::Any + Send)) -> String {
    let msg = p
        .downcast_ref::<&str>()
        .map(|s| s.to_string())
        .or_else(|| p.downcast_ref::<String>().cloned())
        .unwrap_or_default();
    format!("panic: {msg}")
}

/// Serializes (stamping `result_sent` afterwards) and publishes.
fn publish(shared: &Shared, mut record: TaskRecord) {
    let sw = Stopwatch::start();
    let inputs = wire::encode_inputs(&record.args, &record.kwargs);
    let result = wire::encode_result(record.result.as_ref());
    let (inputs, result) = match (inputs, result) {
        (Ok(i), Ok(r)) => (i, r),
        (Err(e), _) | (_, Err(e)) => {
            record.result = None;
            record.success = Some(false);
            record.failure = Some(Failure::new(ENCODE_ERROR, e.to_string()));
            let args = std::mem::take(&mut record.args);
            let kwargs = std::mem::take(&mut record.kwargs);
            let inputs = wire::encode_inputs(&args, &kwargs).unwrap_or_else(|_| {
                wire::encode_inputs(&[], &BTreeMap::new()).expect("empty inputs encode")
            });
            (inputs, serde_json::Value::Null)
        }
    };
    record.ser_metrics.result_serialize_ms = Some(sw.ms());
    let _ = clock::mark(&mut record, Event::ResultSent);
    let bytes = wire::encode_parts(&record, inputs, result);
    let topic = match Topic::new(record.topic.clone()) {
        Ok(t) => t,
        Err(e) => {
            log::error!("task {}: {e}", record.task_id);
            return;
        }
    };
    if let Err(e) = shared.broker.publish_result(&topic, bytes) {
        log::error!("task {}: result lost: {e}", record.task_id);
    }
}

/// Running server. Dropping it shuts down gracefully.
pub struct ServerHandle {
    shared: Arc<Shared>,
    pools: BTreeMap<String, Arc<Pool>>,
    stop: Arc<AtomicBool>,
    intake: Option<JoinHandle<()>>,
}

impl ServerHandle {
    /// Changes a pool's worker count. Shrinking takes effect as workers
    /// finish their current task.
    pub fn resize(&self, pool: &str, workers: usize) -> Result<(), ServerError> {
        let p = self
            .pools
            .get(pool)
            .ok_or_else(|| ServerError::UnknownPool(pool.into()))?;
        if workers == 0 {
            return Err(ServerError::EmptyPool(pool.into()));
        }
        let grow = {
            let mut st = p.state.lock().unwrap();
            st.target = workers;
            st.stats.workers = workers;
            let grow = workers.saturating_sub(st.live);
            st.live += grow;
            grow
        };
        p.wake.notify_all();
        p.spawn_workers(&self.shared, grow);
        Ok(())
    }

    pub fn stats(&self, pool: &str) -> Option<PoolStats> {
        self.pools.get(pool).map(|p| p.state.lock().unwrap().stats)
    }

    pub fn cache(&self, pool: &str) -> Option<&Arc<WorkerCache>> {
        self.pools.get(pool).map(|p| &p.cache)
    }

    /// Stops intake, then waits for queued and running tasks to publish.
    pub fn shutdown(mut self) {
        self.stop_and_join();
    }

    fn stop_and_join(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.intake.take() {
            let _ = h.join();
        }
        for p in self.pools.values() {
            p.state.lock().unwrap().draining = true;
            p.wake.notify_all();
        }
        for p in self.pools.values() {
            let handles = std::mem::take(&mut *p.handles.lock().unwrap());
            for h in handles {
                let _ = h.join();
            }
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop_and_join();
    }
}

/// Starts serving `topics` with the methods in `registry`.
pub fn serve(
    broker: Arc<dyn Broker>,
    registry: MethodRegistry,
    topics: &[Topic],
    config: ServerConfig,
) -> Result<ServerHandle, ServerError> {
    if topics.is_empty() {
        return Err(ServerError::NoTopics);
    }
    for t in topics {
        broker.register_topic(t)?;
    }
    let shared = Arc::new(Shared { broker, config });
    let mut pools = BTreeMap::new();
    for (name, workers) in &registry.pools {
        let pool = Arc::new(Pool {
            name: name.clone(),
            state: Mutex::new(PoolState {
                queue: VecDeque::new(),
                target: *workers,
                live: *workers,
                draining: false,
                stats: PoolStats {
                    workers: *workers,
                    ..PoolStats::default()
                },
            }),
            wake: Condvar::new(),
            cache: Arc::new(WorkerCache::new(shared.config.cache_entries)),
            handles: Mutex::new(Vec::new()),
        });
        pool.spawn_workers(&shared, *workers);
        pools.insert(name.clone(), pool);
    }

    let methods: BTreeMap<String, Arc<TaskDefinition>> = registry
        .methods
        .into_iter()
        .map(|(k, v)| (k, Arc::new(v)))
        .collect();
    let stop = Arc::new(AtomicBool::new(false));
    let intake = {
        let (shared, pools, stop, topics) = (shared.clone(), pools.clone(), stop.clone(), topics.to_vec());
        thread::Builder::new()
            .name("intake".into())
            .spawn(move || intake(&shared, &methods, &pools, &topics, &stop))
            .expect("failed to spawn intake")
    };
    Ok(ServerHandle {
        shared,
        pools,
        stop,
        intake: Some(intake),
    })
}

fn intake(
    shared: &Arc<Shared>,
    methods: &BTreeMap<String, Arc<TaskDefinition>>,
    pools: &BTreeMap<String, Arc<Pool>>,
    topics: &[Topic],
    stop: &AtomicBool,
) {
    while !stop.load(Ordering::SeqCst) {
        let (topic, bytes) = match shared.broker.consume_request(topics, shared.config.poll) {
            Ok(Some(m)) => m,
            Ok(None) => continue,
            Err(e) => {
                log::error!("intake: {e}");
                thread::sleep(shared.config.poll);
                continue;
            }
        };
        let arrived = clock::now();
        let sw = Stopwatch::start();
        let mut record = match wire::decode(&bytes) {
            Ok(r) => r,
            Err(e) => {
                let id = wire::peek_task_id(&bytes).unwrap_or_else(|| "unknown".into());
                let mut r = TaskRecord::new(TaskId(id), topic.as_str(), "", Vec::new());
                fail(&mut r, DECODE_ERROR, e.to_string());
                publish(shared, r);
                continue;
            }
        };
        record.ser_metrics.input_deserialize_ms = Some(sw.ms());
        let _ = clock::mark_at(&mut record, Event::RequestReceived, arrived);

        let Some(def) = methods.get(&record.method) else {
            let msg = format!("no task definition named `{}`", record.method);
            fail(&mut record, UNKNOWN_METHOD, msg);
            publish(shared, record);
            continue;
        };
        let pool = &pools[&def.pool];
        let prefetch = match &shared.config.store {
            Some(store) if shared.config.prefetch => {
                let refs = proxy::collect_refs(record.args.iter().chain(record.kwargs.values()));
                (!refs.is_empty()).then(|| proxy::prefetch(refs, store.clone(), pool.cache.clone()))
            }
            _ => None,
        };
        pool.state.lock().unwrap().queue.push_back(Job {
            record,
            def: def.clone(),
            prefetch,
        });
        pool.wake.notify_one();
    }
}
