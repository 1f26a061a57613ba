//! Policy runtime.
//!
//! A [`Thinker`] runs a set of agents concurrently over shared state:
//!
//! * loop agents run once, start to finish, on their own thread;
//! * result processors run once per result arriving on their topic, in
//!   arrival order;
//! * event responders run whenever a named flag has been raised since their
//!   last invocation. Raises that happen while a responder is busy coalesce
//!   into one further invocation.
//!
//! The done flag is raised automatically once every loop agent has returned,
//! or earlier by any agent. After that the runtime waits (up to a grace
//! period) for outstanding results, then stops.

mod resources;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

pub use resources::{AuditEntry, ResourceTracker};

use steer_core::{Event, ResourcesHint, TaskId, TaskRecord, Value};

use crate::broker::{Broker, BrokerError, Topic};
use crate::clock::{self, Stopwatch};
use crate::proxy::{self, ProxyError, ProxyPolicy, ValueStore};
use crate::wire::{self, EncodeError};

pub type BoxError = Box<dyn std::error::Error + Send + Sync>;
pub type AgentResult = Result<(), BoxError>;

pub const DEFAULT_GRACE: Duration = Duration::from_secs(5);

type LoopBody<S> = Box<dyn FnOnce(&Context<S>) -> AgentResult + Send>;
type ResultBody<S> = Box<dyn FnMut(&Context<S>, TaskRecord) -> AgentResult + Send>;
type EventBody<S> = Box<dyn FnMut(&Context<S>) -> AgentResult + Send>;

enum Body<S> {
    Loop(LoopBody<S>),
    Result(Topic, ResultBody<S>),
    Event(String, EventBody<S>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AgentKind {
    Loop,
    ResultProcessor(Topic),
    EventResponder(String),
}

impl AgentKind {
    pub fn label(&self) -> &'static str {
        match self {
            AgentKind::Loop => "loop",
            AgentKind::ResultProcessor(_) => "result_processor",
            AgentKind::EventResponder(_) => "event_responder",
        }
    }
}

pub struct AgentSpec<S> {
    name: String,
    body: Body<S>,
}

impl<S> AgentSpec<S> {
    pub fn looping(
        name: impl Into<String>,
        f: impl FnOnce(&Context<S>) -> AgentResult + Send + 'static,
    ) -> Self {
        AgentSpec {
            name: name.into(),
            body: Body::Loop(Box::new(f)),
        }
    }

    pub fn result_processor(
        name: impl Into<String>,
        topic: Topic,
        f: impl FnMut(&Context<S>, TaskRecord) -> AgentResult + Send + 'static,
    ) -> Self {
        AgentSpec {
            name: name.into(),
            body: Body::Result(topic, Box::new(f)),
        }
    }

    pub fn event_responder(
        name: impl Into<String>,
        flag: impl Into<String>,
        f: impl FnMut(&Context<S>) -> AgentResult + Send + 'static,
    ) -> Self {
        AgentSpec {
            name: name.into(),
            body: Body::Event(flag.into(), Box::new(f)),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kind(&self) -> AgentKind {
        match &self.body {
            Body::Loop(_) => AgentKind::Loop,
            Body::Result(t, _) => AgentKind::ResultProcessor(t.clone()),
            Body::Event(f, _) => AgentKind::EventResponder(f.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ThinkerError {
    #[error("agent `{0}` is already registered")]
    DuplicateAgent(String),
    #[error("topic `{topic}` already has result processor `{existing}`")]
    DuplicateProcessor { topic: String, existing: String },
    #[error("agents cannot be registered once the thinker has started")]
    AlreadyStarted,
    #[error("no agents registered")]
    NoAgents,
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

#[derive(Debug, thiserror::Error)]
pub enum SubmitError {
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error(transparent)]
    Proxy(#[from] ProxyError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
}

/// String-keyed map shared by all agents.
#[derive(Default)]
pub struct SharedMap(Mutex<BTreeMap<String, Value>>);

impl SharedMap {
    pub fn get(&self, key: &str) -> Option<Value> {
        self.0.lock().unwrap().get(key).cloned()
    }

    pub fn set(&self, key: impl Into<String>, value: Value) -> Option<Value> {
        self.0.lock().unwrap().insert(key.into(), value)
    }

    pub fn remove(&self, key: &str) -> Option<Value> {
        self.0.lock().unwrap().remove(key)
    }

    /// Read-modify-write under the map's lock.
    pub fn update<R>(&self, key: &str, f: impl FnOnce(&mut Option<Value>) -> R) -> R {
        let mut map = self.0.lock().unwrap();
        let mut slot = map.remove(key);
        let r = f(&mut slot);
        if let Some(v) = slot {
            map.insert(key.to_owned(), v);
        }
        r
    }
}

/// A task to submit, with optional keyword arguments and resource hint.
#[derive(Debug, Clone)]
pub struct TaskRequest {
    pub topic: Topic,
    pub method: String,
    pub args: Vec<Value>,
    pub kwargs: BTreeMap<String, Value>,
    pub resources_hint: Option<ResourcesHint>,
}

impl TaskRequest {
    pub fn new(topic: &Topic, method: impl Into<String>, args: Vec<Value>) -> Self {
        TaskRequest {
            topic: topic.clone(),
            method: method.into(),
            args,
            kwargs: BTreeMap::new(),
            resources_hint: None,
        }
    }

    pub fn kwarg(mut self, key: impl Into<String>, value: impl Into<Value>) -> Self {
        self.kwargs.insert(key.into(), value.into());
        self
    }

    pub fn hint(mut self, pool: impl Into<String>, nodes: u32) -> Self {
        self.resources_hint = Some(ResourcesHint {
            pool: pool.into(),
            nodes,
        });
        self
    }
}

#[derive(Default)]
struct Flags {
    generations: Mutex<HashMap<String, u64>>,
    raised: Condvar,
}

struct Inner<S> {
    broker: Arc<dyn Broker>,
    state: S,
    shared: SharedMap,
    resources: Option<Arc<ResourceTracker>>,
    store: Option<Arc<ValueStore>>,
    policy: ProxyPolicy,
    done: Mutex<bool>,
    done_cv: Condvar,
    flags: Flags,
    stopping: AtomicBool,
    in_flight: Mutex<u64>,
    in_flight_cv: Condvar,
    submitted: AtomicU64,
    received: AtomicU64,
}

/// Handle given to every agent invocation. Cheap to clone.
pub struct Context<S> {
    inner: Arc<Inner<S>>,
}

impl<S> Clone for Context<S> {
    fn clone(&self) -> Self {
        Context {
            inner: self.inner.clone(),
        }
    }
}

impl<S> Context<S> {
    pub fn state(&self) -> &S {
        &self.inner.state
    }

    pub fn shared(&self) -> &SharedMap {
        &self.inner.shared
    }

    pub fn broker(&self) -> &Arc<dyn Broker> {
        &self.inner.broker
    }

    /// The thinker's resource tracker; panics if none was configured.
    pub fn resources(&self) -> &ResourceTracker {
        self.inner
            .resources
            .as_deref()
            .expect("thinker was built without a resource tracker")
    }

    pub fn value_store(&self) -> Option<&Arc<ValueStore>> {
        self.inner.store.as_ref()
    }

    pub fn submit(&self, topic: &Topic, method: &str, args: Vec<Value>) -> Result<TaskId, SubmitError> {
        self.submit_request(TaskRequest::new(topic, method, args))
    }

    /// Stamps `created`, proxies large inputs, serializes, stamps
    /// `request_sent` and publishes.
    pub fn submit_request(&self, req: TaskRequest) -> Result<TaskId, SubmitError> {
        let id = TaskId(uuid::Uuid::new_v4().to_string());
        let mut record =
            TaskRecord::new(id.clone(), req.topic.as_str(), req.method, req.args).with_kwargs(req.kwargs);
        record.resources_hint = req.resources_hint;
        clock::mark(&mut record, Event::Created).expect("fresh record");
        let sw = Stopwatch::start();
        if let Some(store) = &self.inner.store {
            let TaskRecord { args, kwargs, .. } = &mut record;
            proxy::auto_proxy(args.iter_mut().chain(kwargs.values_mut()), &self.inner.policy, store)?;
        }
        let inputs = wire::encode_inputs(&record.args, &record.kwargs)?;
        record.ser_metrics.input_serialize_ms = Some(sw.ms());
        clock::mark(&mut record, Event::RequestSent).expect("created precedes request_sent");
        let bytes = wire::encode_parts(&record, inputs, serde_json::Value::Null);
        *self.inner.in_flight.lock().unwrap() += 1;
        if let Err(e) = self.inner.broker.publish_request(&req.topic, bytes) {
            self.finish_one();
            return Err(e.into());
        }
        self.inner.submitted.fetch_add(1, Ordering::SeqCst);
        Ok(id)
    }

    fn finish_one(&self) {
        let mut n = self.inner.in_flight.lock().unwrap();
        *n = n.saturating_sub(1);
        drop(n);
        self.inner.in_flight_cv.notify_all();
    }

    /// Tasks submitted whose results have not yet been received.
    pub fn in_flight(&self) -> u64 {
        *self.inner.in_flight.lock().unwrap()
    }

    pub fn submitted(&self) -> u64 {
        self.inner.submitted.load(Ordering::SeqCst)
    }

    /// Replaces nested proxies in `value` by their stored values.
    pub fn resolve(&self, value: &mut Value) -> Result<(), ProxyError> {
        match &self.inner.store {
            Some(s) => proxy::resolve_in_place(value, s, None),
            None if value.contains_proxy() => Err(ProxyError::Store(BrokerError::Protocol(
                "result holds a proxy but the thinker has no value store".into(),
            ))),
            None => Ok(()),
        }
    }

    pub fn set_done(&self) {
        *self.inner.done.lock().unwrap() = true;
        self.inner.done_cv.notify_all();
    }

    pub fn is_done(&self) -> bool {
        *self.inner.done.lock().unwrap()
    }

    /// Blocks until done or `timeout`; returns whether done is set.
    pub fn wait_done(&self, timeout: Duration) -> bool {
        let g = self.inner.done.lock().unwrap();
        let (g, _) = self
            .inner
            .done_cv
            .wait_timeout_while(g, timeout, |d| !*d)
            .unwrap();
        *g
    }

    /// Raises `flag`, waking the responders listening on it.
    pub fn set_flag(&self, flag: &str) {
        *self
            .inner
            .flags
            .generations
            .lock()
            .unwrap()
            .entry(flag.to_owned())
            .or_default() += 1;
        self.inner.flags.raised.notify_all();
    }

    pub fn flag_raised(&self, flag: &str) -> bool {
        self.inner.flags.generations.lock().unwrap().get(flag).is_some_and(|&g| g > 0)
    }

    /// Acquires from the tracker, retrying until granted or done is set.
    pub fn acquire_or_done(&self, pool: &str, n: u64) -> Result<bool, steer_core::LedgerError> {
        while !self.is_done() {
            if self.resources().acquire(pool, n, Some(Duration::from_millis(20)))? {
                return Ok(true);
            }
        }
        Ok(false)
    }
}

/// Per-agent outcome of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentReport {
    pub name: String,
    pub kind: AgentKind,
    pub invocations: u64,
    pub failures: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub agents: Vec<AgentReport>,
    pub submitted: u64,
    pub results_received: u64,
    /// Results that arrived on a topic without a processor.
    pub dropped_results: u64,
    /// Results that could not be decoded.
    pub undecodable_results: u64,
    /// Tasks still outstanding when the grace period ran out.
    pub abandoned: u64,
    pub elapsed: Duration,
}

impl RunReport {
    pub fn agent(&self, name: &str) -> Option<&AgentReport> {
        self.agents.iter().find(|a| a.name == name)
    }

    pub fn failure_count(&self) -> usize {
        self.agents.iter().map(|a| a.failures.len()).sum()
    }
}

#[derive(Default)]
struct Tally {
    invocations: AtomicU64,
    failures: Mutex<Vec<String>>,
}

impl Tally {
    fn invoke(&self, name: &str, f: impl FnOnce() -> AgentResult) {
        self.invocations.fetch_add(1, Ordering::SeqCst);
        let msg = match catch_unwind(AssertUnwindSafe(f)) {
            Ok(Ok(())) => return,
            Ok(Err(e)) => e.to_string(),
            Err(panic) => panic_message(panic.as_ref()),
        };
        log::warn!("agent {name} failed: {msg}");
        self.failures.lock().unwrap().push(msg);
    }
}

fn panic_message(p: &(dyn std::any::Any + Send)) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        format!("panic: {s}")
    } else if let Some(s) = p.downcast_ref::<String>() {
        format!("panic: {s}")
    } else {
        "panic".into()
    }
}

pub struct Thinker<S> {
    broker: Arc<dyn Broker>,
    topics: Vec<Topic>,
    agents: Vec<AgentSpec<S>>,
    state: Option<S>,
    resources: Option<Arc<ResourceTracker>>,
    store: Option<Arc<ValueStore>>,
    policy: ProxyPolicy,
    grace: Duration,
    poll: Duration,
    started: bool,
    context: Option<Context<S>>,
}

impl<S: Send + Sync + 'static> Thinker<S> {
    /// `topics` are the topics this thinker submits to; results arriving on
    /// one without a processor are counted and dropped.
    pub fn new(broker: Arc<dyn Broker>, topics: &[Topic], state: S) -> Self {
        Thinker {
            broker,
            topics: topics.to_vec(),
            agents: Vec::new(),
            state: Some(state),
            resources: None,
            store: None,
            policy: ProxyPolicy::disabled(),
            grace: DEFAULT_GRACE,
            poll: Duration::from_millis(20),
            started: false,
            context: None,
        }
    }

    pub fn with_resources(mut self, tracker: Arc<ResourceTracker>) -> Self {
        self.resources = Some(tracker);
        self
    }

    /// Inputs larger than the policy threshold are passed by reference.
    pub fn with_value_store(mut self, store: Arc<ValueStore>, policy: ProxyPolicy) -> Self {
        self.store = Some(store);
        self.policy = policy;
        self
    }

    pub fn with_grace(mut self, grace: Duration) -> Self {
        self.grace = grace;
        self
    }

    /// How often idle result listeners check for shutdown.
    pub fn with_poll_interval(mut self, poll: Duration) -> Self {
        self.poll = poll;
        self
    }

    pub fn register(&mut self, spec: AgentSpec<S>) -> Result<(), ThinkerError> {
        if self.started {
            return Err(ThinkerError::AlreadyStarted);
        }
        if self.agents.iter().any(|a| a.name == spec.name) {
            return Err(ThinkerError::DuplicateAgent(spec.name));
        }
        if let Body::Result(t, _) = &spec.body {
            if let Some(a) = self
                .agents
                .iter()
                .find(|a| matches!(&a.body, Body::Result(u, _) if u == t))
            {
                return Err(ThinkerError::DuplicateProcessor {
                    topic: t.to_string(),
                    existing: a.name.clone(),
                });
            }
        }
        self.agents.push(spec);
        Ok(())
    }

    pub fn agents(&self) -> Vec<(String, AgentKind)> {
        self.agents.iter().map(|a| (a.name.clone(), a.kind())).collect()
    }

    /// Shared state after (or during setup before) a run.
    pub fn state(&self) -> &S {
        match &self.context {
            Some(c) => c.state(),
            None => self.state.as_ref().expect("state present before run"),
        }
    }

    pub fn context(&self) -> Option<&Context<S>> {
        self.context.as_ref()
    }

    /// Runs every agent and returns once done is set, loop agents have
    /// returned, and outstanding results have drained or the grace period
    /// expired.
    pub fn run(&mut self) -> Result<RunReport, ThinkerError> {
        if self.started {
            return Err(ThinkerError::AlreadyStarted);
        }
        if self.agents.is_empty() {
            return Err(ThinkerError::NoAgents);
        }
        self.started = true;
        let start = Instant::now();
        let specs = std::mem::take(&mut self.agents);

        let mut topics: BTreeSet<Topic> = self.topics.iter().cloned().collect();
        topics.extend(specs.iter().filter_map(|s| match &s.body {
            Body::Result(t, _) => Some(t.clone()),
            _ => None,
        }));
        for t in &topics {
            self.broker.register_topic(t)?;
        }

        let ctx = Context {
            inner: Arc::new(Inner {
                broker: self.broker.clone(),
                state: self.state.take().expect("state present before run"),
                shared: SharedMap::default(),
                resources: self.resources.clone(),
                store: self.store.clone(),
                policy: self.policy,
                done: Mutex::new(false),
                done_cv: Condvar::new(),
                flags: Flags::default(),
                stopping: AtomicBool::new(false),
                in_flight: Mutex::new(0),
                in_flight_cv: Condvar::new(),
                submitted: AtomicU64::new(0),
                received: AtomicU64::new(0),
            }),
        };
        self.context = Some(ctx.clone());

        let mut meta = Vec::new();
        let mut processors: HashMap<Topic, (String, Arc<Tally>, ResultBody<S>)> = HashMap::new();
        let mut loops = Vec::new();
        let mut responders = Vec::new();
        for spec in specs {
            let tally = Arc::new(Tally::default());
            meta.push((spec.name.clone(), spec.kind(), tally.clone()));
            match spec.body {
                Body::Loop(f) => loops.push((spec.name, tally, f)),
                Body::Result(t, f) => {
                    processors.insert(t, (spec.name, tally, f));
                }
                Body::Event(flag, f) => responders.push((spec.name, flag, tally, f)),
            }
        }

        let dropped = Arc::new(AtomicU64::new(0));
        let undecodable = Arc::new(AtomicU64::new(0));
        let mut listeners = Vec::new();
        for topic in topics {
            let processor = processors.remove(&topic);
            let (ctx, dropped, undecodable) = (ctx.clone(), dropped.clone(), undecodable.clone());
            let poll = self.poll;
            listeners.push(spawn(format!("results-{topic}"), move || {
                listen(ctx, topic, processor, poll, &dropped, &undecodable)
            }));
        }

        let mut background = Vec::new();
        for (name, flag, tally, mut f) in responders {
            let ctx = ctx.clone();
            background.push(spawn(format!("agent-{name}"), move || {
                let mut seen = 0;
                loop {
                    let mut gens = ctx.inner.flags.generations.lock().unwrap();
                    loop {
                        if ctx.inner.stopping.load(Ordering::SeqCst) {
                            return;
                        }
                        let g = gens.get(&flag).copied().unwrap_or(0);
                        if g > seen {
                            seen = g;
                            break;
                        }
                        gens = ctx.inner.flags.raised.wait(gens).unwrap();
                    }
                    drop(gens);
                    tally.invoke(&name, || f(&ctx));
                }
            }));
        }

        let remaining = Arc::new(AtomicU64::new(loops.len() as u64));
        let mut loop_handles = Vec::new();
        for (name, tally, f) in loops {
            let (ctx, remaining) = (ctx.clone(), remaining.clone());
            loop_handles.push(spawn(format!("agent-{name}"), move || {
                tally.invoke(&name, || f(&ctx));
                if remaining.fetch_sub(1, Ordering::SeqCst) == 1 {
                    ctx.set_done();
                }
            }));
        }

        {
            let g = ctx.inner.done.lock().unwrap();
            drop(ctx.inner.done_cv.wait_while(g, |d| !*d).unwrap());
        }
        for h in loop_handles {
            let _ = h.join();
        }
        let abandoned = {
            let g = ctx.inner.in_flight.lock().unwrap();
            let (g, _) = ctx
                .inner
                .in_flight_cv
                .wait_timeout_while(g, self.grace, |n| *n > 0)
                .unwrap();
            *g
        };
        if abandoned > 0 {
            log::warn!("{abandoned} task(s) still outstanding after the grace period");
        }
        ctx.inner.stopping.store(true, Ordering::SeqCst);
        {
            let _g = ctx.inner.flags.generations.lock().unwrap();
            ctx.inner.flags.raised.notify_all();
        }
        for h in listeners.into_iter().chain(background) {
            let _ = h.join();
        }

        Ok(RunReport {
            agents: meta
                .into_iter()
                .map(|(name, kind, t)| AgentReport {
                    name,
                    kind,
                    invocations: t.invocations.load(Ordering::SeqCst),
                    failures: t.failures.lock().unwrap().clone(),
                })
                .collect(),
            submitted: ctx.submitted(),
            results_received: ctx.inner.received.load(Ordering::SeqCst),
            dropped_results: dropped.load(Ordering::SeqCst),
            undecodable_results: undecodable.load(Ordering::SeqCst),
            abandoned,
            elapsed: start.elapsed(),
        })
    }
}

fn spawn(name: String, f: impl FnOnce() + Send + 'static) -> JoinHandle<()> {
    thread::Builder::new()
        .name(name)
        .spawn(f)
        .expect("failed to spawn thread")
}

fn listen<S>(
    ctx: Context<S>,
    topic: Topic,
    mut processor: Option<(String, Arc<Tally>, ResultBody<S>)>,
    poll: Duration,
    dropped: &AtomicU64,
    undecodable: &AtomicU64,
) {
    while !ctx.inner.stopping.load(Ordering::SeqCst) {
        let bytes = match ctx.inner.broker.consume_result(&topic, poll) {
            Ok(Some(b)) => b,
            Ok(None) => continue,
            Err(e) => {
                log::error!("result queue {topic}: {e}");
                thread::sleep(poll);
                continue;
            }
        };
        let arrived = clock::now();
        let sw = Stopwatch::start();
        let decoded = wire::decode(&bytes);
        ctx.inner.received.fetch_add(1, Ordering::SeqCst);
        ctx.finish_one();
        let mut record = match decoded {
            Ok(r) => r,
            Err(e) => {
                log::error!("undecodable result on {topic}: {e}");
                undecodable.fetch_add(1, Ordering::SeqCst);
                continue;
            }
        };
        record.ser_metrics.result_deserialize_ms = Some(sw.ms());
        if let Err(e) = clock::mark_at(&mut record, Event::ResultReceived, arrived) {
            log::warn!("task {}: {e}", record.task_id);
        }
        match &mut processor {
            Some((name, tally, f)) => tally.invoke(name, || f(&ctx, record)),
            None => {
                log::info!("dropping result {} on {topic}: no processor", record.task_id);
                dropped.fetch_add(1, Ordering::SeqCst);
            }
        }
    }
}
