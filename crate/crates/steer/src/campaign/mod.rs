//! Active-learning campaign runtime.
//!
//! Seven agents steer a budget of expensive assays over a fixed space:
//!
//! - QC-Scorer picks the next entity (random at first, then the queue head)
//!   whenever a simulation slot is free.
//! - QC-Recorder appends each assay result to the record.
//! - Trainer submits a training task each time the record reaches the next
//!   retrain threshold.
//! - Updater installs a returned model and raises `model_updated`.
//! - ML-Scorer submits prediction tasks for every unassayed entity.
//! - ML-Recorder ranks the predictions by UCB and swaps the queue.
//! - Allocator lends idle ML slots to the simulation pool and takes them
//!   back when model work is pending.
//!
//! Slots are counted by a [`ResourceTracker`]; the task server pools are
//! sized for the most a pool can hold after lending.

pub mod io;
pub mod tasks;

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer_core::campaign::{
    record_score, ucb_score, AssayResultEntry, CampaignConfig, CampaignConfigError, CampaignRecord,
    EntityId, MoleculeQueue, Policy, RecordScore, RetrainSchedule, Space, SurrogateEnsemble,
};
use steer_core::stats::Window;
use steer_core::{Event, LedgerError, Stamp, TaskRecord, Value};

use crate::broker::{Broker, BrokerError, MemoryBroker, Topic};
use crate::clock;
use crate::taskserver::{serve, ServerConfig, ServerError};
use crate::thinker::{AgentResult, AgentSpec, Context, ResourceTracker, TaskRequest, Thinker, ThinkerError};
use tasks::{ML_POOL, SIM_POOL};

pub const SIMULATE: &str = "simulate";
pub const TRAIN: &str = "train";
pub const INFER: &str = "infer";

const MODEL_UPDATED: &str = "model_updated";
const ALLOCATE: &str = "allocate";
const WAIT: Duration = Duration::from_millis(20);

#[derive(Debug, thiserror::Error)]
pub enum CampaignError {
    #[error(transparent)]
    Config(#[from] CampaignConfigError),
    #[error("budget {budget} exceeds the {space} entities in the space")]
    BudgetExceedsSpace { budget: usize, space: usize },
    #[error(transparent)]
    Thinker(#[from] ThinkerError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error(transparent)]
    Broker(#[from] BrokerError),
    #[error(transparent)]
    Tracker(#[from] LedgerError),
    #[error("agent {agent} failed: {message}")]
    Agent { agent: String, message: String },
    #[error("only {completed} of {budget} assays completed")]
    Incomplete { completed: usize, budget: usize },
}

/// Why an entity was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SelectionSource {
    /// Part of the random initial batch.
    Initial,
    /// The random policy.
    Random,
    /// Head of the model-ranked queue.
    Queue,
    /// Random because no model was available or coming.
    Fallback,
}

impl SelectionSource {
    pub fn name(self) -> &'static str {
        match self {
            SelectionSource::Initial => "initial",
            SelectionSource::Random => "random",
            SelectionSource::Queue => "queue",
            SelectionSource::Fallback => "fallback",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Selection {
    pub entity: EntityId,
    pub source: SelectionSource,
}

/// Record score after each assay result.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesPoint {
    pub wall_ms: f64,
    pub assays_done: usize,
    pub best: Option<f64>,
    pub count_above: usize,
    pub cost: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReorderEvent {
    pub wall_ms: f64,
    pub version: u64,
    /// Which training produced the ranking (0-based).
    pub training: usize,
    pub assays_done: usize,
    pub queue_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FallbackEvent {
    pub wall_ms: f64,
    pub assays_done: usize,
    pub reason: &'static str,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CampaignReport {
    pub policy: Policy,
    pub config: CampaignConfig,
    /// Discovery threshold: the space's top-1% value. Never shown to agents.
    pub threshold: f64,
    pub record: CampaignRecord,
    pub score: RecordScore,
    /// In submission order.
    pub selections: Vec<Selection>,
    pub series: Vec<SeriesPoint>,
    pub reorders: Vec<ReorderEvent>,
    pub fallbacks: Vec<FallbackEvent>,
    pub assays_submitted: usize,
    pub trainings: usize,
    pub training_failures: usize,
    pub predict_tasks: usize,
    /// Tasks the server reported as failed (not failed assays).
    pub task_failures: usize,
    pub queue_checks: usize,
    /// Checks that found the queue unsorted or holding an assayed entity.
    pub queue_violations: usize,
    /// Busy time over allocated slot time, per pool.
    pub utilization: BTreeMap<String, f64>,
    pub wall_time: Duration,
}

impl CampaignReport {
    /// Entities measured above the threshold, in completion order.
    pub fn discoveries(&self) -> Vec<EntityId> {
        self.record
            .successes()
            .filter(|(_, v)| *v > self.threshold)
            .map(|(id, _)| id)
            .collect()
    }
}

struct Scoring {
    generation: u64,
    training: usize,
    expected: usize,
    received: usize,
    failed: bool,
    ids: Vec<EntityId>,
    preds: Vec<(f64, f64)>,
}

struct State {
    record: CampaignRecord,
    queue: MoleculeQueue,
    attempted: Vec<bool>,
    selections: Vec<Selection>,
    /// Assays submitted without a result yet.
    outstanding: usize,
    rng: ChaCha8Rng,
    trainings: usize,
    training_failures: usize,
    /// Training and prediction tasks without a result yet.
    ml_outstanding: usize,
    installed: Option<(usize, Arc<SurrogateEnsemble>)>,
    installed_gen: u64,
    scored_gen: u64,
    scoring: Option<Scoring>,
    predict_tasks: usize,
    task_failures: usize,
    /// ML slots currently lent to the simulation pool.
    lent: u64,
    reclaiming: bool,
    series: Vec<SeriesPoint>,
    reorders: Vec<ReorderEvent>,
    fallbacks: Vec<FallbackEvent>,
    busy: Vec<(&'static str, Stamp, Stamp)>,
    /// `(since, sim slots, ml slots)`.
    capacity: Vec<(Stamp, u64, u64)>,
    finished_at: Option<Stamp>,
    queue_checks: usize,
    queue_violations: usize,
}

struct Campaign {
    config: CampaignConfig,
    policy: Policy,
    schedule: RetrainSchedule,
    entities: usize,
    threshold: f64,
    simulate: Topic,
    train: Topic,
    infer: Topic,
    start: Instant,
    st: Mutex<State>,
    cv: Condvar,
}

/// SplitMix64 finalizer over `(seed, stream, i)`.
fn mix(seed: u64, stream: u64, i: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03) ^ i.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// UCB-ranked queue entries for `ids`, leaving out entities already chosen.
pub fn rank(ids: &[EntityId], preds: &[(f64, f64)], kappa: f64, attempted: impl Fn(EntityId) -> bool) -> Vec<(EntityId, f64)> {
    ids.iter()
        .zip(preds)
        .filter(|(id, _)| !attempted(**id))
        .map(|(id, (m, s))| (*id, ucb_score(*m, *s, kappa)))
        .collect()
}

impl Campaign {
    fn lock(&self) -> MutexGuard<'_, State> {
        self.st.lock().unwrap()
    }

    fn wait<'a>(&self, g: MutexGuard<'a, State>, d: Duration) -> MutexGuard<'a, State> {
        self.cv.wait_timeout(g, d).unwrap().0
    }

    fn wall_ms(&self) -> f64 {
        self.start.elapsed().as_secs_f64() * 1e3
    }

    fn due(&self, st: &State) -> usize {
        self.schedule.trainings_due(st.record.success_count())
    }

    fn ml_busy(&self, st: &State) -> bool {
        self.due(st) > st.trainings || st.ml_outstanding > 0 || st.scored_gen != st.installed_gen
    }

    /// Whether waiting on an empty queue will be rewarded with a ranking.
    fn model_coming(&self, st: &State) -> bool {
        if self.ml_busy(st) {
            return true;
        }
        let reachable = st.record.success_count() + st.outstanding;
        self.schedule.threshold(st.trainings).is_some_and(|t| reachable >= t)
    }

    fn check_queue(&self, st: &mut State) {
        st.queue_checks += 1;
        let stale = st.queue.entries().iter().any(|(id, _)| st.attempted[id.index()]);
        if stale || !st.queue.is_sorted() {
            log::error!("queue invariant broken at version {}", st.queue.version());
            st.queue_violations += 1;
        }
    }

    fn random_pick(&self, st: &mut State) -> EntityId {
        loop {
            let i = st.rng.random_range(0..self.entities);
            if !st.attempted[i] {
                return EntityId(i as u32);
            }
        }
    }

    /// `None` means wait for the next ranking.
    fn choose(&self, st: &mut State) -> Option<Selection> {
        let made = st.selections.len();
        let random = |st: &mut State, source| {
            let entity = self.random_pick(st);
            st.queue.remove(entity);
            Some(Selection { entity, source })
        };
        if !self.policy.uses_model() {
            return random(st, SelectionSource::Random);
        }
        if made < self.schedule.initial {
            return random(st, SelectionSource::Initial);
        }
        if let Some((entity, _)) = st.queue.pop_head() {
            self.check_queue(st);
            return Some(Selection {
                entity,
                source: SelectionSource::Queue,
            });
        }
        if self.model_coming(st) {
            return None;
        }
        let reason = if st.installed.is_some() {
            "queue exhausted"
        } else if st.training_failures > 0 {
            "training failed"
        } else {
            "too few successful results to train"
        };
        st.fallbacks.push(FallbackEvent {
            wall_ms: self.wall_ms(),
            assays_done: st.record.len(),
            reason,
        });
        random(st, SelectionSource::Fallback)
    }

    fn note_capacity(&self, st: &mut State, tracker: &ResourceTracker) {
        let sim = tracker.allocated(SIM_POOL).unwrap_or(0);
        let ml = tracker.allocated(ML_POOL).unwrap_or(0);
        st.capacity.push((clock::now(), sim, ml));
    }

    fn acquire_sim(&self, ctx: &Context<Campaign>, nodes: u64) -> Result<bool, LedgerError> {
        loop {
            if ctx.is_done() {
                return Ok(false);
            }
            let st = self.lock();
            if st.reclaiming {
                drop(self.wait(st, Duration::from_millis(5)));
                continue;
            }
            drop(st);
            if ctx.resources().acquire(SIM_POOL, nodes, Some(WAIT))? {
                return Ok(true);
            }
        }
    }

    fn qc_scorer(&self, ctx: &Context<Campaign>) -> AgentResult {
        let nodes = self.config.nodes_per_assay as u64;
        loop {
            {
                let mut st = self.lock();
                loop {
                    if ctx.is_done() || st.selections.len() >= self.config.budget {
                        return Ok(());
                    }
                    let settled = st.outstanding == 0 && !self.ml_busy(&st);
                    if !st.reclaiming && (!self.config.synchronous || settled) {
                        break;
                    }
                    st = self.wait(st, WAIT);
                }
            }
            if !self.acquire_sim(ctx, nodes)? {
                return Ok(());
            }
            let mut st = self.lock();
            let Some(sel) = self.choose(&mut st) else {
                drop(self.wait(st, WAIT));
                ctx.resources().release(SIM_POOL, nodes)?;
                continue;
            };
            let order = st.selections.len() as u64;
            st.attempted[sel.entity.index()] = true;
            st.selections.push(sel);
            st.outstanding += 1;
            drop(st);
            let req = TaskRequest::new(&self.simulate, tasks::ASSAY, vec![Value::Int(sel.entity.0 as i64)])
                .kwarg("draw_seed", mix(self.config.seed, 1, order) as i64)
                .hint(SIM_POOL, self.config.nodes_per_assay);
            ctx.submit_request(req)?;
        }
    }

    fn qc_recorder(&self, ctx: &Context<Campaign>, r: TaskRecord) -> AgentResult {
        let nodes = self.config.nodes_per_assay as u64;
        ctx.resources().release(SIM_POOL, nodes)?;
        let decoded = match (r.success, &r.result) {
            (Some(true), Some(v)) => tasks::entry_from_value(v).ok(),
            _ => None,
        };
        let mut st = self.lock();
        let entry = match decoded {
            Some(e) => e,
            None => {
                log::warn!("assay task {} failed: {:?}", r.task_id, r.failure);
                st.task_failures += 1;
                let entity = r.args.first().and_then(Value::as_i64).unwrap_or(0) as u32;
                AssayResultEntry {
                    entity_id: EntityId(entity),
                    assay: steer_core::campaign::assay::ASSAY_NAME.into(),
                    property: steer_core::campaign::assay::PROPERTY_NAME.into(),
                    value: None,
                    cost: self.config.assay_duration_s * nodes as f64,
                }
            }
        };
        st.outstanding = st.outstanding.saturating_sub(1);
        st.record.push(entry);
        push_busy(&mut st, SIM_POOL, &r);
        let score = record_score(&st.record, self.threshold);
        let point = SeriesPoint {
            wall_ms: self.wall_ms(),
            assays_done: st.record.len(),
            best: score.best,
            count_above: score.count_above,
            cost: score.cost,
        };
        st.series.push(point);
        let finished = st.record.len() >= self.config.budget;
        if finished {
            st.finished_at = Some(clock::now());
        }
        drop(st);
        self.cv.notify_all();
        if finished {
            ctx.set_done();
        }
        Ok(())
    }

    fn trainer(&self, ctx: &Context<Campaign>) -> AgentResult {
        loop {
            let (k, ids, ys) = {
                let mut st = self.lock();
                // checked before `done`, so trainings due at the end still go out
                while self.due(&st) <= st.trainings {
                    if ctx.is_done() {
                        return Ok(());
                    }
                    st = self.wait(st, WAIT);
                }
                let k = st.trainings;
                st.trainings += 1;
                st.ml_outstanding += 1;
                let (ids, ys): (Vec<_>, Vec<_>) = st.record.successes().unzip();
                (k, ids, ys)
            };
            ctx.set_flag(ALLOCATE);
            let held = ctx.acquire_or_done(ML_POOL, 1)?;
            let req = TaskRequest::new(&self.train, tasks::TRAIN, vec![tasks::ids_value(&ids), tasks::floats_value(&ys)])
                .kwarg("seed", mix(self.config.seed, 2, k as u64) as i64)
                .kwarg("training", k as i64)
                .kwarg("held", held);
            ctx.submit_request(req)?;
        }
    }

    fn updater(&self, ctx: &Context<Campaign>, r: TaskRecord) -> AgentResult {
        release_held(ctx, &r)?;
        let k = r.kwargs.get("training").and_then(Value::as_i64).unwrap_or(0) as usize;
        let model = match (r.success, &r.result) {
            (Some(true), Some(v)) => tasks::ensemble_from_value(v).map_err(|e| e.to_string()),
            _ => Err(r.failure.as_ref().map_or_else(String::new, |f| f.message.clone())),
        };
        let mut st = self.lock();
        st.ml_outstanding = st.ml_outstanding.saturating_sub(1);
        push_busy(&mut st, ML_POOL, &r);
        let mut installed = false;
        match model {
            Ok(m) if !ctx.is_done() => {
                if st.installed.as_ref().is_none_or(|(j, _)| *j < k) {
                    st.installed = Some((k, Arc::new(m)));
                    st.installed_gen += 1;
                    installed = true;
                }
            }
            Ok(_) => {}
            Err(msg) => {
                log::warn!("training {k} failed: {msg}");
                st.training_failures += 1;
            }
        }
        drop(st);
        self.cv.notify_all();
        if installed {
            ctx.set_flag(MODEL_UPDATED);
        }
        ctx.set_flag(ALLOCATE);
        Ok(())
    }

    fn ml_scorer(&self, ctx: &Context<Campaign>) -> AgentResult {
        let (generation, model, ids) = {
            let mut st = self.lock();
            let Some((k, model)) = st.installed.clone() else {
                return Ok(());
            };
            if ctx.is_done() || st.scored_gen == st.installed_gen {
                return Ok(());
            }
            let ids: Vec<EntityId> = (0..self.entities as u32)
                .map(EntityId)
                .filter(|id| !st.attempted[id.index()])
                .collect();
            let batches = ids.len().div_ceil(self.config.predict_batch);
            let generation = st.installed_gen;
            st.scored_gen = generation;
            st.ml_outstanding += batches;
            st.scoring = Some(Scoring {
                generation,
                training: k,
                expected: batches,
                received: 0,
                failed: false,
                ids: Vec::with_capacity(ids.len()),
                preds: Vec::with_capacity(ids.len()),
            });
            (generation, model, ids)
        };
        let mv = tasks::ensemble_to_value(&model);
        for batch in ids.chunks(self.config.predict_batch) {
            if !ctx.acquire_or_done(ML_POOL, 1)? {
                return Ok(());
            }
            let req = TaskRequest::new(&self.infer, tasks::PREDICT, vec![mv.clone(), tasks::ids_value(batch)])
                .kwarg("generation", generation as i64)
                .kwarg("held", true);
            ctx.submit_request(req)?;
            self.lock().predict_tasks += 1;
        }
        Ok(())
    }

    fn ml_recorder(&self, ctx: &Context<Campaign>, r: TaskRecord) -> AgentResult {
        release_held(ctx, &r)?;
        let generation = r.kwargs.get("generation").and_then(Value::as_i64).unwrap_or(-1) as u64;
        let parsed = match (r.success, &r.result, r.args.get(1)) {
            (Some(true), Some(v), Some(ids)) => tasks::predictions_from_value(v)
                .and_then(|p| Ok((tasks::ids_arg(ids)?, p)))
                .ok(),
            _ => None,
        };
        let mut st = self.lock();
        st.ml_outstanding = st.ml_outstanding.saturating_sub(1);
        push_busy(&mut st, ML_POOL, &r);
        let mut complete = None;
        if let Some(sc) = st.scoring.as_mut().filter(|s| s.generation == generation) {
            match parsed {
                Some((ids, preds)) if ids.len() == preds.len() => {
                    sc.ids.extend(ids);
                    sc.preds.extend(preds);
                }
                _ => {
                    log::warn!("prediction task {} failed: {:?}", r.task_id, r.failure);
                    sc.failed = true;
                }
            }
            sc.received += 1;
            if sc.received == sc.expected {
                complete = st.scoring.take();
            }
        }
        if let Some(sc) = complete.filter(|sc| !sc.failed) {
            let entries = rank(&sc.ids, &sc.preds, self.config.ucb_kappa, |id| st.attempted[id.index()]);
            st.queue.replace(entries);
            self.check_queue(&mut st);
            let ev = ReorderEvent {
                wall_ms: self.wall_ms(),
                version: st.queue.version(),
                training: sc.training,
                assays_done: st.record.len(),
                queue_len: st.queue.len(),
            };
            st.reorders.push(ev);
        }
        drop(st);
        self.cv.notify_all();
        ctx.set_flag(ALLOCATE);
        Ok(())
    }

    /// Lends every free ML slot to simulation while no model work is
    /// pending, and reclaims the loan as soon as some is.
    fn allocator(&self, ctx: &Context<Campaign>) -> AgentResult {
        let tracker = ctx.resources();
        let mut st = self.lock();
        if ctx.is_done() {
            return Ok(());
        }
        let busy = self.ml_busy(&st);
        if busy && st.lent > 0 {
            let lent = st.lent;
            st.reclaiming = true;
            drop(st);
            let mut back = false;
            while !back && !ctx.is_done() {
                back = tracker.reallocate(SIM_POOL, ML_POOL, lent, Some(WAIT))?;
            }
            let mut st = self.lock();
            st.reclaiming = false;
            if back {
                st.lent = 0;
                self.note_capacity(&mut st, tracker);
            }
        } else if !busy && st.lent == 0 {
            let n = tracker.available(ML_POOL)?;
            if n > 0 && tracker.reallocate(ML_POOL, SIM_POOL, n, Some(Duration::ZERO))? {
                st.lent = n;
                self.note_capacity(&mut st, tracker);
            }
        } else {
            return Ok(());
        }
        self.cv.notify_all();
        Ok(())
    }
}

fn release_held(ctx: &Context<Campaign>, r: &TaskRecord) -> Result<(), LedgerError> {
    if r.kwargs.get("held") == Some(&Value::Bool(true)) {
        ctx.resources().release(ML_POOL, 1)?;
    }
    Ok(())
}

fn push_busy(st: &mut State, pool: &'static str, r: &TaskRecord) {
    if let (Some(a), Some(b)) = (
        r.timestamps.get(Event::ComputeStarted),
        r.timestamps.get(Event::ComputeEnded),
    ) {
        st.busy.push((pool, a, b));
    }
}

/// Busy time over allocated slot time inside `window`.
fn pool_utilization(st: &State, pool: &str, window: Window) -> f64 {
    let mut slot_ns = 0.0;
    for (i, &(since, sim, ml)) in st.capacity.iter().enumerate() {
        let until = st.capacity.get(i + 1).map_or(window.end, |c| c.0);
        let slots = if pool == SIM_POOL { sim } else { ml };
        slot_ns += slots as f64 * window.overlap_nanos(since, until) as f64;
    }
    let busy: i64 = st
        .busy
        .iter()
        .filter(|(p, ..)| *p == pool)
        .map(|(_, a, b)| window.overlap_nanos(*a, *b))
        .sum();
    if slot_ns > 0.0 {
        busy as f64 / slot_ns
    } else {
        0.0
    }
}

/// Runs a campaign with an in-process broker and task server.
pub fn run_campaign(space: &Space, config: &CampaignConfig, policy: Policy) -> Result<CampaignReport, CampaignError> {
    run_campaign_on(Arc::new(MemoryBroker::new()), space, config, policy)
}

/// Same, over `broker`. The task server runs in this process either way.
pub fn run_campaign_on(
    broker: Arc<dyn Broker>,
    space: &Space,
    config: &CampaignConfig,
    policy: Policy,
) -> Result<CampaignReport, CampaignError> {
    config.validate()?;
    if config.budget > space.len() {
        return Err(CampaignError::BudgetExceedsSpace {
            budget: config.budget,
            space: space.len(),
        });
    }
    let topics = [Topic::fixed(SIMULATE), Topic::fixed(TRAIN), Topic::fixed(INFER)];
    let side = tasks::ServerSide {
        sim_workers: (config.sim_slots + config.ml_slots) as usize,
        ml_workers: config.ml_slots as usize,
        assay: config.assay_params(space.value_scale()),
        ensemble_size: config.ensemble_size,
        ridge_alpha: config.ridge_alpha,
    };
    let space_arc = Arc::new(space.clone());
    let mut server_cfg = ServerConfig::default();
    server_cfg.poll = Duration::from_millis(5);
    let server = serve(broker.clone(), tasks::registry(space_arc, side)?, &topics, server_cfg)?;
    let tracker = Arc::new(ResourceTracker::new(&[(SIM_POOL, config.sim_slots), (ML_POOL, config.ml_slots)])?);

    let start_stamp = clock::now();
    let campaign = Campaign {
        config: config.clone(),
        policy,
        schedule: RetrainSchedule::new(policy, config.n_retrain, space.dim()),
        entities: space.len(),
        threshold: space.top_percent_threshold(),
        simulate: topics[0].clone(),
        train: topics[1].clone(),
        infer: topics[2].clone(),
        start: Instant::now(),
        st: Mutex::new(State {
            record: CampaignRecord::new(),
            queue: MoleculeQueue::new(),
            attempted: vec![false; space.len()],
            selections: Vec::with_capacity(config.budget),
            outstanding: 0,
            rng: ChaCha8Rng::seed_from_u64(mix(config.seed, 0, 0)),
            trainings: 0,
            training_failures: 0,
            ml_outstanding: 0,
            installed: None,
            installed_gen: 0,
            scored_gen: 0,
            scoring: None,
            predict_tasks: 0,
            task_failures: 0,
            lent: 0,
            reclaiming: false,
            series: Vec::with_capacity(config.budget),
            reorders: Vec::new(),
            fallbacks: Vec::new(),
            busy: Vec::new(),
            capacity: vec![(start_stamp, config.sim_slots, config.ml_slots)],
            finished_at: None,
            queue_checks: 0,
            queue_violations: 0,
        }),
        cv: Condvar::new(),
    };

    let mut thinker = Thinker::new(broker, &topics, campaign)
        .with_resources(tracker)
        .with_poll_interval(Duration::from_millis(5));
    thinker.register(AgentSpec::looping("qc_scorer", |ctx: &Context<Campaign>| {
        ctx.set_flag(ALLOCATE);
        let r = ctx.state().qc_scorer(ctx);
        if r.is_err() {
            ctx.set_done();
        }
        r
    }))?;
    thinker.register(AgentSpec::result_processor("qc_recorder", topics[0].clone(), |ctx: &Context<Campaign>, r| {
        ctx.state().qc_recorder(ctx, r)
    }))?;
    thinker.register(AgentSpec::looping("trainer", |ctx: &Context<Campaign>| ctx.state().trainer(ctx)))?;
    thinker.register(AgentSpec::result_processor("updater", topics[1].clone(), |ctx: &Context<Campaign>, r| {
        ctx.state().updater(ctx, r)
    }))?;
    thinker.register(AgentSpec::event_responder("ml_scorer", MODEL_UPDATED, |ctx: &Context<Campaign>| {
        ctx.state().ml_scorer(ctx)
    }))?;
    thinker.register(AgentSpec::result_processor("ml_recorder", topics[2].clone(), |ctx: &Context<Campaign>, r| {
        ctx.state().ml_recorder(ctx, r)
    }))?;
    thinker.register(AgentSpec::event_responder("allocator", ALLOCATE, |ctx: &Context<Campaign>| {
        ctx.state().allocator(ctx)
    }))?;

    let run = thinker.run();
    server.shutdown();
    let run = run?;
    if let Some((agent, message)) = run
        .agents
        .iter()
        .find_map(|a| a.failures.first().map(|f| (a.name.clone(), f.clone())))
    {
        return Err(CampaignError::Agent { agent, message });
    }

    let c = thinker.state();
    let mut st = c.lock();
    if st.record.len() < config.budget {
        return Err(CampaignError::Incomplete {
            completed: st.record.len(),
            budget: config.budget,
        });
    }
    let window = Window::new(start_stamp, st.finished_at.unwrap_or_else(clock::now));
    let utilization = [SIM_POOL, ML_POOL]
        .iter()
        .map(|p| (p.to_string(), pool_utilization(&st, p, window)))
        .collect();
    let record = std::mem::take(&mut st.record);
    let assays_submitted = st.selections.len();
    Ok(CampaignReport {
        policy,
        config: config.clone(),
        threshold: c.threshold,
        score: record_score(&record, c.threshold),
        record,
        selections: std::mem::take(&mut st.selections),
        series: std::mem::take(&mut st.series),
        reorders: std::mem::take(&mut st.reorders),
        fallbacks: std::mem::take(&mut st.fallbacks),
        assays_submitted,
        trainings: st.trainings,
        training_failures: st.training_failures,
        predict_tasks: st.predict_tasks,
        task_failures: st.task_failures,
        queue_checks: st.queue_checks,
        queue_violations: st.queue_violations,
        utilization,
        wall_time: c.start.elapsed(),
    })
}
