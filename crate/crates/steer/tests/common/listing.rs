//! The planner/consumer policy: run TOTAL tasks, PARALLEL at a time, each
//! new task chosen from the results so far.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use steer::broker::{Broker, Topic};
use steer::taskserver::{MethodRegistry, TaskDefinition, TaskInputs};
use steer::thinker::{AgentSpec, Context, RunReport, Thinker};
use steer_core::Value;

pub const PARALLEL_TASKS: u64 = 3;
pub const TOTAL_TASKS: u64 = 10;

pub struct Policy {
    results: Mutex<Vec<(Vec<Value>, Value)>>,
    rng: Mutex<ChaCha8Rng>,
    max_in_flight: AtomicU64,
}

pub struct Outcome {
    pub submitted: u64,
    pub results: usize,
    pub max_in_flight: u64,
    pub report: RunReport,
}

/// Echo server whose task duration is the input (in ms) times 2, so seeded
/// random inputs give random completion orders.
pub fn echo_registry(workers: usize) -> MethodRegistry {
    let mut reg = MethodRegistry::new();
    reg.add_pool("cpu", workers).unwrap();
    reg.register(TaskDefinition::new("simulate", "cpu", |i: TaskInputs| {
        let x = i.arg(0)?.as_f64().ok_or("expected a float")?;
        thread::sleep(Duration::from_secs_f64(x * 2e-3));
        Ok(Value::Float(x))
    }))
    .unwrap();
    reg
}

fn send(ctx: &Context<Policy>, topic: &Topic, x: Value) -> Result<(), steer::thinker::BoxError> {
    ctx.submit(topic, "simulate", vec![x])?;
    ctx.state().max_in_flight.fetch_max(ctx.in_flight(), Ordering::SeqCst);
    Ok(())
}

pub fn run(broker: Arc<dyn Broker>, topic: &Topic, seed: u64) -> Outcome {
    let state = Policy {
        results: Mutex::new(Vec::new()),
        rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        max_in_flight: AtomicU64::new(0),
    };
    let mut thinker = Thinker::new(broker, std::slice::from_ref(topic), state)
        .with_poll_interval(Duration::from_millis(2));

    let t = topic.clone();
    thinker
        .register(AgentSpec::looping("planner", move |ctx: &Context<Policy>| {
            let draw = || Value::Float(ctx.state().rng.lock().unwrap().random::<f64>());
            ctx.shared().set("next_task", draw());
            for _ in 0..PARALLEL_TASKS {
                send(ctx, &t, draw())?;
            }
            while (ctx.state().results.lock().unwrap().len() as u64) < TOTAL_TASKS {
                // "good idea": midpoint of the best result so far and a fresh draw
                let best = ctx
                    .state()
                    .results
                    .lock()
                    .unwrap()
                    .iter()
                    .filter_map(|(_, v)| v.as_f64())
                    .fold(0.0, f64::max);
                let fresh = ctx.state().rng.lock().unwrap().random::<f64>();
                ctx.shared().set("next_task", Value::Float((best + fresh) / 2.0));
                thread::sleep(Duration::from_micros(200));
            }
            Ok(())
        }))
        .unwrap();

    let t = topic.clone();
    thinker
        .register(AgentSpec::result_processor("consumer", topic.clone(), move |ctx: &Context<Policy>, r| {
            ctx.state()
                .results
                .lock()
                .unwrap()
                .push((r.args.clone(), r.result.clone().unwrap_or(Value::Null)));
            // the next submission would exceed the total
            if ctx.submitted() < TOTAL_TASKS {
                let next = ctx.shared().get("next_task").unwrap_or(Value::Float(0.5));
                send(ctx, &t, next)?;
            }
            Ok(())
        }))
        .unwrap();

    let report = thinker.run().unwrap();
    let state = thinker.state();
    let results = state.results.lock().unwrap().len();
    let max_in_flight = state.max_in_flight.load(Ordering::SeqCst);
    Outcome {
        submitted: report.submitted,
        results,
        max_in_flight,
        report,
    }
}
