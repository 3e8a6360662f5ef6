//! Single-threaded discrete-event executor for manager and handler actors.
//!
//! Actors are futures polled with a no-op waker. Every suspension (sleep or
//! blocked tuple-space wait) registers exactly one resume event, so an actor
//! is only polled when its own event fires. A crash drops the future; wait
//! guards cancel their store registration on drop and stale resume events
//! are filtered by incarnation.

use std::cell::RefCell;
use std::collections::{BTreeMap, HashMap};
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::dataset::Dataset;
use crate::handler::{self, HandlerConfig};
use crate::manager::{self, ManagerConfig, ManagerError, RunSummary};
use crate::params::{Params, ParamsError};
use crate::plan::TrainingPlan;
use crate::runtime::{Note, Runtime};
use crate::scenario::config::{ConfigError, RunConfig};
use crate::scenario::metrics::{ActorRef, Counters, EventRecord, LossRow, PerfRow};
use crate::tuplespace::{Pattern, Store, TsError, Tuple, Value, WaitOutcome, WaiterId};

const STREAM_DATA: u64 = 0;
const STREAM_INIT: u64 = 1;
const STREAM_SPEED: u64 = 2;
const STREAM_CRASH: u64 = 3;
const STREAM_RESTART: u64 = 4;

const MANAGER: usize = 0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("manager: {0}")]
    Manager(#[from] ManagerError),
    #[error("handler {handler}: {source}")]
    Handler { handler: usize, source: TsError },
    #[error("deadlock at t={time}: no pending events and the manager has not finished")]
    Deadlock { time: f64 },
    #[error("virtual time limit {limit} exceeded")]
    TimeLimit { limit: f64 },
    #[error(transparent)]
    Params(#[from] ParamsError),
    #[error("setup: {0}")]
    Setup(TsError),
}

impl SimError {
    pub fn is_stall(&self) -> bool {
        matches!(
            self,
            SimError::Manager(ManagerError::Stall { .. })
                | SimError::Deadlock { .. }
                | SimError::TimeLimit { .. }
        )
    }
}

/// Virtual time in integer nanoseconds.
pub type SimTime = u64;

pub fn to_sim_time(secs: f64) -> SimTime {
    (secs.max(0.0) * 1e9).round() as SimTime
}

pub fn to_secs(t: SimTime) -> f64 {
    t as f64 / 1e9
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Event {
    Resume { actor: usize, incarnation: u64 },
    SpeedShuffle,
    HandlerCrash,
    ManagerCrash,
    ManagerRevive,
    Crash(usize),
}

/// State shared between the engine and the actors' runtimes.
struct World {
    now: SimTime,
    seq: u64,
    queue: BTreeMap<(SimTime, u64), Event>,
    store: Store,
    waiters: HashMap<WaiterId, (usize, u64)>,
    mailbox: Vec<Option<Result<Tuple, TsError>>>,
    incarnation: Vec<u64>,
    /// Speed level per handler (index 0 unused).
    speeds: Vec<f64>,
    speed_unit: f64,
    counters: Counters,
    losses: Vec<LossRow>,
    perf: Vec<PerfRow>,
    events: Option<Vec<EventRecord>>,
}

impl World {
    fn schedule(&mut self, at: SimTime, ev: Event) {
        self.seq += 1;
        self.queue.insert((at, self.seq), ev);
    }

    fn resume(&mut self, actor: usize, at: SimTime) {
        let incarnation = self.incarnation[actor];
        self.schedule(at, Event::Resume { actor, incarnation });
    }

    fn put(&mut self, key: &str, value: Value) -> Result<(), TsError> {
        for d in self.store.put(key, value)? {
            if let Some((actor, inc)) = self.waiters.remove(&d.waiter) {
                if inc == self.incarnation[actor] {
                    self.mailbox[actor] = Some(Ok(d.tuple));
                    self.resume(actor, self.now);
                }
            }
        }
        Ok(())
    }

    fn total_power(&self) -> f64 {
        self.speeds[1..].iter().sum()
    }

    fn record(&mut self, actor: usize, note: Note) {
        let c = &mut self.counters;
        match &note {
            Note::PouchIssued { reissued, .. } => {
                c.pouches += 1;
                c.reissues += *reissued as u64;
            }
            Note::TaskIssued { .. } => c.issued += 1,
            Note::Harvest { timeout, .. } => {
                let row = PerfRow {
                    sim_time: to_secs(self.now),
                    timeout: *timeout,
                    total_power: self.total_power(),
                    pouches: self.counters.pouches,
                    reissues: self.counters.reissues,
                    crashes: self.counters.crashes,
                };
                self.perf.push(row);
            }
            Note::Loss {
                epoch,
                sample,
                loss,
            } => self.losses.push(LossRow {
                epoch: *epoch,
                sample: *sample,
                sim_time: to_secs(self.now),
                loss: *loss,
            }),
            Note::Committed { .. } => c.commits += 1,
            Note::Recovered { .. } => c.recoveries += 1,
            Note::TaskDone { .. } => c.tasks_done += 1,
            Note::ProtocolError { detail } => {
                log::warn!("protocol error: {detail}");
                c.protocol_errors += 1;
            }
            Note::Stored { .. } => c.stored += 1,
            Note::Abandoned { .. } => c.abandoned += 1,
            Note::Checkpoint { .. } => {}
        }
        if let Some(ev) = &mut self.events {
            ev.push(EventRecord {
                time: to_secs(self.now),
                actor: if actor == MANAGER {
                    ActorRef::Manager
                } else {
                    ActorRef::Handler(actor - 1)
                },
                note,
            });
        }
    }
}

/// An actor's view of the simulated world.
#[derive(Clone)]
pub struct SimRuntime {
    world: Rc<RefCell<World>>,
    actor: usize,
}

struct Sleep<'a> {
    rt: &'a SimRuntime,
    until: SimTime,
    armed: bool,
}

impl Future for Sleep<'_> {
    type Output = ();

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<()> {
        if self.armed {
            return Poll::Ready(());
        }
        self.armed = true;
        let until = self.until;
        self.rt.world.borrow_mut().resume(self.rt.actor, until);
        Poll::Pending
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum WaitMode {
    Read,
    Take,
}

struct Wait<'a> {
    rt: &'a SimRuntime,
    pattern: &'a Pattern,
    mode: WaitMode,
    waiter: Option<WaiterId>,
}

impl Future for Wait<'_> {
    type Output = Result<Tuple, TsError>;

    fn poll(mut self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        let rt = self.rt;
        let actor = rt.actor;
        let mut w = rt.world.borrow_mut();
        if self.waiter.is_some() {
            return match w.mailbox[actor].take() {
                Some(r) => {
                    drop(w);
                    self.waiter = None;
                    Poll::Ready(r)
                }
                None => Poll::Pending,
            };
        }
        let outcome = match self.mode {
            WaitMode::Read => w.store.read_or_wait(self.pattern),
            WaitMode::Take => w.store.get_or_wait(self.pattern),
        };
        match outcome {
            Ok(WaitOutcome::Ready(t)) => Poll::Ready(Ok(t)),
            Ok(WaitOutcome::Waiting(id)) => {
                let inc = w.incarnation[actor];
                w.waiters.insert(id, (actor, inc));
                drop(w);
                self.waiter = Some(id);
                Poll::Pending
            }
            Err(e) => Poll::Ready(Err(e)),
        }
    }
}

impl Drop for Wait<'_> {
    fn drop(&mut self) {
        if let Some(id) = self.waiter.take() {
            let mut w = self.rt.world.borrow_mut();
            w.store.cancel(id);
            w.waiters.remove(&id);
        }
    }
}

impl Runtime for SimRuntime {
    fn now(&self) -> f64 {
        to_secs(self.world.borrow().now)
    }

    fn speed(&self) -> f64 {
        let w = self.world.borrow();
        if self.actor == MANAGER {
            w.speed_unit
        } else {
            w.speeds[self.actor] * w.speed_unit
        }
    }

    async fn sleep(&self, secs: f64) {
        let until = self.world.borrow().now + to_sim_time(secs);
        Sleep {
            rt: self,
            until,
            armed: false,
        }
        .await
    }

    async fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        Wait {
            rt: self,
            pattern,
            mode: WaitMode::Read,
            waiter: None,
        }
        .await
    }

    async fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        Wait {
            rt: self,
            pattern,
            mode: WaitMode::Take,
            waiter: None,
        }
        .await
    }

    fn put(&self, key: &str, value: Value) -> Result<(), TsError> {
        self.world.borrow_mut().put(key, value)
    }

    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        Ok(self.world.borrow_mut().store.try_get(pattern))
    }

    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        Ok(self.world.borrow().store.try_read(pattern))
    }

    fn count(&self, pattern: &Pattern) -> Result<usize, TsError> {
        Ok(self.world.borrow().store.count(pattern))
    }

    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError> {
        Ok(self.world.borrow_mut().store.clear(pattern))
    }

    fn note(&self, note: Note) {
        self.world.borrow_mut().record(self.actor, note);
    }
}

enum Exit {
    Manager(Result<RunSummary, ManagerError>),
    Handler(Result<(), TsError>),
}

type ActorFuture = Pin<Box<dyn Future<Output = Exit>>>;

/// Everything a finished run produced.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub losses: Vec<LossRow>,
    pub perf: Vec<PerfRow>,
    pub counters: Counters,
    pub params: Params,
    pub initial_params: Params,
    pub sim_time: f64,
    pub summary: RunSummary,
    pub events: Vec<EventRecord>,
}

/// Generates the dataset and initial parameters for a config.
pub fn setup(cfg: &RunConfig) -> (Dataset, Params) {
    let mut data_rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
    data_rng.set_stream(STREAM_DATA);
    let data = Dataset::generate(
        cfg.model.input_dim(),
        cfg.model.output_dim(),
        cfg.samples,
        &mut data_rng,
    );
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.scenario.seed);
    init_rng.set_stream(STREAM_INIT);
    (data, Params::init(&cfg.model, &mut init_rng))
}

/// Hook for tests that need to touch the tuple space before actors start.
pub type Prelude<'a> = &'a dyn Fn(&mut Store);

pub struct Simulation {
    cfg: RunConfig,
    plan: Rc<TrainingPlan>,
    world: Rc<RefCell<World>>,
    actors: Vec<Option<ActorFuture>>,
    manager_done: Option<Result<RunSummary, ManagerError>>,
    speed_rng: ChaCha8Rng,
    crash_rng: ChaCha8Rng,
    restart_rng: ChaCha8Rng,
    initial_params: Params,
}

impl Simulation {
    pub fn new(cfg: &RunConfig) -> Result<Self, SimError> {
        Self::with_prelude(cfg, &|_| {})
    }

    pub fn with_prelude(cfg: &RunConfig, prelude: Prelude<'_>) -> Result<Self, SimError> {
        cfg.validate()?;
        let plan = Rc::new(cfg.plan()?);
        let (data, params) = setup(cfg);
        let s = &cfg.scenario;
        let stream = |k| {
            let mut r = ChaCha8Rng::seed_from_u64(s.seed);
            r.set_stream(k);
            r
        };
        let mut speed_rng = stream(STREAM_SPEED);
        let actors = s.handler_count + 1;
        let mut speeds = vec![0.0; actors];
        for v in speeds.iter_mut().skip(1) {
            *v = s.speed_levels[speed_rng.random_range(0..s.speed_levels.len())];
        }
        let mut store = Store::new();
        for (k, v) in params
            .to_tuples(&plan.layout)
            .into_iter()
            .chain(data.to_tuples())
        {
            store.put(k, v).map_err(SimError::Setup)?;
        }
        prelude(&mut store);
        let world = World {
            now: 0,
            seq: 0,
            queue: BTreeMap::new(),
            store,
            waiters: HashMap::new(),
            mailbox: vec![None; actors],
            incarnation: vec![0; actors],
            speeds,
            speed_unit: s.speed_unit,
            counters: Counters::default(),
            losses: Vec::new(),
            perf: Vec::new(),
            events: s.record_events.then(Vec::new),
        };
        let mut sim = Self {
            cfg: cfg.clone(),
            plan,
            world: Rc::new(RefCell::new(world)),
            actors: (0..actors).map(|_| None).collect(),
            manager_done: None,
            speed_rng,
            crash_rng: stream(STREAM_CRASH),
            restart_rng: stream(STREAM_RESTART),
            initial_params: params,
        };
        sim.spawn(MANAGER);
        for h in 1..actors {
            sim.spawn(h);
        }
        {
            let mut w = sim.world.borrow_mut();
            if s.speed_change_prob > 0.0 {
                w.schedule(to_sim_time(s.speed_change_period), Event::SpeedShuffle);
            }
            if s.handler_crash_prob > 0.0 {
                w.schedule(to_sim_time(s.handler_crash_period), Event::HandlerCrash);
            }
            if s.manager_crash_prob > 0.0 {
                w.schedule(to_sim_time(s.manager_crash_period), Event::ManagerCrash);
            }
        }
        Ok(sim)
    }

    fn runtime(&self, actor: usize) -> SimRuntime {
        SimRuntime {
            world: Rc::clone(&self.world),
            actor,
        }
    }

    fn spawn(&mut self, actor: usize) {
        let rt = self.runtime(actor);
        let plan = Rc::clone(&self.plan);
        let fut: ActorFuture = if actor == MANAGER {
            let cfg: ManagerConfig = self.cfg.manager();
            Box::pin(async move { Exit::Manager(manager::run(&rt, &plan, &cfg).await) })
        } else {
            let cfg: HandlerConfig = self.cfg.handler;
            Box::pin(async move { Exit::Handler(handler::work_loop(&rt, &plan, &cfg).await) })
        };
        self.actors[actor] = Some(fut);
        let mut w = self.world.borrow_mut();
        let now = w.now;
        w.resume(actor, now);
    }

    fn kill(&mut self, actor: usize) {
        // Drop outside any world borrow: wait guards borrow it.
        let fut = self.actors[actor].take();
        drop(fut);
        let mut w = self.world.borrow_mut();
        w.incarnation[actor] += 1;
        w.mailbox[actor] = None;
        w.counters.crashes += 1;
        if actor == MANAGER {
            w.counters.manager_crashes += 1;
        } else {
            w.counters.handler_crashes += 1;
        }
    }

    fn poll(&mut self, actor: usize) -> Result<(), SimError> {
        let Some(fut) = self.actors[actor].as_mut() else {
            return Ok(());
        };
        let mut cx = Context::from_waker(Waker::noop());
        match fut.as_mut().poll(&mut cx) {
            Poll::Pending => Ok(()),
            Poll::Ready(exit) => {
                self.actors[actor] = None;
                match exit {
                    Exit::Manager(r) => {
                        self.manager_done = Some(r);
                        Ok(())
                    }
                    Exit::Handler(Ok(())) => Ok(()),
                    Exit::Handler(Err(source)) => Err(SimError::Handler {
                        handler: actor - 1,
                        source,
                    }),
                }
            }
        }
    }

    /// Crashes one actor once at virtual time `at`, on top of any random
    /// crashes. A crashed manager is revived after the configured delay.
    pub fn crash_at(&mut self, actor: ActorRef, at: f64) {
        let actor = match actor {
            ActorRef::Manager => MANAGER,
            ActorRef::Handler(h) => h + 1,
        };
        self.world
            .borrow_mut()
            .schedule(to_sim_time(at), Event::Crash(actor));
    }

    fn crash_handler(&mut self, h: usize) {
        self.kill(h);
        let levels = &self.cfg.scenario.speed_levels;
        let speed = levels[self.restart_rng.random_range(0..levels.len())];
        self.world.borrow_mut().speeds[h] = speed;
        self.spawn(h);
    }

    fn crash_manager(&mut self) {
        self.kill(MANAGER);
        let mut w = self.world.borrow_mut();
        let at = w.now + to_sim_time(self.cfg.scenario.manager_revival_delay);
        w.schedule(at, Event::ManagerRevive);
    }

    fn handle(&mut self, ev: Event) -> Result<(), SimError> {
        let s = self.cfg.scenario.clone();
        match ev {
            Event::Resume { actor, incarnation } => {
                if self.world.borrow().incarnation[actor] == incarnation {
                    self.poll(actor)?;
                }
            }
            Event::SpeedShuffle => {
                let mut w = self.world.borrow_mut();
                for h in 1..=s.handler_count {
                    if self.speed_rng.random_bool(s.speed_change_prob) {
                        w.speeds[h] =
                            s.speed_levels[self.speed_rng.random_range(0..s.speed_levels.len())];
                    }
                }
                let at = w.now + to_sim_time(s.speed_change_period);
                w.schedule(at, Event::SpeedShuffle);
            }
            Event::HandlerCrash => {
                for h in 1..=s.handler_count {
                    if self.crash_rng.random_bool(s.handler_crash_prob) {
                        self.crash_handler(h);
                    }
                }
                let mut w = self.world.borrow_mut();
                let at = w.now + to_sim_time(s.handler_crash_period);
                w.schedule(at, Event::HandlerCrash);
            }
            Event::ManagerCrash => {
                if self.actors[MANAGER].is_some()
                    && self.crash_rng.random_bool(s.manager_crash_prob)
                {
                    self.crash_manager();
                }
                let mut w = self.world.borrow_mut();
                let at = w.now + to_sim_time(s.manager_crash_period);
                w.schedule(at, Event::ManagerCrash);
            }
            Event::ManagerRevive => self.spawn(MANAGER),
            Event::Crash(MANAGER) => {
                if self.actors[MANAGER].is_some() {
                    self.crash_manager();
                }
            }
            Event::Crash(h) => self.crash_handler(h),
        }
        Ok(())
    }

    /// Drives the event queue until the manager finishes.
    pub fn run(mut self) -> Result<RunReport, SimError> {
        let limit = self.cfg.scenario.max_sim_time.map(to_sim_time);
        while self.manager_done.is_none() {
            let next = self.world.borrow_mut().queue.pop_first();
            let Some(((at, _), ev)) = next else {
                return Err(SimError::Deadlock {
                    time: to_secs(self.world.borrow().now),
                });
            };
            if let Some(limit) = limit {
                if at > limit {
                    return Err(SimError::TimeLimit {
                        limit: to_secs(limit),
                    });
                }
            }
            self.world.borrow_mut().now = at;
            self.handle(ev)?;
        }
        let summary = self
            .manager_done
            .take()
            .expect("loop exits on completion")?;
        // Handlers are still parked on `get("task")`; drop them first.
        for a in self.actors.iter_mut() {
            a.take();
        }
        let mut w = self.world.borrow_mut();
        let store = &w.store;
        let params = Params::from_blocks(&self.plan.layout, |k| {
            store
                .try_read(&Pattern::exact(k))
                .and_then(|t| t.value.as_block().map(<[f32]>::to_vec))
        })?;
        Ok(RunReport {
            losses: std::mem::take(&mut w.losses),
            perf: std::mem::take(&mut w.perf),
            counters: w.counters,
            params,
            initial_params: self.initial_params.clone(),
            sim_time: to_secs(w.now),
            summary,
            events: w.events.take().unwrap_or_default(),
        })
    }
}

/// Builds and runs one simulation.
pub fn simulate(cfg: &RunConfig) -> Result<RunReport, SimError> {
    Simulation::new(cfg)?.run()
}
