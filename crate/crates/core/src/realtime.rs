//! Wall-clock mode: the same actors on OS threads against a shared tuple
//! space, either in-process or over the TCP service. Not deterministic.

use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use futures::executor::block_on;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::handler;
use crate::manager::{self, RunSummary};
use crate::params::Params;
use crate::runtime::{Note, Runtime};
use crate::scenario::{setup, LossRow, RunConfig, SimError};
use crate::tuplespace::{
    serve, Pattern, RemoteTupleSpace, TsError, Tuple, TupleSpace, TupleSpaceClient, Value,
};

type Client = Arc<dyn TupleSpaceClient + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    #[default]
    InProcess,
    Tcp,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RealtimeOptions {
    pub transport: Transport,
    /// Wall seconds per virtual second.
    pub time_scale: f64,
}

impl Default for RealtimeOptions {
    fn default() -> Self {
        Self {
            transport: Transport::InProcess,
            time_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RealtimeReport {
    pub losses: Vec<LossRow>,
    pub params: Params,
    pub summary: RunSummary,
    pub notes: Vec<(f64, Note)>,
    pub wall: Duration,
}

struct ThreadRuntime {
    space: Client,
    speed: f64,
    time_scale: f64,
    start: Instant,
    notes: Arc<Mutex<Vec<(f64, Note)>>>,
}

impl Runtime for ThreadRuntime {
    fn now(&self) -> f64 {
        self.start.elapsed().as_secs_f64() / self.time_scale
    }

    fn speed(&self) -> f64 {
        self.speed
    }

    async fn sleep(&self, secs: f64) {
        thread::sleep(Duration::from_secs_f64((secs * self.time_scale).max(0.0)));
    }

    async fn read(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.space.read(pattern)
    }

    async fn get(&self, pattern: &Pattern) -> Result<Tuple, TsError> {
        self.space.get(pattern)
    }

    fn put(&self, key: &str, value: Value) -> Result<(), TsError> {
        self.space.put(key, value)
    }

    fn try_get(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        self.space.try_get(pattern)
    }

    fn try_read(&self, pattern: &Pattern) -> Result<Option<Tuple>, TsError> {
        self.space.try_read(pattern)
    }

    fn count(&self, pattern: &Pattern) -> Result<usize, TsError> {
        self.space.count(pattern)
    }

    fn clear(&self, pattern: &Pattern) -> Result<usize, TsError> {
        self.space.clear(pattern)
    }

    fn note(&self, note: Note) {
        let t = self.now();
        self.notes.lock().expect("notes lock").push((t, note));
    }
}

/// Runs training with one manager thread and `handler_count` handler
/// threads at fixed speeds drawn from the scenario. Speed shuffles and
/// crash schedules are not applied in this mode.
pub fn run(cfg: &RunConfig, opts: RealtimeOptions) -> Result<RealtimeReport, SimError> {
    cfg.validate()?;
    let plan = Arc::new(cfg.plan()?);
    let (data, params) = setup(cfg);
    let space = Arc::new(TupleSpace::new());
    for (k, v) in params
        .to_tuples(&plan.layout)
        .into_iter()
        .chain(data.to_tuples())
    {
        space.put(&k, v).map_err(SimError::Setup)?;
    }

    let server = match opts.transport {
        Transport::InProcess => None,
        Transport::Tcp => {
            let listener = TcpListener::bind("127.0.0.1:0")
                .map_err(|e| SimError::Setup(TsError::Transport(e.to_string())))?;
            Some(
                serve(listener, Arc::clone(&space))
                    .map_err(|e| SimError::Setup(TsError::Transport(e.to_string())))?,
            )
        }
    };
    let client = || -> Result<Client, SimError> {
        Ok(match &server {
            None => Arc::clone(&space) as Client,
            Some(s) => Arc::new(RemoteTupleSpace::connect(s.addr()).map_err(SimError::Setup)?),
        })
    };

    let start = Instant::now();
    let notes = Arc::new(Mutex::new(Vec::new()));
    let s = &cfg.scenario;
    let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
    rng.set_stream(2);
    let mut workers = Vec::with_capacity(s.handler_count);
    for _ in 0..s.handler_count {
        let rt = ThreadRuntime {
            space: client()?,
            speed: s.speed_levels[rng.random_range(0..s.speed_levels.len())] * s.speed_unit,
            time_scale: opts.time_scale,
            start,
            notes: Arc::clone(&notes),
        };
        let plan = Arc::clone(&plan);
        let hcfg = cfg.handler;
        workers.push(thread::spawn(move || {
            block_on(handler::work_loop(&rt, &plan, &hcfg))
        }));
    }

    let rt = ThreadRuntime {
        space: client()?,
        speed: s.speed_unit,
        time_scale: opts.time_scale,
        start,
        notes: Arc::clone(&notes),
    };
    let outcome = block_on(manager::run(&rt, &plan, &cfg.manager()));

    space.shutdown();
    for w in workers {
        match w.join() {
            Ok(Ok(())) | Ok(Err(TsError::Transport(_))) => {}
            Ok(Err(e)) => log::warn!("handler exited with {e}"),
            Err(_) => log::warn!("handler thread panicked"),
        }
    }
    if let Some(server) = server {
        server.shutdown();
    }
    let summary = outcome?;

    let params = Params::from_blocks(&plan.layout, |k| {
        space
            .try_read(&Pattern::exact(k))
            .and_then(|t| t.value.as_block().map(<[f32]>::to_vec))
    })?;
    let notes = std::mem::take(&mut *notes.lock().expect("notes lock"));
    let losses = notes
        .iter()
        .filter_map(|(t, n)| match *n {
            Note::Loss {
                epoch,
                sample,
                loss,
            } => Some(LossRow {
                epoch,
                sample,
                sim_time: *t,
                loss,
            }),
            _ => None,
        })
        .collect();
    Ok(RealtimeReport {
        losses,
        params,
        summary,
        notes,
        wall: start.elapsed(),
    })
}
