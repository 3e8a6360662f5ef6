//! Coordinator actor: stages each sample through the pipeline, issues
//! pouches, harvests completions, adapts the timeout, commits updates once
//! and checkpoints its cursor to the tuple space.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::ParamKind;
use crate::plan::TrainingPlan;
use crate::runtime::{Note, Runtime};
use crate::taskgraph::{keys, TaskDesc, TaskKind};
use crate::tuplespace::{Pattern, TsError, Value};

#[derive(Debug, Error)]
pub enum ManagerError {
    #[error(transparent)]
    TupleSpace(#[from] TsError),
    #[error("stalled in stage {stage}: {rounds} consecutive rounds without progress")]
    Stall { stage: String, rounds: usize },
    #[error("task {id} exceeded {max} attempts")]
    TooManyAttempts { id: String, max: u32 },
    #[error("bad checkpoint: {0}")]
    Checkpoint(String),
    #[error("tuple {0} missing at commit")]
    MissingAtCommit(String),
}

/// Multiplicative timeout adaptation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TimeoutPolicy {
    pub initial: f64,
    pub min: f64,
    pub max: f64,
    pub decrease: f64,
    pub increase: f64,
}

impl Default for TimeoutPolicy {
    fn default() -> Self {
        Self {
            initial: 1.0,
            min: 0.05,
            max: 60.0,
            decrease: 0.8,
            increase: 1.5,
        }
    }
}

impl TimeoutPolicy {
    pub fn adapt(&self, t: f64, fraction: f64) -> f64 {
        if fraction >= 1.0 {
            (t * self.decrease).max(self.min)
        } else {
            (t * self.increase).min(self.max)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ManagerConfig {
    pub pouch_size: usize,
    pub timeout: TimeoutPolicy,
    pub max_stall_rounds: usize,
    pub max_attempts: Option<u32>,
    pub epochs: usize,
    pub samples: usize,
}

impl Default for ManagerConfig {
    fn default() -> Self {
        Self {
            pouch_size: 100,
            timeout: TimeoutPolicy::default(),
            max_stall_rounds: 1000,
            max_attempts: None,
            epochs: 1,
            samples: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Forward(usize),
    Activation(usize),
    Loss,
    Backward(usize),
    Update,
    Commit,
}

impl Stage {
    /// The fixed per-sample order for a model of `depth` layers.
    pub fn pipeline(depth: usize) -> Vec<Stage> {
        let mut out = Vec::with_capacity(3 * depth + 2);
        for l in 1..=depth {
            out.push(Stage::Forward(l));
            if l < depth {
                out.push(Stage::Activation(l));
            }
        }
        out.push(Stage::Loss);
        out.extend((1..=depth).rev().map(Stage::Backward));
        out.push(Stage::Update);
        out.push(Stage::Commit);
        out
    }

    pub fn tasks(self, plan: &TrainingPlan, epoch: usize, sample: usize) -> Vec<TaskDesc> {
        let lay = &plan.layout;
        match self {
            Stage::Forward(l) => lay.tasks(TaskKind::Forward, l, epoch, sample),
            Stage::Activation(l) => lay.tasks(TaskKind::Activation, l, epoch, sample),
            Stage::Loss => lay.tasks(TaskKind::Loss, plan.depth(), epoch, sample),
            Stage::Backward(l) => lay.tasks(TaskKind::Backward, l, epoch, sample),
            Stage::Update => (1..=plan.depth())
                .flat_map(|l| {
                    let mut v = lay.tasks(TaskKind::Update(ParamKind::Weight), l, epoch, sample);
                    v.extend(lay.tasks(TaskKind::Update(ParamKind::Bias), l, epoch, sample));
                    v
                })
                .collect(),
            Stage::Commit => Vec::new(),
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Forward(l) => write!(f, "F{l}"),
            Stage::Activation(l) => write!(f, "A{l}"),
            Stage::Loss => f.write_str("L"),
            Stage::Backward(l) => write!(f, "B{l}"),
            Stage::Update => f.write_str("U"),
            Stage::Commit => f.write_str("C"),
        }
    }
}

impl FromStr for Stage {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let layer = |rest: &str| rest.parse::<usize>().ok().filter(|&l| l >= 1);
        let stage = match s.split_at_checked(1) {
            Some(("L", "")) => Some(Stage::Loss),
            Some(("U", "")) => Some(Stage::Update),
            Some(("C", "")) => Some(Stage::Commit),
            Some(("F", r)) => layer(r).map(Stage::Forward),
            Some(("A", r)) => layer(r).map(Stage::Activation),
            Some(("B", r)) => layer(r).map(Stage::Backward),
            _ => None,
        };
        stage.ok_or_else(|| format!("unknown stage {s:?}"))
    }
}

/// Durable cursor under `ckpt`: `epoch:sample:stage:timeout`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CheckpointRecord {
    pub epoch: usize,
    pub sample: usize,
    pub stage: Stage,
    pub timeout: f64,
}

impl fmt::Display for CheckpointRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}:{}:{}:{}",
            self.epoch, self.sample, self.stage, self.timeout
        )
    }
}

impl FromStr for CheckpointRecord {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(':').collect();
        let [e, smp, st, t] = parts[..] else {
            return Err(format!("expected 4 fields in {s:?}"));
        };
        let num = |x: &str| x.parse::<usize>().map_err(|e| format!("{x:?}: {e}"));
        let timeout: f64 = t.parse().map_err(|e| format!("{t:?}: {e}"))?;
        if !timeout.is_finite() || timeout <= 0.0 {
            return Err(format!("timeout {t} not positive"));
        }
        Ok(Self {
            epoch: num(e)?,
            sample: num(smp)?,
            stage: st.parse()?,
            timeout,
        })
    }
}

pub fn read_checkpoint<R: Runtime>(rt: &R) -> Result<Option<CheckpointRecord>, ManagerError> {
    let Some(t) = rt.try_read(&Pattern::exact(keys::CHECKPOINT))? else {
        return Ok(None);
    };
    let text = t
        .value
        .as_text()
        .ok_or_else(|| ManagerError::Checkpoint(format!("non-text value {:?}", t.value)))?;
    text.parse().map(Some).map_err(ManagerError::Checkpoint)
}

/// Replaces the single `ckpt` tuple.
pub fn write_checkpoint<R: Runtime>(rt: &R, rec: &CheckpointRecord) -> Result<(), TsError> {
    let pattern = Pattern::exact(keys::CHECKPOINT);
    rt.clear(&pattern)?;
    rt.put(keys::CHECKPOINT, Value::Text(rec.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSummary {
    pub samples_committed: usize,
    pub timeout: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum CommitOutcome {
    Committed,
    /// Some update results were missing; their done-markers were cleared.
    Incomplete,
}

/// Mutable dispatch state of one manager incarnation.
struct Dispatch<'a, R> {
    rt: &'a R,
    plan: &'a TrainingPlan,
    cfg: &'a ManagerConfig,
    timeout: f64,
}

impl<R: Runtime> Dispatch<'_, R> {
    fn issue(&self, t: &TaskDesc) -> Result<(), TsError> {
        self.rt.put(keys::TASK, Value::Text(t.to_string()))?;
        self.rt.note(Note::TaskIssued {
            id: t.id(),
            attempt: t.attempt,
        });
        Ok(())
    }

    fn pending(&self, tasks: Vec<TaskDesc>) -> Result<Vec<TaskDesc>, TsError> {
        let mut out = Vec::with_capacity(tasks.len());
        for t in tasks {
            if !self.rt.exists(&t.done_key())? {
                out.push(t);
            }
        }
        Ok(out)
    }

    /// Issues pouches until every task has a done-marker.
    async fn run_stage(&mut self, stage: Stage, tasks: Vec<TaskDesc>) -> Result<(), ManagerError> {
        let mut pending = self.pending(tasks)?.into_iter();
        let mut outstanding: Vec<TaskDesc> = Vec::new();
        let mut idle_rounds = 0;
        loop {
            let mut pouch = Vec::with_capacity(self.cfg.pouch_size);
            for t in outstanding.drain(..) {
                let t = t.with_attempt(t.attempt + 1);
                if let Some(max) = self.cfg.max_attempts {
                    if t.attempt > max {
                        return Err(ManagerError::TooManyAttempts { id: t.id(), max });
                    }
                }
                pouch.push(t);
            }
            let reissued = pouch.len();
            pouch.extend(pending.by_ref().take(self.cfg.pouch_size - reissued));
            if pouch.is_empty() {
                return Ok(());
            }
            for t in &pouch {
                self.issue(t)?;
            }
            self.rt.note(Note::PouchIssued {
                stage: stage.to_string(),
                fresh: pouch.len() - reissued,
                reissued,
            });

            self.rt.sleep(self.timeout).await;

            let mut done = 0;
            for t in pouch {
                if self.rt.exists(&t.done_key())? {
                    done += 1;
                } else {
                    outstanding.push(t);
                }
            }
            let fraction = done as f64 / (done + outstanding.len()) as f64;
            self.rt.clear(&Pattern::exact(keys::TASK))?;
            self.timeout = self.cfg.timeout.adapt(self.timeout, fraction);
            self.rt.note(Note::Harvest {
                stage: stage.to_string(),
                fraction,
                timeout: self.timeout,
            });
            if done == 0 {
                idle_rounds += 1;
                if idle_rounds > self.cfg.max_stall_rounds {
                    return Err(ManagerError::Stall {
                        stage: stage.to_string(),
                        rounds: idle_rounds,
                    });
                }
            } else {
                idle_rounds = 0;
            }
        }
    }

    /// Takes one `updres` per update task, overwrites the parameters, emits
    /// the loss and advances the checkpoint. Contains no suspension point.
    fn commit(&mut self, epoch: usize, sample: usize) -> Result<CommitOutcome, ManagerError> {
        let rt = self.rt;
        let updates = Stage::Update.tasks(self.plan, epoch, sample);
        let mut incomplete = false;
        for t in &updates {
            if !rt.exists(&keys::update_result(&t.id()))? {
                rt.clear(&Pattern::exact(t.done_key()))?;
                incomplete = true;
            }
        }
        if incomplete {
            return Ok(CommitOutcome::Incomplete);
        }

        let depth = self.plan.depth();
        let mut loss = 0.0f64;
        for &o in &self.plan.layout.layer(depth).head_spans {
            let key = keys::loss_value(sample, o);
            let v = rt
                .try_read(&Pattern::exact(key.as_str()))?
                .and_then(|t| {
                    t.value
                        .as_block()
                        .map(|b| b.iter().map(|&x| x as f64).sum::<f64>())
                })
                .ok_or(ManagerError::MissingAtCommit(key))?;
            loss += v;
        }

        for t in &updates {
            let id = t.id();
            let res = keys::update_result(&id);
            let pattern = Pattern::exact(res.as_str());
            let tuple = rt
                .try_get(&pattern)?
                .ok_or_else(|| ManagerError::MissingAtCommit(res.clone()))?;
            rt.clear(&pattern)?;
            let param = match t.kind {
                TaskKind::Update(ParamKind::Weight) => {
                    keys::param_weight(t.layer, t.output, t.input)
                }
                _ => keys::param_bias(t.layer, t.output),
            };
            rt.clear(&Pattern::exact(param.as_str()))?;
            rt.put(&param, tuple.value)?;
            rt.note(Note::Committed { id });
        }
        rt.note(Note::Loss {
            epoch,
            sample,
            loss,
        });

        let (next_epoch, next_sample) = if sample + 1 == self.cfg.samples {
            (epoch + 1, 0)
        } else {
            (epoch, sample + 1)
        };
        write_checkpoint(
            rt,
            &CheckpointRecord {
                epoch: next_epoch,
                sample: next_sample,
                stage: Stage::Forward(1),
                timeout: self.timeout,
            },
        )?;
        for p in keys::transient_prefixes(sample) {
            rt.clear(&Pattern::prefix(p))?;
        }
        rt.clear(&Pattern::prefix("grad:"))?;
        rt.clear(&Pattern::prefix(keys::done_prefix(epoch, sample)))?;
        rt.clear(&Pattern::prefix(keys::update_result_prefix(epoch, sample)))?;
        rt.note(Note::Checkpoint {
            epoch: next_epoch,
            sample: next_sample,
        });
        Ok(CommitOutcome::Committed)
    }

    fn first_open_stage(&self, epoch: usize, sample: usize) -> Result<Stage, TsError> {
        for stage in Stage::pipeline(self.plan.depth()) {
            if !self
                .pending(stage.tasks(self.plan, epoch, sample))?
                .is_empty()
            {
                return Ok(stage);
            }
        }
        Ok(Stage::Commit)
    }
}

/// Manager entry point, also used after a crash: resumes from `ckpt` if
/// present, otherwise starts at epoch 0, sample 0.
pub async fn run<R: Runtime>(
    rt: &R,
    plan: &TrainingPlan,
    cfg: &ManagerConfig,
) -> Result<RunSummary, ManagerError> {
    let ckpt = read_checkpoint(rt)?;
    let mut d = Dispatch {
        rt,
        plan,
        cfg,
        timeout: ckpt.map_or(cfg.timeout.initial, |c| c.timeout),
    };
    let (mut epoch, mut sample) = ckpt.map_or((0, 0), |c| (c.epoch, c.sample));
    let mut committed = 0;
    if cfg.samples == 0 {
        return Ok(RunSummary {
            samples_committed: 0,
            timeout: d.timeout,
        });
    }
    if ckpt.is_some() || rt.count(&Pattern::exact(keys::TASK))? > 0 {
        rt.clear(&Pattern::exact(keys::TASK))?;
    }
    if epoch < cfg.epochs {
        rt.note(Note::Recovered {
            epoch,
            sample,
            stage: d.first_open_stage(epoch, sample)?.to_string(),
        });
    }
    while epoch < cfg.epochs {
        for stage in Stage::pipeline(plan.depth()) {
            if stage == Stage::Commit {
                break;
            }
            d.run_stage(stage, stage.tasks(plan, epoch, sample)).await?;
        }
        while d.commit(epoch, sample)? == CommitOutcome::Incomplete {
            d.run_stage(Stage::Update, Stage::Update.tasks(plan, epoch, sample))
                .await?;
        }
        committed += 1;
        sample += 1;
        if sample == cfg.samples {
            sample = 0;
            epoch += 1;
        }
    }
    Ok(RunSummary {
        samples_committed: committed,
        timeout: d.timeout,
    })
}
