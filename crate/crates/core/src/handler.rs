//! Worker actor: takes task tuples, checks preconditions, runs the kernels
//! and publishes results followed by the done-marker.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::{self, KernelError, ParamBlock, ParamKind, Partial};
use crate::manager::CheckpointRecord;
use crate::plan::TrainingPlan;
use crate::runtime::{Note, Runtime};
use crate::span::Span;
use crate::taskgraph::{keys, task_cost, TaskDesc, TaskKind};
use crate::tuplespace::{Pattern, TsError, Value};

/// What a handler does with a task whose inputs are not all present yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OnUnready {
    /// Re-put the tuple after a short delay.
    #[default]
    Store,
    /// Drop it; the manager reissues it after the timeout.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HandlerConfig {
    /// Largest task cost this handler accepts.
    pub capacity: usize,
    /// Fixed per-task time on top of `cost / speed`.
    pub overhead: f64,
    pub retry_delay: f64,
    pub on_unready: OnUnready,
}

impl Default for HandlerConfig {
    fn default() -> Self {
        Self {
            capacity: 256,
            overhead: 0.001,
            retry_delay: 0.01,
            on_unready: OnUnready::Store,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExecError {
    #[error("input {0} missing")]
    Missing(String),
    #[error("input {0} is not a numeric block")]
    BadValue(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Readiness {
    Ready,
    Missing(Vec<String>),
}

/// A stored block and where it sits along the axis being assembled.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Piece {
    key: String,
    range: Span,
    order: usize,
}

fn layer_input_pieces(plan: &TrainingPlan, sample: usize, layer: usize, cols: Span) -> Vec<Piece> {
    if layer == 1 {
        let full = Span::full(plan.model().input_dim());
        return vec![Piece {
            key: keys::input(sample, full),
            range: full,
            order: 0,
        }];
    }
    plan.layout
        .layer(layer - 1)
        .head_spans
        .iter()
        .filter(|a| a.intersect(cols).is_some())
        .map(|&a| Piece {
            key: keys::hidden(sample, layer - 1, a),
            range: a,
            order: a.start,
        })
        .collect()
}

fn z_pieces(plan: &TrainingPlan, sample: usize, layer: usize, rows: Span) -> Vec<Piece> {
    plan.layout
        .layer(layer)
        .blocks
        .iter()
        .filter(|(_, o)| o.intersect(rows).is_some())
        .map(|&(i, o)| Piece {
            key: keys::partial_z(sample, layer, o, i),
            range: o,
            order: i.start,
        })
        .collect()
}

fn upstream_grad_pieces(
    plan: &TrainingPlan,
    sample: usize,
    layer: usize,
    rows: Span,
) -> Vec<Piece> {
    if layer == plan.depth() {
        return plan
            .layout
            .layer(layer)
            .head_spans
            .iter()
            .filter(|a| a.intersect(rows).is_some())
            .map(|&a| Piece {
                key: keys::loss_grad(sample, a),
                range: a,
                order: a.start,
            })
            .collect();
    }
    plan.layout
        .layer(layer + 1)
        .blocks
        .iter()
        .filter(|(i, _)| i.intersect(rows).is_some())
        .map(|&(i, o)| Piece {
            key: keys::partial_gx(sample, layer + 1, i, o),
            range: i,
            order: o.start,
        })
        .collect()
}

fn bias_pieces(plan: &TrainingPlan, layer: usize, rows: Span) -> Vec<Piece> {
    plan.layout
        .layer(layer)
        .bias_spans
        .iter()
        .filter(|b| b.intersect(rows).is_some())
        .map(|&b| Piece {
            key: keys::param_bias(layer, b),
            range: b,
            order: b.start,
        })
        .collect()
}

fn bias_grad_pieces(plan: &TrainingPlan, layer: usize, rows: Span) -> Vec<Piece> {
    plan.layout
        .layer(layer)
        .bias_owner_spans()
        .filter(|s| s.intersect(rows).is_some())
        .map(|s| Piece {
            key: keys::grad_bias(layer, s),
            range: s,
            order: s.start,
        })
        .collect()
}

fn keys_of(pieces: Vec<Piece>) -> impl Iterator<Item = String> {
    pieces.into_iter().map(|p| p.key)
}

/// Every tuple key a task reads, in a fixed order.
pub fn input_keys(plan: &TrainingPlan, t: &TaskDesc) -> Vec<String> {
    let s = t.sample;
    let l = t.layer;
    let mut out: Vec<String> = Vec::new();
    match t.kind {
        TaskKind::Forward => {
            out.extend(keys_of(layer_input_pieces(plan, s, l, t.input)));
            out.push(keys::param_weight(l, t.output, t.input));
            if t.input.start == 0 {
                out.extend(keys_of(bias_pieces(plan, l, t.output)));
            }
        }
        TaskKind::Activation => out.extend(keys_of(z_pieces(plan, s, l, t.output))),
        TaskKind::Loss => {
            out.extend(keys_of(z_pieces(plan, s, l, t.output)));
            out.push(keys::label(s));
        }
        TaskKind::Backward => {
            out.extend(keys_of(upstream_grad_pieces(plan, s, l, t.output)));
            if l < plan.depth() {
                out.extend(keys_of(z_pieces(plan, s, l, t.output)));
            }
            out.extend(keys_of(layer_input_pieces(plan, s, l, t.input)));
            out.push(keys::param_weight(l, t.output, t.input));
        }
        TaskKind::Update(ParamKind::Weight) => {
            out.push(keys::param_weight(l, t.output, t.input));
            out.push(keys::grad_weight(l, t.output, t.input));
        }
        TaskKind::Update(ParamKind::Bias) => {
            out.push(keys::param_bias(l, t.output));
            out.extend(keys_of(bias_grad_pieces(plan, l, t.output)));
        }
    }
    out
}

/// Probes every input with non-destructive counts.
pub fn check_preconditions<R: Runtime>(
    rt: &R,
    plan: &TrainingPlan,
    t: &TaskDesc,
) -> Result<Readiness, TsError> {
    let mut missing = Vec::new();
    for k in input_keys(plan, t) {
        if !rt.exists(&k)? {
            missing.push(k);
        }
    }
    Ok(if missing.is_empty() {
        Readiness::Ready
    } else {
        Readiness::Missing(missing)
    })
}

struct Inputs<'a> {
    values: &'a HashMap<String, Value>,
}

impl Inputs<'_> {
    fn block(&self, key: &str) -> Result<&[f32], ExecError> {
        self.values
            .get(key)
            .ok_or_else(|| ExecError::Missing(key.to_string()))?
            .as_block()
            .ok_or_else(|| ExecError::BadValue(key.to_string()))
    }

    fn assemble(&self, pieces: &[Piece], target: Span) -> Result<Vec<f32>, ExecError> {
        let parts = pieces
            .iter()
            .map(|p| {
                Ok(Partial {
                    range: p.range,
                    order: p.order,
                    values: self.block(&p.key)?,
                })
            })
            .collect::<Result<Vec<_>, ExecError>>()?;
        Ok(kernels::reduce_partials(target, &parts)?)
    }

    fn weight(&self, layer: usize, rows: Span, cols: Span) -> Result<ParamBlock, ExecError> {
        let key = keys::param_weight(layer, rows, cols);
        Ok(ParamBlock::weight(
            layer,
            rows,
            cols,
            self.block(&key)?.to_vec(),
        )?)
    }
}

/// Pure task execution over already-fetched inputs. Returns the result
/// tuples to publish, in publication order (done-marker excluded).
pub fn compute(
    plan: &TrainingPlan,
    t: &TaskDesc,
    values: &HashMap<String, Value>,
) -> Result<Vec<(String, Value)>, ExecError> {
    let inp = Inputs { values };
    let s = t.sample;
    let l = t.layer;
    let mut out = Vec::new();
    match t.kind {
        TaskKind::Forward => {
            let x = inp.assemble(&layer_input_pieces(plan, s, l, t.input), t.input)?;
            let w = inp.weight(l, t.output, t.input)?;
            let b = if t.input.start == 0 {
                Some(inp.assemble(&bias_pieces(plan, l, t.output), t.output)?)
            } else {
                None
            };
            let z = kernels::forward_partial(&w, &x, b.as_deref())?;
            out.push((keys::partial_z(s, l, t.output, t.input), Value::block(z)));
        }
        TaskKind::Activation => {
            let z = inp.assemble(&z_pieces(plan, s, l, t.output), t.output)?;
            out.push((
                keys::hidden(s, l, t.output),
                Value::block(plan.activation.apply(&z)),
            ));
        }
        TaskKind::Loss => {
            let y = inp.assemble(&z_pieces(plan, s, l, t.output), t.output)?;
            let label = inp.block(&keys::label(s))?;
            if t.output.end > label.len() {
                return Err(KernelError::Shape(format!(
                    "label {} shorter than {}",
                    label.len(),
                    t.output
                ))
                .into());
            }
            let (loss, gy) = kernels::mse_loss(&y, &label[t.output.range()])?;
            out.push((keys::output(s, t.output), Value::block(y)));
            out.push((keys::loss_value(s, t.output), Value::block(vec![loss])));
            out.push((keys::loss_grad(s, t.output), Value::block(gy)));
        }
        TaskKind::Backward => {
            let upstream = inp.assemble(&upstream_grad_pieces(plan, s, l, t.output), t.output)?;
            let gz = if l == plan.depth() {
                upstream
            } else {
                let z = inp.assemble(&z_pieces(plan, s, l, t.output), t.output)?;
                plan.activation.backward(&upstream, &z)?
            };
            let x = inp.assemble(&layer_input_pieces(plan, s, l, t.input), t.input)?;
            let w = inp.weight(l, t.output, t.input)?;
            let g = kernels::backward_block(&gz, &x, &w)?;
            out.push((
                keys::grad_weight(l, t.output, t.input),
                Value::block(g.weight.data),
            ));
            if let Some(gb) = g.bias {
                out.push((keys::grad_bias(l, t.output), Value::block(gb.data)));
            }
            if l > 1 {
                out.push((
                    keys::partial_gx(s, l, t.input, t.output),
                    Value::block(g.input),
                ));
            }
        }
        TaskKind::Update(ParamKind::Weight) => {
            let p = inp.weight(l, t.output, t.input)?;
            let gkey = keys::grad_weight(l, t.output, t.input);
            let g = ParamBlock::weight(l, t.output, t.input, inp.block(&gkey)?.to_vec())?;
            let next = kernels::sgd_update(&p, &g, plan.eta)?;
            out.push((keys::update_result(&t.id()), Value::block(next.data)));
        }
        TaskKind::Update(ParamKind::Bias) => {
            let p = ParamBlock::bias(
                l,
                t.output,
                inp.block(&keys::param_bias(l, t.output))?.to_vec(),
            )?;
            let g = inp.assemble(&bias_grad_pieces(plan, l, t.output), t.output)?;
            let g = ParamBlock::bias(l, t.output, g)?;
            let next = kernels::sgd_update(&p, &g, plan.eta)?;
            out.push((keys::update_result(&t.id()), Value::block(next.data)));
        }
    }
    Ok(out)
}

/// Outputs of one task, or why it could not run.
pub type Computed = Result<Vec<(String, Value)>, ExecError>;

/// Fetches inputs (first tuple per key) and computes. `Ok(None)` means an
/// input vanished between the precondition check and the read.
pub fn execute<R: Runtime>(
    rt: &R,
    plan: &TrainingPlan,
    t: &TaskDesc,
) -> Result<Option<Computed>, TsError> {
    let mut values = HashMap::new();
    for k in input_keys(plan, t) {
        match rt.try_read(&Pattern::exact(k.as_str()))? {
            Some(tuple) => {
                values.insert(k, tuple.value);
            }
            None => return Ok(None),
        }
    }
    Ok(Some(compute(plan, t, &values)))
}

/// True when the checkpoint shows the task's sample is already committed.
pub fn is_stale<R: Runtime>(rt: &R, t: &TaskDesc) -> Result<bool, TsError> {
    let Some(tuple) = rt.try_read(&Pattern::exact(keys::CHECKPOINT))? else {
        return Ok(false);
    };
    let Some(rec) = tuple
        .value
        .as_text()
        .and_then(|s| s.parse::<CheckpointRecord>().ok())
    else {
        return Ok(false);
    };
    Ok((t.epoch, t.sample) < (rec.epoch, rec.sample))
}

/// Runs until the tuple space shuts down. Each iteration takes one task
/// from `task`; the done-marker is always the last tuple published.
pub async fn work_loop<R: Runtime>(
    rt: &R,
    plan: &TrainingPlan,
    cfg: &HandlerConfig,
) -> Result<(), TsError> {
    let task_pattern = Pattern::exact(keys::TASK);
    loop {
        let tuple = match rt.get(&task_pattern).await {
            Ok(t) => t,
            Err(TsError::WaitAborted) => return Ok(()),
            Err(e) => return Err(e),
        };
        let desc = match tuple.value.as_text().map(str::parse::<TaskDesc>) {
            Some(Ok(d)) if d.validate(plan.model()).is_ok() => d,
            other => {
                rt.note(Note::ProtocolError {
                    detail: format!("unparseable task {:?} ({other:?})", tuple.value),
                });
                continue;
            }
        };
        let id = desc.id();
        if rt.exists(&desc.done_key())? || is_stale(rt, &desc)? {
            continue;
        }
        let cost = task_cost(&desc, &plan.layout.cost);
        if cost > cfg.capacity {
            rt.put(keys::TASK, tuple.value)?;
            rt.note(Note::Stored { id });
            rt.sleep(cfg.retry_delay).await;
            continue;
        }
        if let Readiness::Missing(_) = check_preconditions(rt, plan, &desc)? {
            match cfg.on_unready {
                OnUnready::Store => {
                    rt.sleep(cfg.retry_delay).await;
                    rt.put(keys::TASK, tuple.value)?;
                    rt.note(Note::Stored { id });
                }
                OnUnready::Discard => rt.note(Note::Abandoned { id }),
            }
            continue;
        }
        let outputs = match execute(rt, plan, &desc)? {
            None => {
                rt.note(Note::Abandoned { id });
                continue;
            }
            Some(Err(e)) => {
                rt.note(Note::ProtocolError {
                    detail: format!("{id}: {e}"),
                });
                continue;
            }
            Some(Ok(o)) => o,
        };
        rt.sleep(cost as f64 / rt.speed() + cfg.overhead).await;
        if is_stale(rt, &desc)? {
            rt.note(Note::Abandoned { id });
            continue;
        }
        for (k, v) in outputs {
            rt.put(&k, v)?;
        }
        rt.put(&desc.done_key(), Value::Unit)?;
        rt.note(Note::TaskDone { id });
    }
}
