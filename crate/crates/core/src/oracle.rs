//! Sequential reference trainer: plain SGD over the same blocks and the
//! same summation order as the distributed pipeline, with no tuple space.

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::kernels::{self, KernelError, ParamBlock, Partial};
use crate::params::Params;
use crate::plan::TrainingPlan;
use crate::span::Span;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub sample: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleRun {
    pub params: Params,
    pub losses: Vec<LossRecord>,
}

/// Per-block partial sums of one layer, keyed like the layout's blocks.
struct LayerPass {
    z: Vec<Vec<f32>>,
}

fn sum_z(
    plan: &TrainingPlan,
    l: usize,
    pass: &LayerPass,
    target: Span,
) -> Result<Vec<f32>, KernelError> {
    let parts: Vec<Partial<'_>> = plan
        .layout
        .layer(l)
        .blocks
        .iter()
        .zip(&pass.z)
        .filter(|((_, o), _)| o.intersect(target).is_some())
        .map(|(&(i, o), v)| Partial {
            range: o,
            order: i.start,
            values: v,
        })
        .collect();
    kernels::reduce_partials(target, &parts)
}

fn concat(spans: &[Span], pieces: &[Vec<f32>], len: usize) -> Vec<f32> {
    let mut out = vec![0.0; len];
    for (s, p) in spans.iter().zip(pieces) {
        out[s.range()].copy_from_slice(p);
    }
    out
}

/// One SGD step on one sample. Returns the summed block losses.
pub fn step(
    plan: &TrainingPlan,
    params: &mut Params,
    x: &[f32],
    t: &[f32],
) -> Result<f64, KernelError> {
    let depth = plan.depth();
    let mut acts: Vec<Vec<f32>> = vec![x.to_vec()];
    let mut passes: Vec<LayerPass> = Vec::with_capacity(depth);
    let mut loss = 0.0f64;
    let mut gy = Vec::new();

    for l in 1..=depth {
        let lay = plan.layout.layer(l);
        let p = params.layer(l);
        let a = &acts[l - 1];
        let mut z = Vec::with_capacity(lay.blocks.len());
        for &(i, o) in &lay.blocks {
            let w = ParamBlock::weight(l, o, i, p.weight_block(o, i))?;
            let b = (i.start == 0).then(|| p.bias[o.range()].to_vec());
            z.push(kernels::forward_partial(&w, &a[i.range()], b.as_deref())?);
        }
        let pass = LayerPass { z };
        let mut heads = Vec::with_capacity(lay.head_spans.len());
        for &o in &lay.head_spans {
            let zo = sum_z(plan, l, &pass, o)?;
            if l < depth {
                heads.push(plan.activation.apply(&zo));
            } else {
                let (lv, g) = kernels::mse_loss(&zo, &t[o.range()])?;
                loss += lv as f64;
                heads.push(g);
            }
        }
        let full = concat(&lay.head_spans, &heads, lay.dims.out_dim);
        if l < depth {
            acts.push(full);
        } else {
            gy = full;
        }
        passes.push(pass);
    }

    // Gradients for every block first; parameters change only afterwards.
    let mut grad_w: Vec<Vec<Vec<f32>>> = vec![Vec::new(); depth];
    let mut grad_b: Vec<Vec<(Span, Vec<f32>)>> = vec![Vec::new(); depth];
    let mut gx_next: Vec<(Span, Span, Vec<f32>)> = Vec::new();
    for l in (1..=depth).rev() {
        let lay = plan.layout.layer(l);
        let p = params.layer(l);
        let a = &acts[l - 1];
        let mut gx_here = Vec::new();
        for &(i, o) in &lay.blocks {
            let gz = if l == depth {
                gy[o.range()].to_vec()
            } else {
                let parts: Vec<Partial<'_>> = gx_next
                    .iter()
                    .filter(|(ni, _, _)| ni.intersect(o).is_some())
                    .map(|(ni, no, v)| Partial {
                        range: *ni,
                        order: no.start,
                        values: v,
                    })
                    .collect();
                let gh = kernels::reduce_partials(o, &parts)?;
                let z = sum_z(plan, l, &passes[l - 1], o)?;
                plan.activation.backward(&gh, &z)?
            };
            let w = ParamBlock::weight(l, o, i, p.weight_block(o, i))?;
            let g = kernels::backward_block(&gz, &a[i.range()], &w)?;
            grad_w[l - 1].push(g.weight.data);
            if let Some(gb) = g.bias {
                grad_b[l - 1].push((o, gb.data));
            }
            if l > 1 {
                gx_here.push((i, o, g.input));
            }
        }
        gx_next = gx_here;
    }

    for l in 1..=depth {
        let lay = plan.layout.layer(l);
        let mut updated = Vec::with_capacity(lay.blocks.len());
        for (&(i, o), g) in lay.blocks.iter().zip(&grad_w[l - 1]) {
            let w = ParamBlock::weight(l, o, i, params.layer(l).weight_block(o, i))?;
            let g = ParamBlock::weight(l, o, i, g.clone())?;
            updated.push((i, o, kernels::sgd_update(&w, &g, plan.eta)?.data));
        }
        let mut bias_updates = Vec::with_capacity(lay.bias_spans.len());
        for &b in &lay.bias_spans {
            let parts: Vec<Partial<'_>> = grad_b[l - 1]
                .iter()
                .filter(|(o, _)| o.intersect(b).is_some())
                .map(|(o, v)| Partial {
                    range: *o,
                    order: o.start,
                    values: v,
                })
                .collect();
            let g = ParamBlock::bias(l, b, kernels::reduce_partials(b, &parts)?)?;
            let cur = ParamBlock::bias(l, b, params.layer(l).bias[b.range()].to_vec())?;
            bias_updates.push((b, kernels::sgd_update(&cur, &g, plan.eta)?.data));
        }
        let lp = params.layer_mut(l);
        for (i, o, data) in updated {
            lp.set_weight_block(o, i, &data)
                .map_err(|e| KernelError::Shape(e.to_string()))?;
        }
        for (b, data) in bias_updates {
            lp.bias[b.range()].copy_from_slice(&data);
        }
    }
    Ok(loss)
}

pub fn train(
    plan: &TrainingPlan,
    init: Params,
    data: &Dataset,
    epochs: usize,
) -> Result<OracleRun, KernelError> {
    let mut params = init;
    let mut losses = Vec::with_capacity(epochs * data.len());
    for epoch in 0..epochs {
        for (sample, (x, t)) in data.inputs.iter().zip(&data.targets).enumerate() {
            let loss = step(plan, &mut params, x, t)?;
            losses.push(LossRecord {
                epoch,
                sample,
                loss,
            });
        }
    }
    Ok(OracleRun { params, losses })
}

/// `epoch,sample,loss` rows.
pub fn write_loss_csv(path: &Path, rows: &[LossRecord]) -> io::Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if rows.is_empty() {
        w.write_record(["epoch", "sample", "loss"])?;
    }
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()
}
