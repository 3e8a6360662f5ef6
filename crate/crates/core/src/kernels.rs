//! Blocked linear-layer math executed by handlers and by the sequential
//! reference trainer.
//!
//! Every reduction runs in ascending index order with an `f32` accumulator.
//! Cross-block sums go through [`reduce_partials`], which adds the blocks
//! covering an element in ascending order of their `order` key. Two
//! callers that feed the same blocks therefore get bit-identical results,
//! however the blocks were scheduled.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("kernel shape error: {0}")]
    Shape(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
}

fn shape(msg: impl Into<String>) -> KernelError {
    KernelError::Shape(msg.into())
}

fn finite(values: &[f32], what: &'static str) -> Result<(), KernelError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(KernelError::NonFinite(what))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Weight,
    Bias,
}

/// A rectangular weight block (row-major, rows = outputs, cols = inputs) or
/// a bias segment (`cols` empty).
#[derive(Debug, Clone, PartialEq)]
pub struct ParamBlock {
    pub layer: usize,
    pub kind: ParamKind,
    pub rows: Span,
    pub cols: Span,
    pub data: Vec<f32>,
}

impl ParamBlock {
    pub fn weight(
        layer: usize,
        rows: Span,
        cols: Span,
        data: Vec<f32>,
    ) -> Result<Self, KernelError> {
        if data.len() != rows.len() * cols.len() {
            return Err(shape(format!(
                "weight block {rows}x{cols} needs {} values, got {}",
                rows.len() * cols.len(),
                data.len()
            )));
        }
        Ok(Self {
            layer,
            kind: ParamKind::Weight,
            rows,
            cols,
            data,
        })
    }

    pub fn bias(layer: usize, rows: Span, data: Vec<f32>) -> Result<Self, KernelError> {
        if data.len() != rows.len() {
            return Err(shape(format!(
                "bias segment {rows} needs {} values, got {}",
                rows.len(),
                data.len()
            )));
        }
        Ok(Self {
            layer,
            kind: ParamKind::Bias,
            rows,
            cols: Span::EMPTY,
            data,
        })
    }

    fn at(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols.len() + c]
    }

    fn same_ranges(&self, other: &ParamBlock) -> bool {
        self.layer == other.layer
            && self.kind == other.kind
            && self.rows == other.rows
            && self.cols == other.cols
    }
}

/// Elementwise nonlinearity between hidden layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    pub fn apply(self, z: &[f32]) -> Vec<f32> {
        match self {
            Activation::Relu => relu(z),
            Activation::Identity => z.to_vec(),
        }
    }

    pub fn backward(self, gh: &[f32], z: &[f32]) -> Result<Vec<f32>, KernelError> {
        match self {
            Activation::Relu => relu_backward(gh, z),
            Activation::Identity => {
                if gh.len() != z.len() {
                    return Err(shape("activation backward length mismatch"));
                }
                Ok(gh.to_vec())
            }
        }
    }
}

/// Partial pre-activation of one block:
/// `z[o] = sum_i W[o,i] * x[i] (+ b[o])` over the block's columns.
///
/// The block whose columns start at 0 owns the bias; `b` must be given for
/// it and only for it.
pub fn forward_partial(
    w: &ParamBlock,
    x: &[f32],
    b: Option<&[f32]>,
) -> Result<Vec<f32>, KernelError> {
    if w.kind != ParamKind::Weight {
        return Err(shape("forward needs a weight block"));
    }
    if x.len() != w.cols.len() {
        return Err(shape(format!(
            "input length {} vs block cols {}",
            x.len(),
            w.cols.len()
        )));
    }
    let owner = w.cols.start == 0;
    match b {
        Some(_) if !owner => {
            return Err(shape(format!(
                "bias given to non-owner block cols {}",
                w.cols
            )))
        }
        None if owner => return Err(shape("bias-owner block needs its bias")),
        Some(b) if b.len() != w.rows.len() => {
            return Err(shape(format!(
                "bias length {} vs block rows {}",
                b.len(),
                w.rows.len()
            )))
        }
        _ => {}
    }
    let out: Vec<f32> = (0..w.rows.len())
        .map(|r| {
            let mut acc = 0.0f32;
            for (c, &xi) in x.iter().enumerate() {
                acc += w.at(r, c) * xi;
            }
            match b {
                Some(b) => acc + b[r],
                None => acc,
            }
        })
        .collect();
    finite(&out, "forward_partial")?;
    Ok(out)
}

pub fn relu(z: &[f32]) -> Vec<f32> {
    z.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

/// Squared-error loss of a block and its gradient `2 (y - t)`.
pub fn mse_loss(y: &[f32], t: &[f32]) -> Result<(f32, Vec<f32>), KernelError> {
    if y.len() != t.len() {
        return Err(shape(format!(
            "output length {} vs target {}",
            y.len(),
            t.len()
        )));
    }
    let mut loss = 0.0f32;
    let mut gy = Vec::with_capacity(y.len());
    for (&a, &b) in y.iter().zip(t) {
        let d = a - b;
        loss += d * d;
        gy.push(2.0 * d);
    }
    finite(&gy, "mse_loss")?;
    if !loss.is_finite() {
        return Err(KernelError::NonFinite("mse_loss"));
    }
    Ok((loss, gy))
}

pub fn relu_backward(gh: &[f32], z: &[f32]) -> Result<Vec<f32>, KernelError> {
    if gh.len() != z.len() {
        return Err(shape(format!(
            "gradient length {} vs pre-activation {}",
            gh.len(),
            z.len()
        )));
    }
    Ok(gh
        .iter()
        .zip(z)
        .map(|(&g, &v)| if v > 0.0 { g } else { 0.0 })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockGrads {
    pub weight: ParamBlock,
    /// Present only for the bias-owner block.
    pub bias: Option<ParamBlock>,
    /// This block's share of the gradient w.r.t. the layer input, over `cols`.
    pub input: Vec<f32>,
}

pub fn backward_block(gz: &[f32], x: &[f32], w: &ParamBlock) -> Result<BlockGrads, KernelError> {
    if w.kind != ParamKind::Weight {
        return Err(shape("backward needs a weight block"));
    }
    if gz.len() != w.rows.len() || x.len() != w.cols.len() {
        return Err(shape(format!(
            "gradient {} / input {} vs block {}x{}",
            gz.len(),
            x.len(),
            w.rows,
            w.cols
        )));
    }
    let mut gw = Vec::with_capacity(gz.len() * x.len());
    for &g in gz {
        gw.extend(x.iter().map(|&xi| g * xi));
    }
    let input: Vec<f32> = (0..x.len())
        .map(|c| {
            let mut acc = 0.0f32;
            for (r, &g) in gz.iter().enumerate() {
                acc += w.at(r, c) * g;
            }
            acc
        })
        .collect();
    finite(&gw, "backward_block")?;
    finite(&input, "backward_block")?;
    let bias = if w.cols.start == 0 {
        Some(ParamBlock::bias(w.layer, w.rows, gz.to_vec())?)
    } else {
        None
    };
    Ok(BlockGrads {
        weight: ParamBlock::weight(w.layer, w.rows, w.cols, gw)?,
        bias,
        input,
    })
}

/// `p - eta * g` over identical ranges.
pub fn sgd_update(p: &ParamBlock, g: &ParamBlock, eta: f32) -> Result<ParamBlock, KernelError> {
    if !p.same_ranges(g) || p.data.len() != g.data.len() {
        return Err(shape(format!(
            "update ranges differ: {}x{} vs {}x{}",
            p.rows, p.cols, g.rows, g.cols
        )));
    }
    let data: Vec<f32> = p
        .data
        .iter()
        .zip(&g.data)
        .map(|(&a, &b)| a - eta * b)
        .collect();
    finite(&data, "sgd_update")?;
    Ok(ParamBlock { data, ..p.clone() })
}

/// One block's contribution to a cross-block sum.
#[derive(Debug, Clone, Copy)]
pub struct Partial<'a> {
    /// Elements this block covers.
    pub range: Span,
    /// Position in the summation order (the block's start on the summed axis).
    pub order: usize,
    pub values: &'a [f32],
}

/// Sums the blocks covering each element of `target`, adding them in
/// ascending `order`. Every element must be covered at least once.
pub fn reduce_partials(target: Span, parts: &[Partial<'_>]) -> Result<Vec<f32>, KernelError> {
    let mut sorted: Vec<&Partial<'_>> = parts.iter().collect();
    sorted.sort_by_key(|p| (p.order, p.range.start));
    let mut acc: Vec<Option<f32>> = vec![None; target.len()];
    for p in sorted {
        if p.values.len() != p.range.len() {
            return Err(shape(format!(
                "partial over {} has {} values",
                p.range,
                p.values.len()
            )));
        }
        let Some(overlap) = p.range.intersect(target) else {
            continue;
        };
        for i in overlap.range() {
            let v = p.values[i - p.range.start];
            let slot = &mut acc[i - target.start];
            *slot = Some(match *slot {
                None => v,
                Some(a) => a + v,
            });
        }
    }
    let out: Option<Vec<f32>> = acc.into_iter().collect();
    let out = out.ok_or_else(|| shape(format!("partials do not cover {target}")))?;
    finite(&out, "reduce_partials")?;
    Ok(out)
}
