//! Dense model parameters and their block-wise tuple form.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::span::Span;
use crate::taskgraph::{keys, Layout, ModelSpec};
use crate::tuplespace::Value;

#[derive(Debug, Error)]
pub enum ParamsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("parameter tuple {0} missing")]
    Missing(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub weight: Vec<f32>,
    pub bias: Vec<f32>,
}

impl LayerParams {
    pub fn weight_block(&self, rows: Span, cols: Span) -> Vec<f32> {
        let mut out = Vec::with_capacity(rows.len() * cols.len());
        for r in rows.range() {
            out.extend_from_slice(
                &self.weight[r * self.cols + cols.start..r * self.cols + cols.end],
            );
        }
        out
    }

    pub fn set_weight_block(
        &mut self,
        rows: Span,
        cols: Span,
        data: &[f32],
    ) -> Result<(), ParamsError> {
        if data.len() != rows.len() * cols.len() || rows.end > self.rows || cols.end > self.cols {
            return Err(ParamsError::Shape(format!(
                "block {rows}x{cols} with {} values",
                data.len()
            )));
        }
        for (k, r) in rows.range().enumerate() {
            let dst = r * self.cols;
            self.weight[dst + cols.start..dst + cols.end]
                .copy_from_slice(&data[k * cols.len()..(k + 1) * cols.len()]);
        }
        Ok(())
    }

    pub fn set_bias_block(&mut self, rows: Span, data: &[f32]) -> Result<(), ParamsError> {
        if data.len() != rows.len() || rows.end > self.rows {
            return Err(ParamsError::Shape(format!(
                "bias {rows} with {} values",
                data.len()
            )));
        }
        self.bias[rows.range()].copy_from_slice(data);
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub layers: Vec<LayerParams>,
}

/// Element-wise comparison of two parameter sets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ParamDiff {
    pub max_abs: f64,
    pub max_rel: f64,
    pub mismatched: usize,
    pub total: usize,
}

impl ParamDiff {
    pub fn exact(&self) -> bool {
        self.mismatched == 0
    }
}

impl Params {
    /// Weights uniform in `±1/sqrt(in)`, drawn row-major layer by layer;
    /// biases zero.
    pub fn init(model: &ModelSpec, rng: &mut impl Rng) -> Self {
        let layers = model
            .layers
            .iter()
            .map(|d| {
                let a = 1.0 / (d.in_dim as f32).sqrt();
                LayerParams {
                    rows: d.out_dim,
                    cols: d.in_dim,
                    weight: (0..d.out_dim * d.in_dim)
                        .map(|_| rng.random_range(-a..=a))
                        .collect(),
                    bias: vec![0.0; d.out_dim],
                }
            })
            .collect();
        Self { layers }
    }

    pub fn layer(&self, l: usize) -> &LayerParams {
        &self.layers[l - 1]
    }

    pub fn layer_mut(&mut self, l: usize) -> &mut LayerParams {
        &mut self.layers[l - 1]
    }

    pub fn check_model(&self, model: &ModelSpec) -> Result<(), ParamsError> {
        let ok = self.layers.len() == model.depth()
            && self.layers.iter().zip(&model.layers).all(|(p, d)| {
                p.rows == d.out_dim
                    && p.cols == d.in_dim
                    && p.weight.len() == d.out_dim * d.in_dim
                    && p.bias.len() == d.out_dim
            });
        if ok {
            Ok(())
        } else {
            Err(ParamsError::Shape("parameters do not fit the model".into()))
        }
    }

    /// One tuple per weight block and bias block of the layout.
    pub fn to_tuples(&self, layout: &Layout) -> Vec<(String, Value)> {
        let mut out = Vec::new();
        for l in 1..=layout.depth() {
            let p = self.layer(l);
            let lay = layout.layer(l);
            for &(i, o) in &lay.blocks {
                out.push((
                    keys::param_weight(l, o, i),
                    Value::block(p.weight_block(o, i)),
                ));
            }
            for &b in &lay.bias_spans {
                out.push((
                    keys::param_bias(l, b),
                    Value::block(p.bias[b.range()].to_vec()),
                ));
            }
        }
        out
    }

    /// Reassembles dense parameters from block tuples.
    pub fn from_blocks(
        layout: &Layout,
        lookup: impl Fn(&str) -> Option<Vec<f32>>,
    ) -> Result<Self, ParamsError> {
        let mut params = Params {
            layers: layout
                .model
                .layers
                .iter()
                .map(|d| LayerParams {
                    rows: d.out_dim,
                    cols: d.in_dim,
                    weight: vec![0.0; d.out_dim * d.in_dim],
                    bias: vec![0.0; d.out_dim],
                })
                .collect(),
        };
        for l in 1..=layout.depth() {
            let lay = layout.layer(l);
            for &(i, o) in &lay.blocks {
                let key = keys::param_weight(l, o, i);
                let data = lookup(&key).ok_or(ParamsError::Missing(key))?;
                params.layer_mut(l).set_weight_block(o, i, &data)?;
            }
            for &b in &lay.bias_spans {
                let key = keys::param_bias(l, b);
                let data = lookup(&key).ok_or(ParamsError::Missing(key))?;
                params.layer_mut(l).set_bias_block(b, &data)?;
            }
        }
        Ok(params)
    }

    pub fn compare(&self, other: &Params) -> Result<ParamDiff, ParamsError> {
        if self.layers.len() != other.layers.len() {
            return Err(ParamsError::Shape(format!(
                "{} layers vs {}",
                self.layers.len(),
                other.layers.len()
            )));
        }
        let mut diff = ParamDiff {
            max_abs: 0.0,
            max_rel: 0.0,
            mismatched: 0,
            total: 0,
        };
        for (k, (a, b)) in self.layers.iter().zip(&other.layers).enumerate() {
            if a.rows != b.rows
                || a.cols != b.cols
                || a.weight.len() != b.weight.len()
                || a.bias.len() != b.bias.len()
            {
                return Err(ParamsError::Shape(format!(
                    "layer {}: {}x{} vs {}x{}",
                    k + 1,
                    a.rows,
                    a.cols,
                    b.rows,
                    b.cols
                )));
            }
            let pairs = a
                .weight
                .iter()
                .zip(&b.weight)
                .chain(a.bias.iter().zip(&b.bias));
            for (&x, &y) in pairs {
                diff.total += 1;
                if x.to_bits() != y.to_bits() {
                    diff.mismatched += 1;
                }
                let abs = (x as f64 - y as f64).abs();
                let scale = (x as f64).abs().max((y as f64).abs());
                diff.max_abs = diff.max_abs.max(abs);
                if scale > 0.0 {
                    diff.max_rel = diff.max_rel.max(abs / scale);
                }
            }
        }
        Ok(diff)
    }

    pub fn save(&self, path: &Path) -> Result<(), ParamsError> {
        fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ParamsError> {
        Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
    }
}
