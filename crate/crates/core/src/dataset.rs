//! Synthetic regression data from a random linear teacher.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::span::Span;
use crate::taskgraph::keys;
use crate::tuplespace::Value;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Vec<Vec<f32>>,
    pub targets: Vec<Vec<f32>>,
    /// Teacher weights, row-major `out x in`.
    pub w_star: Vec<f32>,
    pub b_star: Vec<f32>,
}

impl Dataset {
    /// `w* ~ N(0,1)/sqrt(in)`, `b* ~ N(0,1)`, `x ~ N(0,1)`, `t = w* x + b*`.
    pub fn generate(in_dim: usize, out_dim: usize, count: usize, rng: &mut impl Rng) -> Self {
        let scale = 1.0 / (in_dim as f64).sqrt();
        let w_star: Vec<f32> = (0..in_dim * out_dim)
            .map(|_| (rng.sample::<f64, _>(StandardNormal) * scale) as f32)
            .collect();
        let b_star: Vec<f32> = (0..out_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
            .collect();
        let mut inputs = Vec::with_capacity(count);
        let mut targets = Vec::with_capacity(count);
        for _ in 0..count {
            let x: Vec<f32> = (0..in_dim)
                .map(|_| rng.sample::<f64, _>(StandardNormal) as f32)
                .collect();
            let t = (0..out_dim)
                .map(|o| {
                    let row = &w_star[o * in_dim..(o + 1) * in_dim];
                    let dot: f64 = row.iter().zip(&x).map(|(&w, &v)| w as f64 * v as f64).sum();
                    (dot + b_star[o] as f64) as f32
                })
                .collect();
            inputs.push(x);
            targets.push(t);
        }
        Self {
            inputs,
            targets,
            w_star,
            b_star,
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    /// `x:{s}:0-N` and `t:{s}` for every sample.
    pub fn to_tuples(&self) -> Vec<(String, Value)> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (s, (x, t)) in self.inputs.iter().zip(&self.targets).enumerate() {
            out.push((keys::input(s, Span::full(x.len())), Value::block(x.clone())));
            out.push((keys::label(s), Value::block(t.clone())));
        }
        out
    }
}
