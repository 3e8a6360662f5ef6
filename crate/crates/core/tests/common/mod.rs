#![allow(dead_code)]

pub mod space;

use std::collections::HashMap;

use acan_core::handler;
use acan_core::kernels::Activation;
use acan_core::manager::Stage;
use acan_core::params::Params;
use acan_core::plan::TrainingPlan;
use acan_core::scenario::RunConfig;
use acan_core::span::Span;
use acan_core::taskgraph::{
    build_prototypes, keys, partition, task_cost, CostModel, ModelSpec, TaskKind,
};
use acan_core::tuplespace::Value;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Small two-layer setup that still splits into many blocks.
pub fn tiny_config(seed: u64) -> RunConfig {
    let mut c = RunConfig::exp1();
    c.model = ModelSpec::two_layer(8);
    c.cost = CostModel {
        max_task_size: 4,
        loss_weight: 2.0,
    };
    c.samples = 4;
    c.epochs = 2;
    c.eta = 0.02;
    c.pouch_size = 10;
    c.scenario.seed = seed;
    c
}

/// Runs one sample through every stage by calling the handler's pure
/// `compute` in pipeline order over a plain map. Returns the map after the
/// update stage (parameters not yet overwritten).
pub fn drive_sample(
    plan: &TrainingPlan,
    params: &Params,
    x: &[f32],
    t: &[f32],
) -> HashMap<String, Value> {
    let mut space: HashMap<String, Value> = params.to_tuples(&plan.layout).into_iter().collect();
    space.insert(
        format!("x:0:{}", Span::full(x.len())),
        Value::block(x.to_vec()),
    );
    space.insert("t:0".to_string(), Value::block(t.to_vec()));
    for stage in Stage::pipeline(plan.depth()) {
        let tasks = stage.tasks(plan, 0, 0);
        let mut produced = Vec::new();
        for task in &tasks {
            let inputs: HashMap<String, Value> = handler::input_keys(plan, task)
                .into_iter()
                .map(|k| {
                    let v = space
                        .get(&k)
                        .unwrap_or_else(|| panic!("{k} missing for {task}"))
                        .clone();
                    (k, v)
                })
                .collect();
            produced.extend(handler::compute(plan, task, &inputs).expect("compute"));
        }
        // Stage-gated: outputs become visible once the stage is complete.
        space.extend(produced);
    }
    space
}

/// Dense f64 reference loss for finite differences.
pub fn dense_loss(
    model: &ModelSpec,
    act: Activation,
    w: &[Vec<f64>],
    b: &[Vec<f64>],
    x: &[f64],
    t: &[f64],
) -> f64 {
    let mut a = x.to_vec();
    for (l, d) in model.layers.iter().enumerate() {
        let mut z = vec![0.0; d.out_dim];
        for (o, zo) in z.iter_mut().enumerate() {
            *zo = b[l][o]
                + (0..d.in_dim)
                    .map(|i| w[l][o * d.in_dim + i] * a[i])
                    .sum::<f64>();
        }
        if l + 1 < model.depth() && act == Activation::Relu {
            z.iter_mut().for_each(|v| *v = v.max(0.0));
        }
        a = z;
    }
    a.iter().zip(t).map(|(y, t)| (y - t).powi(2)).sum()
}

/// Pre-activations of every hidden layer, to keep finite differences away
/// from relu kinks.
pub fn hidden_preacts(model: &ModelSpec, w: &[Vec<f64>], b: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let mut a = x.to_vec();
    let mut out = Vec::new();
    for (l, d) in model.layers.iter().enumerate() {
        let z: Vec<f64> = (0..d.out_dim)
            .map(|o| {
                b[l][o]
                    + (0..d.in_dim)
                        .map(|i| w[l][o * d.in_dim + i] * a[i])
                        .sum::<f64>()
            })
            .collect();
        if l + 1 < model.depth() {
            out.extend(&z);
        }
        a = z.iter().map(|v| v.max(0.0)).collect();
    }
    out
}

/// Tiling and cost-bound check for one `(out, in, max_task_size)` triple.
pub fn check_partition(m: usize, n: usize, max: usize) -> Result<(), String> {
    let cm = CostModel {
        max_task_size: max,
        loss_weight: 2.0,
    };
    let model = ModelSpec::new(&[(n, m)]).map_err(|e| e.to_string())?;
    for proto in build_prototypes(&model, 0, 0) {
        if proto.kind == TaskKind::Loss && max < 2 {
            continue;
        }
        let leaves = partition(&proto, &cm).map_err(|e| e.to_string())?;
        let rect = proto.kind.is_rectangular();
        let width = if rect { n } else { 1 };
        let mut cover = vec![0u32; m * width];
        for t in &leaves {
            let c = task_cost(t, &cm);
            if c > max {
                return Err(format!("{t} costs {c} > {max}"));
            }
            let cols = if rect { t.input.range() } else { 0..1 };
            for o in t.output.range() {
                for i in cols.clone() {
                    cover[o * width + i] += 1;
                }
            }
        }
        if let Some(pos) = cover.iter().position(|&c| c != 1) {
            return Err(format!(
                "{} over {m}x{n} max {max}: cell {pos} covered {} times",
                proto.kind, cover[pos]
            ));
        }
    }
    Ok(())
}

/// Checks `count` random (out, in, max) triples; returns the first failure.
pub fn partition_sweep(seed: u64, count: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..count {
        let m = rng.random_range(1..=300);
        let n = rng.random_range(1..=300);
        let max = rng.random_range(1..=1024);
        check_partition(m, n, max)?;
    }
    Ok(())
}

fn to_f64(v: &[f32]) -> Vec<f64> {
    v.iter().map(|&x| x as f64).collect()
}

/// Assembled block gradients against central finite differences of the
/// dense loss for one random model. Returns the worst error relative to the
/// largest gradient magnitude.
pub fn gradient_check(seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=3);
    let mut dims = Vec::with_capacity(depth);
    let mut prev = rng.random_range(1..=8);
    for _ in 0..depth {
        let out = rng.random_range(1..=8);
        dims.push((prev, out));
        prev = out;
    }
    let model = ModelSpec::new(&dims).map_err(|e| e.to_string())?;
    let cost = CostModel {
        max_task_size: rng.random_range(2..=16),
        loss_weight: 2.0,
    };
    let plan =
        TrainingPlan::new(&model, &cost, 0.01, Activation::Relu).map_err(|e| e.to_string())?;
    let mut params = Params::init(&model, &mut rng);
    for lp in &mut params.layers {
        lp.bias
            .iter_mut()
            .for_each(|b| *b = rng.random_range(-0.5..0.5));
    }
    let w: Vec<Vec<f64>> = params.layers.iter().map(|l| to_f64(&l.weight)).collect();
    let b: Vec<Vec<f64>> = params.layers.iter().map(|l| to_f64(&l.bias)).collect();
    let t: Vec<f32> = (0..model.output_dim())
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    // Redraw the input until every hidden unit is clear of the relu kink.
    let x = loop {
        let x: Vec<f32> = (0..model.input_dim())
            .map(|_| rng.random_range(-1.0..1.0))
            .collect();
        if hidden_preacts(&model, &w, &b, &to_f64(&x))
            .iter()
            .all(|z| z.abs() > 0.05)
        {
            break x;
        }
    };
    let (x64, t64) = (to_f64(&x), to_f64(&t));

    let space = drive_sample(&plan, &params, &x, &t);
    let block = |k: &str| -> Result<Vec<f32>, String> {
        space
            .get(k)
            .and_then(|v| v.as_block())
            .map(<[f32]>::to_vec)
            .ok_or_else(|| format!("{k} missing"))
    };
    let mut analytic: Vec<(usize, bool, usize, f64)> = Vec::new();
    for l in 1..=depth {
        let lay = plan.layout.layer(l);
        let cols = lay.dims.in_dim;
        for &(i, o) in &lay.blocks {
            let g = block(&keys::grad_weight(l, o, i))?;
            for (r, row) in o.range().enumerate() {
                for (c, col) in i.range().enumerate() {
                    analytic.push((l - 1, true, row * cols + col, g[r * i.len() + c] as f64));
                }
            }
        }
        for o in lay.bias_owner_spans() {
            let g = block(&keys::grad_bias(l, o))?;
            for (r, row) in o.range().enumerate() {
                analytic.push((l - 1, false, row, g[r] as f64));
            }
        }
    }
    let expected: usize = model
        .layers
        .iter()
        .map(|d| d.in_dim * d.out_dim + d.out_dim)
        .sum();
    if analytic.len() != expected {
        return Err(format!(
            "assembled {} gradient entries, expected {expected}",
            analytic.len()
        ));
    }

    let eps = 1e-5;
    let mut worst = 0.0f64;
    let mut scale = 0.0f64;
    for &(l, is_w, idx, g) in &analytic {
        let (mut wp, mut bp) = (w.clone(), b.clone());
        let (mut wm, mut bm) = (w.clone(), b.clone());
        if is_w {
            wp[l][idx] += eps;
            wm[l][idx] -= eps;
        } else {
            bp[l][idx] += eps;
            bm[l][idx] -= eps;
        }
        let fd = (dense_loss(&model, Activation::Relu, &wp, &bp, &x64, &t64)
            - dense_loss(&model, Activation::Relu, &wm, &bm, &x64, &t64))
            / (2.0 * eps);
        worst = worst.max((fd - g).abs());
        scale = scale.max(fd.abs());
    }
    Ok(worst / scale.max(1e-3))
}
