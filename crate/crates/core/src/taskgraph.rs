//! Declarative micro-task descriptions: prototypes per layer, the cost
//! model, recursive partitioning to a uniform maximum size, and the tuple
//! key schema shared by the manager and handlers.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::kernels::ParamKind;
use crate::span::Span;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TaskError {
    #[error("malformed task {0:?}")]
    Malformed(String),
    #[error("cannot partition {0} below the task size")]
    ImpossiblePartition(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
}

/// Chain of linear layers. Layers are numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub layers: Vec<LayerDims>,
}

impl ModelSpec {
    pub fn new(dims: &[(usize, usize)]) -> Result<Self, TaskError> {
        let spec = Self {
            layers: dims
                .iter()
                .map(|&(in_dim, out_dim)| LayerDims { in_dim, out_dim })
                .collect(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Two dense layers: `n -> n -> 1`.
    pub fn two_layer(n: usize) -> Self {
        Self::new(&[(n, n), (n, 1)]).expect("valid dims")
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        if self.layers.is_empty() {
            return Err(TaskError::InvalidModel("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(TaskError::InvalidModel(format!(
                    "layer {} has a zero dimension",
                    i + 1
                )));
            }
        }
        for (i, pair) in self.layers.windows(2).enumerate() {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(TaskError::InvalidModel(format!(
                    "layer {} output {} does not feed layer {} input {}",
                    i + 1,
                    pair[0].out_dim,
                    i + 2,
                    pair[1].in_dim
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, TaskError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| TaskError::InvalidModel(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self, TaskError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| TaskError::InvalidModel(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Dimensions of layer `l` (1-based).
    pub fn layer(&self, l: usize) -> LayerDims {
        self.layers[l - 1]
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Forward,
    Activation,
    Loss,
    Backward,
    Update(ParamKind),
}

impl TaskKind {
    fn code(self) -> &'static str {
        match self {
            TaskKind::Forward => "F",
            TaskKind::Activation => "A",
            TaskKind::Loss => "L",
            TaskKind::Backward => "B",
            TaskKind::Update(ParamKind::Weight) => "UW",
            TaskKind::Update(ParamKind::Bias) => "Ub",
        }
    }

    fn from_code(s: &str) -> Option<Self> {
        Some(match s {
            "F" => TaskKind::Forward,
            "A" => TaskKind::Activation,
            "L" => TaskKind::Loss,
            "B" => TaskKind::Backward,
            "UW" => TaskKind::Update(ParamKind::Weight),
            "Ub" => TaskKind::Update(ParamKind::Bias),
            _ => return None,
        })
    }

    /// Kinds indexed by an (input, output) rectangle rather than one range.
    pub fn is_rectangular(self) -> bool {
        matches!(
            self,
            TaskKind::Forward | TaskKind::Backward | TaskKind::Update(ParamKind::Weight)
        )
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.code())
    }
}

/// One micro-task, serialized as
/// `{epoch}:{sample}:{kind}:{layer}:{i0}-{i1}:{o0}-{o1}:{attempt}`.
///
/// Single-range kinds (activation, loss, bias update) keep their range in
/// `output` and an empty `input`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TaskDesc {
    pub epoch: usize,
    pub sample: usize,
    pub kind: TaskKind,
    pub layer: usize,
    pub input: Span,
    pub output: Span,
    pub attempt: u32,
}

impl TaskDesc {
    /// Logical identity: the serialized form without the attempt suffix.
    pub fn id(&self) -> String {
        format!(
            "{}:{}:{}:{}:{}:{}",
            self.epoch, self.sample, self.kind, self.layer, self.input, self.output
        )
    }

    pub fn done_key(&self) -> String {
        keys::done(&self.id())
    }

    pub fn with_attempt(mut self, attempt: u32) -> Self {
        self.attempt = attempt;
        self
    }

    /// Checks ranges against the layer dimensions.
    pub fn validate(&self, model: &ModelSpec) -> Result<(), TaskError> {
        let bad = || TaskError::Malformed(self.to_string());
        if self.layer == 0 || self.layer > model.depth() {
            return Err(bad());
        }
        let dims = model.layer(self.layer);
        let last = self.layer == model.depth();
        match self.kind {
            TaskKind::Activation if last => return Err(bad()),
            TaskKind::Loss if !last => return Err(bad()),
            _ => {}
        }
        if self.output.is_empty() || self.output.end > dims.out_dim {
            return Err(bad());
        }
        if self.kind.is_rectangular() {
            if self.input.is_empty() || self.input.end > dims.in_dim {
                return Err(bad());
            }
        } else if self.input != Span::EMPTY {
            return Err(bad());
        }
        Ok(())
    }
}

impl fmt::Display for TaskDesc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.id(), self.attempt)
    }
}

impl FromStr for TaskDesc {
    type Err = TaskError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || TaskError::Malformed(s.to_string());
        let fields: Vec<&str> = s.split(':').collect();
        let [epoch, sample, kind, layer, input, output, attempt] = fields[..] else {
            return Err(bad());
        };
        let desc = TaskDesc {
            epoch: epoch.parse().map_err(|_| bad())?,
            sample: sample.parse().map_err(|_| bad())?,
            kind: TaskKind::from_code(kind).ok_or_else(bad)?,
            layer: layer.parse().map_err(|_| bad())?,
            input: input.parse().map_err(|_| bad())?,
            output: output.parse().map_err(|_| bad())?,
            attempt: attempt.parse().map_err(|_| bad())?,
        };
        if desc.layer == 0 {
            return Err(bad());
        }
        Ok(desc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    pub max_task_size: usize,
    pub loss_weight: f64,
}

impl Default for CostModel {
    fn default() -> Self {
        Self {
            max_task_size: 256,
            loss_weight: 2.0,
        }
    }
}

/// Multiply-accumulate count of a task.
pub fn task_cost(t: &TaskDesc, cm: &CostModel) -> usize {
    match t.kind {
        TaskKind::Forward | TaskKind::Backward | TaskKind::Update(ParamKind::Weight) => {
            t.input.len() * t.output.len()
        }
        TaskKind::Activation | TaskKind::Update(ParamKind::Bias) => t.output.len(),
        TaskKind::Loss => (cm.loss_weight * t.output.len() as f64).ceil() as usize,
    }
}

/// Full-range prototypes for one sample pass, layer by layer.
pub fn build_prototypes(model: &ModelSpec, sample: usize, epoch: usize) -> Vec<TaskDesc> {
    let depth = model.depth();
    let mut out = Vec::new();
    for (idx, dims) in model.layers.iter().enumerate() {
        let layer = idx + 1;
        let full_in = Span::full(dims.in_dim);
        let full_out = Span::full(dims.out_dim);
        let proto = |kind, input| TaskDesc {
            epoch,
            sample,
            kind,
            layer,
            input,
            output: full_out,
            attempt: 0,
        };
        out.push(proto(TaskKind::Forward, full_in));
        out.push(proto(
            if layer == depth {
                TaskKind::Loss
            } else {
                TaskKind::Activation
            },
            Span::EMPTY,
        ));
        out.push(proto(TaskKind::Backward, full_in));
        out.push(proto(TaskKind::Update(ParamKind::Weight), full_in));
        out.push(proto(TaskKind::Update(ParamKind::Bias), Span::EMPTY));
    }
    out
}

/// Splits `t` until every piece costs at most `max_task_size`, emitting
/// leaves in depth-first order. Rectangles split into quadrants
/// (first/first, first/last, last/first, last/last as input/output halves),
/// or into two halves when one side has length 1; single-range tasks split
/// into halves.
pub fn partition(t: &TaskDesc, cm: &CostModel) -> Result<Vec<TaskDesc>, TaskError> {
    let mut out = Vec::new();
    split_into(*t, cm, &mut out)?;
    Ok(out)
}

fn split_into(t: TaskDesc, cm: &CostModel, out: &mut Vec<TaskDesc>) -> Result<(), TaskError> {
    if task_cost(&t, cm) <= cm.max_task_size {
        out.push(t);
        return Ok(());
    }
    let child = |input, output| TaskDesc { input, output, ..t };
    let children: Vec<TaskDesc> = if t.kind.is_rectangular() {
        match (t.input.len() > 1, t.output.len() > 1) {
            (false, false) => return Err(TaskError::ImpossiblePartition(t.to_string())),
            (true, false) => {
                let (a, b) = t.input.halves();
                vec![child(a, t.output), child(b, t.output)]
            }
            (false, true) => {
                let (a, b) = t.output.halves();
                vec![child(t.input, a), child(t.input, b)]
            }
            (true, true) => {
                let (i0, i1) = t.input.halves();
                let (o0, o1) = t.output.halves();
                vec![child(i0, o0), child(i0, o1), child(i1, o0), child(i1, o1)]
            }
        }
    } else {
        if t.output.len() <= 1 {
            return Err(TaskError::ImpossiblePartition(t.to_string()));
        }
        let (a, b) = t.output.halves();
        vec![child(t.input, a), child(t.input, b)]
    };
    for c in children {
        split_into(c, cm, out)?;
    }
    Ok(())
}

/// The tuple key schema.
pub mod keys {
    use crate::span::Span;

    pub const TASK: &str = "task";
    pub const CHECKPOINT: &str = "ckpt";

    pub fn done(id: &str) -> String {
        format!("done:{id}")
    }

    pub fn done_prefix(epoch: usize, sample: usize) -> String {
        format!("done:{epoch}:{sample}:")
    }

    pub fn param_weight(layer: usize, rows: Span, cols: Span) -> String {
        format!("param:{layer}:W:{rows}:{cols}")
    }

    pub fn param_bias(layer: usize, rows: Span) -> String {
        format!("param:{layer}:b:{rows}")
    }

    pub fn input(sample: usize, span: Span) -> String {
        format!("x:{sample}:{span}")
    }

    pub fn label(sample: usize) -> String {
        format!("t:{sample}")
    }

    pub fn partial_z(sample: usize, layer: usize, rows: Span, cols: Span) -> String {
        format!("z:{sample}:{layer}:{rows}:{cols}")
    }

    pub fn hidden(sample: usize, layer: usize, rows: Span) -> String {
        format!("h:{sample}:{layer}:{rows}")
    }

    pub fn output(sample: usize, rows: Span) -> String {
        format!("y:{sample}:{rows}")
    }

    pub fn loss_grad(sample: usize, rows: Span) -> String {
        format!("gy:{sample}:{rows}")
    }

    pub fn partial_gx(sample: usize, layer: usize, cols: Span, rows: Span) -> String {
        format!("gx:{sample}:{layer}:{cols}:{rows}")
    }

    pub fn grad_weight(layer: usize, rows: Span, cols: Span) -> String {
        format!("grad:{layer}:W:{rows}:{cols}")
    }

    pub fn grad_bias(layer: usize, rows: Span) -> String {
        format!("grad:{layer}:b:{rows}")
    }

    pub fn update_result(id: &str) -> String {
        format!("updres:{id}")
    }

    pub fn update_result_prefix(epoch: usize, sample: usize) -> String {
        format!("updres:{epoch}:{sample}:")
    }

    pub fn loss_value(sample: usize, rows: Span) -> String {
        format!("lossval:{sample}:{rows}")
    }

    /// Prefixes of every per-sample intermediate swept at a checkpoint.
    pub fn transient_prefixes(sample: usize) -> Vec<String> {
        ["z", "gx", "h", "y", "gy", "lossval"]
            .iter()
            .map(|p| format!("{p}:{sample}:"))
            .collect()
    }
}

/// Leaf block structure of one layer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerLayout {
    pub dims: LayerDims,
    /// `(input, output)` rectangles shared by forward, backward and weight
    /// update leaves; also the weight parameter blocks.
    pub blocks: Vec<(Span, Span)>,
    /// Activation leaves (hidden layers) or loss leaves (last layer).
    pub head_spans: Vec<Span>,
    /// Bias update leaves; also the bias parameter blocks.
    pub bias_spans: Vec<Span>,
}

impl LayerLayout {
    /// Output spans of blocks that own the bias (input starting at 0).
    pub fn bias_owner_spans(&self) -> impl Iterator<Item = Span> + '_ {
        self.blocks
            .iter()
            .filter(|(i, _)| i.start == 0)
            .map(|&(_, o)| o)
    }
}

/// Block layout of the whole model, derived from partitioning the
/// prototypes. Every actor that knows the model and cost model derives the
/// same layout, which tells it which keys hold the pieces it needs.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    pub model: ModelSpec,
    pub cost: CostModel,
    pub layers: Vec<LayerLayout>,
}

impl Layout {
    pub fn new(model: &ModelSpec, cost: &CostModel) -> Result<Self, TaskError> {
        model.validate()?;
        if cost.max_task_size == 0 {
            return Err(TaskError::InvalidModel(
                "max_task_size must be at least 1".into(),
            ));
        }
        let protos = build_prototypes(model, 0, 0);
        let mut layers = Vec::with_capacity(model.depth());
        for l in 1..=model.depth() {
            let leaves = |kind: TaskKind| -> Result<Vec<TaskDesc>, TaskError> {
                let p = protos
                    .iter()
                    .find(|t| t.layer == l && t.kind == kind)
                    .expect("prototype exists");
                partition(p, cost)
            };
            let rect = |ts: Vec<TaskDesc>| {
                ts.into_iter()
                    .map(|t| (t.input, t.output))
                    .collect::<Vec<_>>()
            };
            let blocks = rect(leaves(TaskKind::Forward)?);
            debug_assert_eq!(blocks, rect(leaves(TaskKind::Backward)?));
            debug_assert_eq!(blocks, rect(leaves(TaskKind::Update(ParamKind::Weight))?));
            let head = if l == model.depth() {
                TaskKind::Loss
            } else {
                TaskKind::Activation
            };
            layers.push(LayerLayout {
                dims: model.layer(l),
                blocks,
                head_spans: leaves(head)?.into_iter().map(|t| t.output).collect(),
                bias_spans: leaves(TaskKind::Update(ParamKind::Bias))?
                    .into_iter()
                    .map(|t| t.output)
                    .collect(),
            });
        }
        Ok(Self {
            model: model.clone(),
            cost: *cost,
            layers,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, l: usize) -> &LayerLayout {
        &self.layers[l - 1]
    }

    /// Leaf tasks of `kind` at layer `l` for one sample pass.
    pub fn tasks(&self, kind: TaskKind, l: usize, epoch: usize, sample: usize) -> Vec<TaskDesc> {
        let lay = self.layer(l);
        let make = |input, output| TaskDesc {
            epoch,
            sample,
            kind,
            layer: l,
            input,
            output,
            attempt: 0,
        };
        match kind {
            TaskKind::Forward | TaskKind::Backward | TaskKind::Update(ParamKind::Weight) => {
                lay.blocks.iter().map(|&(i, o)| make(i, o)).collect()
            }
            TaskKind::Activation | TaskKind::Loss => lay
                .head_spans
                .iter()
                .map(|&o| make(Span::EMPTY, o))
                .collect(),
            TaskKind::Update(ParamKind::Bias) => lay
                .bias_spans
                .iter()
                .map(|&o| make(Span::EMPTY, o))
                .collect(),
        }
    }

    /// Every leaf task of one sample pass.
    pub fn leaf_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| 3 * l.blocks.len() + l.head_spans.len() + l.bias_spans.len())
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashMap;

    fn kinds(ts: &[TaskDesc]) -> HashMap<(TaskKind, usize), usize> {
        let mut m = HashMap::new();
        for t in ts {
            *m.entry((t.kind, t.layer)).or_default() += 1;
        }
        m
    }

    fn task(kind: TaskKind, input: Span, output: Span) -> TaskDesc {
        TaskDesc {
            epoch: 0,
            sample: 0,
            kind,
            layer: 1,
            input,
            output,
            attempt: 0,
        }
    }

    #[test]
    fn two_layer_prototypes() {
        let ts = build_prototypes(&ModelSpec::two_layer(8), 0, 0);
        let k = kinds(&ts);
        assert_eq!(ts.len(), 10);
        for l in [1, 2] {
            assert_eq!(k[&(TaskKind::Forward, l)], 1);
            assert_eq!(k[&(TaskKind::Backward, l)], 1);
            assert_eq!(k[&(TaskKind::Update(ParamKind::Weight), l)], 1);
            assert_eq!(k[&(TaskKind::Update(ParamKind::Bias), l)], 1);
        }
        assert_eq!(k[&(TaskKind::Activation, 1)], 1);
        assert_eq!(k[&(TaskKind::Loss, 2)], 1);
        assert!(!k.contains_key(&(TaskKind::Activation, 2)));
    }

    #[test]
    fn degenerate_and_deep_prototypes() {
        let ts = build_prototypes(&ModelSpec::new(&[(3, 2)]).unwrap(), 0, 0);
        assert_eq!(ts.len(), 5);
        assert_eq!(ts.iter().filter(|t| t.kind == TaskKind::Loss).count(), 1);
        assert_eq!(
            ts.iter().filter(|t| t.kind == TaskKind::Activation).count(),
            0
        );
        let ts = build_prototypes(&ModelSpec::new(&[(4, 3), (3, 3), (3, 1)]).unwrap(), 0, 0);
        assert_eq!(
            ts.iter().filter(|t| t.kind == TaskKind::Activation).count(),
            2
        );
        assert_eq!(ts.iter().filter(|t| t.kind == TaskKind::Loss).count(), 1);
    }

    #[test]
    fn costs() {
        let cm = CostModel::default();
        assert_eq!(
            task_cost(
                &task(TaskKind::Forward, Span::full(256), Span::full(256)),
                &cm
            ),
            65536
        );
        assert_eq!(
            task_cost(&task(TaskKind::Loss, Span::EMPTY, Span::full(1)), &cm),
            2
        );
        assert_eq!(
            task_cost(
                &task(TaskKind::Activation, Span::EMPTY, Span::full(128)),
                &cm
            ),
            128
        );
        let cm = CostModel {
            loss_weight: 2.5,
            ..cm
        };
        assert_eq!(
            task_cost(&task(TaskKind::Loss, Span::EMPTY, Span::full(3)), &cm),
            8
        );
    }

    #[test]
    fn full_scale_forward_split() {
        let cm = CostModel::default();
        let leaves = partition(
            &task(TaskKind::Forward, Span::full(256), Span::full(256)),
            &cm,
        )
        .unwrap();
        assert_eq!(leaves.len(), 256);
        assert!(leaves
            .iter()
            .all(|t| t.input.len() == 16 && t.output.len() == 16));
    }

    #[test]
    fn quadrant_order_for_small_forward() {
        let cm = CostModel {
            max_task_size: 4,
            ..Default::default()
        };
        let leaves =
            partition(&task(TaskKind::Forward, Span::full(4), Span::full(4)), &cm).unwrap();
        let got: Vec<(Span, Span)> = leaves.iter().map(|t| (t.input, t.output)).collect();
        let (a, b) = (Span::new(0, 2), Span::new(2, 4));
        assert_eq!(got, vec![(a, a), (a, b), (b, a), (b, b)]);
    }

    #[test]
    fn activation_halves() {
        let cm = CostModel {
            max_task_size: 4,
            ..Default::default()
        };
        let leaves =
            partition(&task(TaskKind::Activation, Span::EMPTY, Span::full(8)), &cm).unwrap();
        let got: Vec<Span> = leaves.iter().map(|t| t.output).collect();
        assert_eq!(got, vec![Span::new(0, 4), Span::new(4, 8)]);
    }

    #[test]
    fn thin_rectangle_splits_one_side() {
        let cm = CostModel {
            max_task_size: 4,
            ..Default::default()
        };
        let leaves =
            partition(&task(TaskKind::Forward, Span::full(8), Span::full(1)), &cm).unwrap();
        assert_eq!(leaves.len(), 2);
        assert!(leaves
            .iter()
            .all(|t| t.output == Span::full(1) && t.input.len() == 4));
    }

    #[test]
    fn impossible_partition() {
        let cm = CostModel {
            max_task_size: 1,
            loss_weight: 2.0,
        };
        let r = partition(&task(TaskKind::Loss, Span::EMPTY, Span::full(4)), &cm);
        assert!(matches!(r, Err(TaskError::ImpossiblePartition(_))));
    }

    #[test]
    fn golden_serialization() {
        let t = TaskDesc {
            epoch: 0,
            sample: 3,
            kind: TaskKind::Forward,
            layer: 1,
            input: Span::new(0, 16),
            output: Span::new(0, 16),
            attempt: 0,
        };
        assert_eq!(t.to_string(), "0:3:F:1:0-16:0-16:0");
        assert_eq!(t.id(), "0:3:F:1:0-16:0-16");
        assert_eq!(t.done_key(), "done:0:3:F:1:0-16:0-16");
        assert_eq!(t.with_attempt(2).done_key(), t.done_key());
    }

    #[test]
    fn malformed_tasks() {
        for bad in [
            "garbage",
            "",
            "0:3:F:1:0-16:0-16",
            "0:3:Q:1:0-16:0-16:0",
            "0:3:F:0:0-16:0-16:0",
            "0:3:F:1:16-0:0-16:0",
            "0:3:F:1:0-16:0-16:0:9",
        ] {
            assert!(bad.parse::<TaskDesc>().is_err(), "{bad}");
        }
    }

    #[test]
    fn validate_against_model() {
        let m = ModelSpec::two_layer(4);
        let ok = task(TaskKind::Forward, Span::new(0, 2), Span::new(2, 4));
        assert!(ok.validate(&m).is_ok());
        assert!(task(TaskKind::Forward, Span::new(0, 5), Span::new(0, 1))
            .validate(&m)
            .is_err());
        assert!(task(TaskKind::Loss, Span::EMPTY, Span::full(1))
            .validate(&m)
            .is_err());
    }

    #[test]
    fn full_scale_layout_counts() {
        let layout = Layout::new(&ModelSpec::two_layer(256), &CostModel::default()).unwrap();
        let l1 = layout.layer(1);
        let l2 = layout.layer(2);
        assert_eq!(l1.blocks.len(), 256);
        assert_eq!(l1.head_spans.len(), 1);
        assert_eq!(l1.bias_spans.len(), 1);
        assert_eq!(l2.blocks.len(), 1);
        assert_eq!(l2.head_spans.len(), 1);
        assert_eq!(l2.bias_spans.len(), 1);
        assert_eq!(layout.leaf_count(), 256 * 3 + 1 + 1 + 3 + 1 + 1);
    }

    #[test]
    fn model_json() {
        let m = ModelSpec::from_json(r#"{"layers":[{"in":4,"out":3},{"in":3,"out":1}]}"#).unwrap();
        assert_eq!(m, ModelSpec::new(&[(4, 3), (3, 1)]).unwrap());
        assert!(ModelSpec::from_json(r#"{"layers":[{"in":4,"out":3},{"in":2,"out":1}]}"#).is_err());
        assert!(ModelSpec::from_json(r#"{"layers":[]}"#).is_err());
    }

    fn kind_strategy() -> impl Strategy<Value = TaskKind> {
        prop_oneof![
            Just(TaskKind::Forward),
            Just(TaskKind::Activation),
            Just(TaskKind::Loss),
            Just(TaskKind::Backward),
            Just(TaskKind::Update(ParamKind::Weight)),
            Just(TaskKind::Update(ParamKind::Bias)),
        ]
    }

    proptest! {
        #[test]
        fn serialization_round_trips(
            epoch in 0usize..1000, sample in 0usize..10_000, kind in kind_strategy(),
            layer in 1usize..9, a in 0usize..500, b in 0usize..500, c in 0usize..500, d in 0usize..500,
            attempt in any::<u32>()
        ) {
            let t = TaskDesc {
                epoch, sample, kind, layer,
                input: Span::new(a.min(b), a.max(b)),
                output: Span::new(c.min(d), c.max(d)),
                attempt,
            };
            prop_assert_eq!(t.to_string().parse::<TaskDesc>().unwrap(), t);
        }
    }
}
