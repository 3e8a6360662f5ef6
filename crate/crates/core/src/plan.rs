use crate::kernels::Activation;
use crate::taskgraph::{CostModel, Layout, ModelSpec, TaskError};

/// Immutable training setup every actor shares: block layout, learning
/// rate and hidden activation.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub layout: Layout,
    pub eta: f32,
    pub activation: Activation,
}

impl TrainingPlan {
    pub fn new(
        model: &ModelSpec,
        cost: &CostModel,
        eta: f32,
        activation: Activation,
    ) -> Result<Self, TaskError> {
        Ok(Self {
            layout: Layout::new(model, cost)?,
            eta,
            activation,
        })
    }

    pub fn model(&self) -> &ModelSpec {
        &self.layout.model
    }

    pub fn depth(&self) -> usize {
        self.layout.depth()
    }
}
