use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::handler::HandlerConfig;
use crate::kernels::Activation;
use crate::manager::{ManagerConfig, TimeoutPolicy};
use crate::plan::TrainingPlan;
use crate::taskgraph::{CostModel, ModelSpec, TaskError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] TaskError),
    #[error("reading config: {0}")]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Json(#[from] serde_json::Error),
}

/// Speed and fault schedule of one simulated run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub handler_count: usize,
    /// Relative speed levels a handler can be assigned.
    pub speed_levels: Vec<f64>,
    /// Cost units per virtual second at speed level 1.
    pub speed_unit: f64,
    pub speed_change_period: f64,
    pub speed_change_prob: f64,
    pub handler_crash_period: f64,
    pub handler_crash_prob: f64,
    pub manager_crash_period: f64,
    pub manager_crash_prob: f64,
    pub manager_revival_delay: f64,
    /// Abort once virtual time passes this bound.
    pub max_sim_time: Option<f64>,
    /// Keep every actor note with its timestamp in the report.
    pub record_events: bool,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            handler_count: 4,
            speed_levels: vec![1.0, 5.0, 10.0],
            speed_unit: 5120.0,
            speed_change_period: 5.0,
            speed_change_prob: 1.0,
            handler_crash_period: 5.0,
            handler_crash_prob: 0.0,
            manager_crash_period: 5.0,
            manager_crash_prob: 0.0,
            manager_revival_delay: 0.1,
            max_sim_time: None,
            record_events: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub model: ModelSpec,
    pub cost: CostModel,
    pub eta: f32,
    pub activation: Activation,
    pub samples: usize,
    pub epochs: usize,
    pub pouch_size: usize,
    pub timeout: TimeoutPolicy,
    pub max_stall_rounds: usize,
    pub max_attempts: Option<u32>,
    pub handler: HandlerConfig,
    pub scenario: ScenarioConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            model: ModelSpec::two_layer(256),
            cost: CostModel::default(),
            eta: 5e-3,
            activation: Activation::Relu,
            samples: 100,
            epochs: 2,
            pouch_size: 100,
            timeout: TimeoutPolicy::default(),
            max_stall_rounds: 1000,
            max_attempts: None,
            handler: HandlerConfig::default(),
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Exp1,
    Exp2,
    Exp3,
    Custom,
}

impl RunConfig {
    /// Stable handlers at fixed speeds, 100 samples x 2 epochs.
    pub fn exp1() -> Self {
        let mut c = Self::default();
        c.scenario.speed_change_prob = 0.0;
        c
    }

    /// Speeds reshuffled every 5 s, 20 samples x 2 epochs.
    pub fn exp2() -> Self {
        Self {
            samples: 20,
            ..Self::default()
        }
    }

    /// Exp2 plus manager and handler crashes every 5 s.
    pub fn exp3() -> Self {
        let mut c = Self::exp2();
        c.scenario.handler_crash_prob = 1.0;
        c.scenario.manager_crash_prob = 1.0;
        c
    }

    pub fn preset(exp: Experiment) -> Self {
        match exp {
            Experiment::Exp1 => Self::exp1(),
            Experiment::Exp2 => Self::exp2(),
            Experiment::Exp3 => Self::exp3(),
            Experiment::Custom => Self::default(),
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Overlays a (possibly partial) JSON object onto this config; nested
    /// objects merge key by key.
    pub fn merged(&self, text: &str) -> Result<Self, ConfigError> {
        fn overlay(base: &mut serde_json::Value, top: serde_json::Value) {
            match (base, top) {
                (serde_json::Value::Object(b), serde_json::Value::Object(t)) => {
                    for (k, v) in t {
                        match b.get_mut(&k) {
                            Some(slot) => overlay(slot, v),
                            None => {
                                b.insert(k, v);
                            }
                        }
                    }
                }
                (slot, v) => *slot = v,
            }
        }
        let mut base = serde_json::to_value(self)?;
        let top: serde_json::Value = serde_json::from_str(text)?;
        if !top.is_object() {
            return Err(ConfigError::Invalid("config must be a JSON object".into()));
        }
        overlay(&mut base, top);
        Ok(serde_json::from_value(base)?)
    }

    pub fn manager(&self) -> ManagerConfig {
        ManagerConfig {
            pouch_size: self.pouch_size,
            timeout: self.timeout,
            max_stall_rounds: self.max_stall_rounds,
            max_attempts: self.max_attempts,
            epochs: self.epochs,
            samples: self.samples,
        }
    }

    pub fn plan(&self) -> Result<TrainingPlan, ConfigError> {
        Ok(TrainingPlan::new(
            &self.model,
            &self.cost,
            self.eta,
            self.activation,
        )?)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        self.model.validate()?;
        let s = &self.scenario;
        if !(self.eta.is_finite() && self.eta > 0.0) {
            return bad(format!("eta {} must be positive", self.eta));
        }
        if self.cost.max_task_size == 0 {
            return bad("max_task_size must be at least 1".into());
        }
        if !(self.cost.loss_weight.is_finite() && self.cost.loss_weight > 0.0) {
            return bad("loss_weight must be positive".into());
        }
        if self.pouch_size == 0 {
            return bad("pouch_size must be at least 1".into());
        }
        let t = &self.timeout;
        if !(t.min > 0.0 && t.min <= t.initial && t.initial <= t.max && t.max.is_finite()) {
            return bad(format!(
                "timeout bounds need 0 < min <= initial <= max, got {t:?}"
            ));
        }
        if !(t.decrease > 0.0 && t.decrease <= 1.0 && t.increase >= 1.0 && t.increase.is_finite()) {
            return bad("timeout factors need 0 < decrease <= 1 <= increase".into());
        }
        if self.handler.capacity == 0 {
            return bad("handler capacity must be at least 1".into());
        }
        if !(self.handler.overhead >= 0.0 && self.handler.retry_delay > 0.0) {
            return bad("handler overhead must be >= 0 and retry_delay > 0".into());
        }
        if s.handler_count == 0 {
            return bad("handler_count must be at least 1".into());
        }
        if s.speed_levels.is_empty() || s.speed_levels.iter().any(|&v| !(v.is_finite() && v > 0.0))
        {
            return bad("speed_levels must be non-empty and positive".into());
        }
        if !(s.speed_unit.is_finite() && s.speed_unit > 0.0) {
            return bad("speed_unit must be positive".into());
        }
        for (name, p) in [
            ("speed_change_prob", s.speed_change_prob),
            ("handler_crash_prob", s.handler_crash_prob),
            ("manager_crash_prob", s.manager_crash_prob),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} {p} outside [0, 1]"));
            }
        }
        for (name, p) in [
            ("speed_change_period", s.speed_change_period),
            ("handler_crash_period", s.handler_crash_period),
            ("manager_crash_period", s.manager_crash_period),
        ] {
            if !(p.is_finite() && p > 0.0) {
                return bad(format!("{name} {p} must be positive"));
            }
        }
        if !(s.manager_revival_delay >= 0.0 && s.manager_revival_delay.is_finite()) {
            return bad("manager_revival_delay must be >= 0".into());
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for e in [
            Experiment::Exp1,
            Experiment::Exp2,
            Experiment::Exp3,
            Experiment::Custom,
        ] {
            RunConfig::preset(e).validate().unwrap();
        }
        assert_eq!(RunConfig::exp1().samples, 100);
        assert_eq!(RunConfig::exp3().samples, 20);
    }

    #[test]
    fn partial_json_fills_defaults() {
        let c = RunConfig::from_json(r#"{"samples": 3, "scenario": {"seed": 7}}"#).unwrap();
        assert_eq!(c.samples, 3);
        assert_eq!(c.scenario.seed, 7);
        assert_eq!(c.scenario.handler_count, 4);
        assert_eq!(c.pouch_size, 100);
    }

    #[test]
    fn merge_keeps_preset_values() {
        let c = RunConfig::exp3()
            .merged(r#"{"samples": 2, "scenario": {"seed": 9}}"#)
            .unwrap();
        assert_eq!(c.samples, 2);
        assert_eq!(c.scenario.seed, 9);
        assert_eq!(c.scenario.manager_crash_prob, 1.0);
        assert!(RunConfig::exp1().merged("[1]").is_err());
        assert!(RunConfig::exp1().merged(r#"{"samples": "x"}"#).is_err());
    }

    #[test]
    fn rejects_bad_probability() {
        let mut c = RunConfig::exp2();
        c.scenario.speed_change_prob = 1.5;
        assert!(matches!(c.validate(), Err(ConfigError::Invalid(_))));
        let mut c = RunConfig::exp2();
        c.timeout.initial = 100.0;
        assert!(c.validate().is_err());
    }
}
