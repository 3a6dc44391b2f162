use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::losses::JointLossConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub alpha: f64,
    pub max_epochs: usize,
    pub seed: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm ceiling; off by default.
    pub clip_norm: Option<f64>,
    /// Weight the losses inversely to class frequency.
    pub class_weighting: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-4,
            batch_size: 32,
            lambda: 0.3,
            alpha: 0.5,
            max_epochs: 100,
            seed: 0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            clip_norm: None,
            class_weighting: true,
        }
    }
}

impl TrainConfig {
    pub const KEYS: &'static [&'static str] = &[
        "learning_rate",
        "batch_size",
        "lambda",
        "alpha",
        "max_epochs",
        "seed",
        "beta1",
        "beta2",
        "epsilon",
        "clip_norm",
        "class_weighting",
    ];

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::config(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return bad("lambda must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.epsilon.is_nan() || self.epsilon <= 0.0 {
            return bad("epsilon must be positive");
        }
        if matches!(self.clip_norm, Some(c) if c.is_nan() || c <= 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn joint(&self) -> JointLossConfig {
        JointLossConfig {
            lambda: self.lambda,
        }
    }

    /// Overrides fields present in `kv`; other keys are ignored.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.parsed(stringify!($field))? {
                    self.$field = v;
                }
            };
        }
        take!(learning_rate);
        take!(batch_size);
        take!(lambda);
        take!(alpha);
        take!(max_epochs);
        take!(seed);
        take!(beta1);
        take!(beta2);
        take!(epsilon);
        take!(class_weighting);
        match kv.get("clip_norm") {
            Some("off" | "none") => self.clip_norm = None,
            Some(_) => self.clip_norm = kv.parsed("clip_norm")?,
            None => {}
        }
        Ok(())
    }
}
