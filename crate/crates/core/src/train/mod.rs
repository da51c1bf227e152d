//! Optimization, data splitting, the training loop and evaluation.

pub mod metrics;
pub mod optim;
pub mod predict;
pub mod split;
pub mod trainer;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use metrics::Metrics;
pub use optim::{cosine_lr, Nadam};
pub use predict::{predict_image, predict_png, Prediction};
pub use split::stratified_split;
pub use trainer::{
    evaluate, history_csv, load_image_dataset, predict_indices, train, write_history_csv, EpochRecord, ImageDataset, Sample,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr_max: f64,
    pub lr_min: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Set from the run's master seed rather than read from JSON.
    #[serde(skip)]
    pub seed: u64,
    pub split_ratio: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_max: 1e-4,
            lr_min: 1e-6,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 1e-7,
            batch_size: 16,
            epochs: 100,
            seed: 0,
            split_ratio: 0.7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr_max && self.lr_max.is_finite()) {
            return bad(format!("need 0 < lr_min <= lr_max, got {} and {}", self.lr_min, self.lr_max));
        }
        if !(0.0..=1.0).contains(&self.split_ratio) {
            return bad(format!("split_ratio {} outside [0, 1]", self.split_ratio));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if self.weight_decay < 0.0 || !self.weight_decay.is_finite() {
            return bad(format!("weight_decay {} must be finite and non-negative", self.weight_decay));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        Ok(())
    }
}
