//! Losses, metrics, optimizer, training loop, horizon evaluation and ablations.

mod ablation;
mod eval;
mod metrics;
mod optim;
mod report;
mod train;

pub use ablation::{
    check_fairness, run_ablation, AblationConfig, AblationReport, AblationRow, AblationSuite, DEFAULT_SWEEP,
};
pub use eval::{evaluate_horizons, AveragingMode, HorizonReport, HorizonRow, Predictor, ZeroVelocity};
pub use metrics::{horizon_frames, horizon_map, mae, mae_per_frame, mpjpe, mpjpe_per_frame, DEFAULT_HORIZONS_MS};
pub use optim::Adam;
pub use report::{write_gates_csv, write_horizon_csv, write_loss_csv, write_train_log};
pub use train::{prepare_windows, train, EpochRecord, GateRecord, PreparedWindow, TrainOutcome};

use serde::{Deserialize, Serialize};
use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean joint distance, for position data.
    #[default]
    Mpjpe,
    /// Mean absolute angle error, for exponential-map data.
    Mae,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::Mpjpe => "mpjpe",
            LossKind::Mae => "mae",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied to the learning rate after every epoch.
    pub lr_decay: f64,
    pub seed: u64,
    pub loss_kind: LossKind,
    /// Gate coefficients are logged every this many optimizer steps.
    pub log_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 10,
            batch_size: 32,
            learning_rate: 1e-3,
            lr_decay: 0.96,
            seed: 0,
            loss_kind: LossKind::Mpjpe,
            log_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Config(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if !(self.lr_decay.is_finite() && self.lr_decay > 0.0) {
            return Err(Error::Config(format!("lr_decay must be positive, got {}", self.lr_decay)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.log_every == 0 {
            return Err(Error::Config("log_every must be at least 1".into()));
        }
        Ok(())
    }
}
