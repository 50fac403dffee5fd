use serde::{Deserialize, Serialize};

use super::metric::Metric;
use crate::error::{Error, Result};
use crate::tinytrain::NoiseModel;

/// How the acceptance threshold for a step is chosen.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Accept when `d(W_{t+k}, W'_{t+k}) < delta`.
    Static { delta: f64 },
    /// Accept when `||g - g'|| < alpha * min(||g||, ||g'||)`.
    Adaptive { alpha: f64 },
    /// One externally supplied `delta_t` per verified update, in step order.
    PerStep { deltas: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationPolicy {
    #[serde(default)]
    pub metric: Metric,
    pub threshold: ThresholdMode,
    /// Updates verified per epoch; 0 verifies all of them.
    #[serde(default)]
    pub q: usize,
    /// Expected checkpoint interval; checked against the proof when set.
    #[serde(default)]
    pub k: Option<usize>,
    /// Reproduction noise on the verifier's side.
    #[serde(default)]
    pub noise: NoiseModel,
    #[serde(default)]
    pub noise_seed: u64,
}

impl VerificationPolicy {
    pub fn static_l2(delta: f64) -> Self {
        Self {
            metric: Metric::L2,
            threshold: ThresholdMode::Static { delta },
            q: 0,
            k: None,
            noise: NoiseModel::none(),
            noise_seed: 0,
        }
    }

    pub fn adaptive(alpha: f64) -> Self {
        Self {
            threshold: ThresholdMode::Adaptive { alpha },
            ..Self::static_l2(1.0)
        }
    }

    pub fn with_q(mut self, q: usize) -> Self {
        self.q = q;
        self
    }

    pub fn with_noise(mut self, noise: NoiseModel, seed: u64) -> Self {
        self.noise = noise;
        self.noise_seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match &self.threshold {
            ThresholdMode::Static { delta } => check_positive("delta", *delta)?,
            ThresholdMode::Adaptive { alpha } => {
                check_positive("alpha", *alpha)?;
                if self.metric != Metric::L2 {
                    return Err(Error::Config(
                        "adaptive thresholds are defined on the l2 metric".into(),
                    ));
                }
            }
            ThresholdMode::PerStep { deltas } => {
                for d in deltas {
                    check_positive("per-step delta", *d)?;
                }
            }
        }
        self.noise.validate()
    }
}

pub(crate) fn check_positive(name: &str, v: f64) -> Result<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be positive, got {v}")))
    }
}
