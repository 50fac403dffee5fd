use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinytrain::{DatasetSpec, NoiseModel, TrainConfig};
use crate::verifier::VerificationPolicy;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentId {
    BaselineHonest,
    AttackInfinitesimal,
    AttackBlindfold,
    AttackInterp,
    ProbeOrdering,
    ProbeSynthesis,
    AttackRna,
    IndependentRuns,
    ThresholdCurve,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::BaselineHonest,
        ExperimentId::AttackInfinitesimal,
        ExperimentId::AttackBlindfold,
        ExperimentId::AttackInterp,
        ExperimentId::ProbeOrdering,
        ExperimentId::ProbeSynthesis,
        ExperimentId::AttackRna,
        ExperimentId::IndependentRuns,
        ExperimentId::ThresholdCurve,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::BaselineHonest => "baseline_honest",
            ExperimentId::AttackInfinitesimal => "attack_infinitesimal",
            ExperimentId::AttackBlindfold => "attack_blindfold",
            ExperimentId::AttackInterp => "attack_interp",
            ExperimentId::ProbeOrdering => "probe_ordering",
            ExperimentId::ProbeSynthesis => "probe_synthesis",
            ExperimentId::AttackRna => "attack_rna",
            ExperimentId::IndependentRuns => "independent_runs",
            ExperimentId::ThresholdCurve => "threshold_curve",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown experiment id {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataConfig {
    #[serde(flatten)]
    pub spec: DatasetSpec,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            spec: DatasetSpec::new(5, 100, 20),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlindfoldConfig {
    pub q: usize,
    /// Checkpoint interval for the spoof; the experiment's `k` when unset.
    pub k: Option<usize>,
    pub s: usize,
    pub epochs: usize,
    pub eta_large: f64,
    /// Angle bound for the adaptive verifier.
    pub theta: f64,
}

impl Default for BlindfoldConfig {
    fn default() -> Self {
        Self {
            q: 5,
            k: None,
            s: 100,
            epochs: 2,
            eta_large: 1.0,
            theta: std::f64::consts::FRAC_PI_6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    /// Infinitesimal spoof spacing is at most `delta / spacing_margin`.
    pub spacing_margin: f64,
    /// Refuse spoofs longer than this many steps.
    pub max_spoof_steps: usize,
    pub blindfold: BlindfoldConfig,
    pub interp_updates: usize,
    pub interp_iters: usize,
    pub interp_input_lr: f64,
    pub rna_m: usize,
    pub ordering_eta: f64,
    pub synthesis_iters: usize,
    pub synthesis_data_lr: f64,
    pub synthesis_model_lr: f64,
    pub threshold_taus: Vec<f64>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            spacing_margin: 10.0,
            max_spoof_steps: 2_000_000,
            blindfold: BlindfoldConfig::default(),
            interp_updates: 4,
            interp_iters: 10,
            interp_input_lr: 0.5,
            rna_m: 10,
            ordering_eta: 0.1,
            synthesis_iters: 100,
            synthesis_data_lr: 1.0,
            synthesis_model_lr: 0.1,
            threshold_taus: vec![0.5, 0.9, 0.99, 0.999],
        }
    }
}

fn default_k() -> usize {
    10
}

fn default_repeats() -> usize {
    5
}

fn default_tau() -> f64 {
    0.999
}

fn default_threshold_trials() -> usize {
    2000
}

fn default_rd_trials() -> usize {
    5
}

fn default_true() -> bool {
    true
}

/// Everything needed to rerun one experiment bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    #[serde(default)]
    pub data: DataConfig,
    pub train: TrainConfig,
    pub policy: VerificationPolicy,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_repeats")]
    pub repeats: usize,
    #[serde(default)]
    pub out_dir: PathBuf,
    /// Target per-step acceptance rate for the calibrated threshold.
    #[serde(default = "default_tau")]
    pub tau: f64,
    #[serde(default = "default_threshold_trials")]
    pub threshold_trials: usize,
    #[serde(default = "default_rd_trials")]
    pub rd_trials: usize,
    /// Replace a static policy threshold with the calibrated one.
    #[serde(default = "default_true")]
    pub calibrate_delta: bool,
    #[serde(default)]
    pub attack: AttackConfig,
}

impl ExperimentSpec {
    /// Desk-scale defaults: a 20-16-5 tanh network (421 weights) on
    /// 500 points, 20 epochs of batch 25, `k = 10`, relative reproduction
    /// noise `1e-3` on both sides and 5 repeats.
    pub fn desk_default(id: ExperimentId) -> Self {
        let noise = NoiseModel::relative_isotropic(1e-3);
        let mut train = TrainConfig::new(16, 20, 25, 0.1, 1).with_noise(noise);
        train.init_scale = 1.0;
        let repeats = if id == ExperimentId::IndependentRuns {
            10
        } else {
            5
        };
        Self {
            id,
            data: DataConfig::default(),
            train,
            policy: VerificationPolicy::static_l2(0.008).with_noise(noise, 99),
            k: default_k(),
            repeats,
            out_dir: PathBuf::from("out").join(id.name()),
            tau: default_tau(),
            threshold_trials: default_threshold_trials(),
            rd_trials: default_rd_trials(),
            calibrate_delta: true,
            attack: AttackConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be >= 1".into()));
        }
        if self.id == ExperimentId::IndependentRuns && self.repeats < 2 {
            return Err(Error::Config(
                "independent_runs needs at least 2 repeats".into(),
            ));
        }
        if self.k == 0 {
            return Err(Error::Config("k must be >= 1".into()));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return Err(Error::Config(format!(
                "tau must lie in (0, 1), got {}",
                self.tau
            )));
        }
        if self.rd_trials < 2 {
            return Err(Error::Config("rd_trials must be >= 2".into()));
        }
        self.data.spec.validate()?;
        self.policy.validate()?;
        self.train.noise.validate()
    }

    /// Reads a TOML spec, or the `spec` field of a previous `summary.json`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let spec: Self = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value =
                serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
            let inner = v.get("spec").cloned().unwrap_or(v);
            serde_json::from_value(inner).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ids_round_trip() {
        for id in ExperimentId::ALL {
            assert_eq!(ExperimentId::parse(id.name()).unwrap(), id);
        }
        assert!(ExperimentId::parse("nope").is_err());
    }

    #[test]
    fn toml_round_trip() {
        for id in ExperimentId::ALL {
            let spec = ExperimentSpec::desk_default(id);
            spec.validate().unwrap();
            let text = spec.to_toml().unwrap();
            let back: ExperimentSpec = toml::from_str(&text).unwrap();
            assert_eq!(back, spec);
        }
    }

    #[test]
    fn minimal_toml_uses_defaults() {
        let text = r#"
id = "baseline_honest"
[train]
epochs = 2
batch_size = 10
lr = 0.1
seed = 3
[policy.threshold]
mode = "static"
delta = 0.01
"#;
        let spec: ExperimentSpec = toml::from_str(text).unwrap();
        assert_eq!(spec.k, 10);
        assert_eq!(spec.repeats, 5);
        assert_eq!(spec.train.hidden, 16);
        spec.validate().unwrap();
    }
}
