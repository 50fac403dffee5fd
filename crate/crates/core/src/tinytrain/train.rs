use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::dataset::{Batch, Dataset};
use super::ledger::{CostLedger, OpKind};
use super::model::{Activation, Arch, ModelState};
use super::net::loss_and_grad;
use super::noise::NoiseModel;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    #[default]
    PlainSgd,
}

impl Optimizer {
    pub fn id(self) -> u8 {
        0
    }

    pub fn from_id(id: u8) -> Option<Self> {
        (id == 0).then_some(Optimizer::PlainSgd)
    }
}

/// Hyperparameters logged with every training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetadata {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
    pub step_index: u64,
}

impl StepMetadata {
    pub fn sgd(learning_rate: f64, batch_size: usize, seed: u64, step_index: u64) -> Self {
        Self {
            learning_rate,
            batch_size,
            optimizer: Optimizer::PlainSgd,
            seed,
            step_index,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// One plain-SGD step followed by one noise draw.
pub(crate) fn sgd_step<R: Rng + ?Sized>(
    model: &mut ModelState,
    batch: &Batch,
    meta: &StepMetadata,
    noise: &NoiseModel,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<()> {
    let (_, grad) = loss_and_grad(model, batch, ledger)?;
    let lr = meta.learning_rate;
    let update: Vec<f64> = grad.iter().map(|g| -lr * g).collect();
    for (w, u) in model.weights_mut().iter_mut().zip(&update) {
        *w += u;
    }
    if let Some(z) = noise.sample(&update, rng) {
        for (w, e) in model.weights_mut().iter_mut().zip(&z) {
            *w += e;
        }
        ledger.record(OpKind::WeightAdd);
    }
    model.check_finite()
}

/// Applies `k` plain-SGD steps `W <- W - lr * grad` from `model`, one per
/// batch, injecting one noise draw after each step.
pub fn update_k<R: Rng + ?Sized>(
    model: &ModelState,
    batches: &[Batch],
    meta: &StepMetadata,
    k: usize,
    noise: &NoiseModel,
    rng: &mut R,
    ledger: &mut CostLedger,
) -> Result<ModelState> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    if batches.len() != k {
        return Err(Error::Config(format!(
            "update_k needs {k} batches, got {}",
            batches.len()
        )));
    }
    meta.validate()?;
    noise.validate()?;
    let mut next = model.clone();
    for batch in batches {
        sgd_step(&mut next, batch, meta, noise, rng, ledger)?;
    }
    Ok(next)
}

/// `(1 - t) * a + t * b`. Costs 1 FP.
pub fn interpolate(
    a: &ModelState,
    b: &ModelState,
    t: f64,
    ledger: &mut CostLedger,
) -> Result<ModelState> {
    a.same_arch(b)?;
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Config(format!(
            "interpolation parameter {t} outside [0, 1]"
        )));
    }
    let s = 1.0 - t;
    let w = a
        .weights()
        .iter()
        .zip(b.weights())
        .map(|(x, y)| s * x + t * y)
        .collect();
    ledger.record(OpKind::Interpolate);
    ModelState::new(*a.arch(), w)
}

/// Gaussian initialisation with variance `scale^2 / fan_in`, zero biases.
pub fn init_model(arch: Arch, seed: u64, scale: f64) -> Result<ModelState> {
    arch.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut w = Vec::with_capacity(arch.param_count());
    let mut dense = |rows: usize, cols: usize, w: &mut Vec<f64>| {
        let std = scale / (cols as f64).sqrt();
        for _ in 0..rows * cols {
            w.push(std * rng.sample::<f64, _>(StandardNormal));
        }
        w.extend(std::iter::repeat_n(0.0, rows));
    };
    if arch.hidden == 0 {
        dense(arch.classes, arch.input_dim, &mut w);
    } else {
        dense(arch.hidden, arch.input_dim, &mut w);
        dense(arch.classes, arch.hidden, &mut w);
    }
    ModelState::new(arch, w)
}

/// Training hyperparameters and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_hidden")]
    pub hidden: usize,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Base seed; the individual streams below default to values derived
    /// from it.
    pub seed: u64,
    #[serde(default)]
    pub init_seed: Option<u64>,
    #[serde(default)]
    pub sampling_seed: Option<u64>,
    #[serde(default)]
    pub noise_seed: Option<u64>,
    #[serde(default = "default_init_scale")]
    pub init_scale: f64,
    #[serde(default)]
    pub noise: NoiseModel,
}

fn default_hidden() -> usize {
    16
}

fn default_activation() -> Activation {
    Activation::Tanh
}

fn default_init_scale() -> f64 {
    1.0
}

impl TrainConfig {
    pub fn new(hidden: usize, epochs: usize, batch_size: usize, lr: f64, seed: u64) -> Self {
        Self {
            hidden,
            activation: Activation::Tanh,
            epochs,
            batch_size,
            lr,
            seed,
            init_seed: None,
            sampling_seed: None,
            noise_seed: None,
            init_scale: 1.0,
            noise: NoiseModel::none(),
        }
    }

    pub fn with_noise(mut self, noise: NoiseModel) -> Self {
        self.noise = noise;
        self
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed.unwrap_or(self.seed)
    }

    pub fn sampling_seed(&self) -> u64 {
        self.sampling_seed
            .unwrap_or(self.seed ^ 0x9e37_79b9_7f4a_7c15)
    }

    pub fn noise_seed(&self) -> u64 {
        self.noise_seed.unwrap_or(self.seed ^ 0xd1b5_4a32_d192_ed03)
    }

    pub fn arch_for(&self, dataset: &Dataset) -> Arch {
        Arch::new(dataset.dim, self.hidden, dataset.classes, self.activation)
    }

    pub fn steps_per_epoch(&self, dataset: &Dataset) -> usize {
        dataset.len() / self.batch_size.max(1)
    }

    pub fn validate(&self, dataset: &Dataset) -> Result<()> {
        if dataset.is_empty() {
            return Err(Error::Config("cannot train on an empty dataset".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.batch_size > dataset.len() {
            return Err(Error::Config(format!(
                "batch size {} invalid for {} rows",
                self.batch_size,
                dataset.len()
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        self.noise.validate()
    }
}

/// Output of an honest training run: every step's weights plus what a
/// prover needs to log.
#[derive(Debug, Clone)]
pub struct TrainRun {
    /// `trajectory[t]` is the weight after `t` steps; length `T + 1`.
    pub trajectory: Vec<ModelState>,
    /// Dataset rows used by step `t`.
    pub batches: Vec<Vec<usize>>,
    pub metadata: Vec<StepMetadata>,
    pub steps_per_epoch: usize,
    pub ledger: CostLedger,
}

impl TrainRun {
    pub fn total_steps(&self) -> usize {
        self.batches.len()
    }

    pub fn final_state(&self) -> &ModelState {
        self.trajectory
            .last()
            .expect("trajectory holds the initial state")
    }
}

/// Full SGD run. Each epoch visits a fresh seeded permutation of the rows;
/// a trailing partial batch is dropped.
pub fn train(config: &TrainConfig, dataset: &Dataset) -> Result<TrainRun> {
    config.validate(dataset)?;
    let arch = config.arch_for(dataset);
    let mut model = init_model(arch, config.init_seed(), config.init_scale)?;
    let mut sampling = ChaCha8Rng::seed_from_u64(config.sampling_seed());
    let mut noise_rng = ChaCha8Rng::seed_from_u64(config.noise_seed());
    let steps_per_epoch = config.steps_per_epoch(dataset);
    let total = steps_per_epoch * config.epochs;

    let mut ledger = CostLedger::new();
    let mut trajectory = Vec::with_capacity(total + 1);
    let mut batches = Vec::with_capacity(total);
    let mut metadata = Vec::with_capacity(total);
    trajectory.push(model.clone());

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for _ in 0..config.epochs {
        order.shuffle(&mut sampling);
        for chunk in order.chunks_exact(config.batch_size) {
            let step = batches.len() as u64;
            let meta =
                StepMetadata::sgd(config.lr, config.batch_size, config.sampling_seed(), step);
            let batch = dataset.batch(chunk)?;
            sgd_step(
                &mut model,
                &batch,
                &meta,
                &config.noise,
                &mut noise_rng,
                &mut ledger,
            )?;
            trajectory.push(model.clone());
            batches.push(chunk.to_vec());
            metadata.push(meta);
        }
    }

    Ok(TrainRun {
        trajectory,
        batches,
        metadata,
        steps_per_epoch,
        ledger,
    })
}
