//! Deterministic mini training engine.
//!
//! Dense two-layer classifiers on synthetic blob data, trained by plain SGD
//! with optional injected reproduction noise. Every gradient, interpolation
//! and weight addition is charged to a [`CostLedger`] in forward-pass units.

mod dataset;
mod ledger;
mod model;
mod net;
mod noise;
mod train;

pub use dataset::{gen_dataset, Batch, Dataset, DatasetProvider, DatasetSpec};
pub use ledger::{CostLedger, OpKind};
pub use model::{Activation, Arch, ModelState};
pub use net::{backward, forward, input_gradient, loss_and_grad};
pub use noise::{NoiseKind, NoiseModel};
pub use train::{
    init_model, interpolate, train, update_k, Optimizer, StepMetadata, TrainConfig, TrainRun,
};

pub(crate) use net::{dot, evaluate};
pub(crate) use train::sgd_step;
