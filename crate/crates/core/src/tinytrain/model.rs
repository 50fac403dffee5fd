use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    pub fn id(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    pub fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Tanh),
            1 => Some(Activation::Relu),
            _ => None,
        }
    }
}

/// Dense feed-forward classifier: `input -> hidden (activation) -> classes`.
///
/// `hidden == 0` drops the hidden layer and gives plain softmax regression.
/// Parameters are laid out flat as `[W1 (hidden x input), b1, W2 (classes x
/// hidden), b2]`, matrices row-major.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Arch {
    pub input_dim: usize,
    pub hidden: usize,
    pub classes: usize,
    pub activation: Activation,
}

impl Arch {
    pub fn new(input_dim: usize, hidden: usize, classes: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            hidden,
            classes,
            activation,
        }
    }

    pub fn linear(input_dim: usize, classes: usize) -> Self {
        Self::new(input_dim, 0, classes, Activation::Tanh)
    }

    pub fn param_count(&self) -> usize {
        if self.hidden == 0 {
            self.classes * self.input_dim + self.classes
        } else {
            self.hidden * self.input_dim + self.hidden + self.classes * self.hidden + self.classes
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.classes < 2 {
            return Err(Error::Config(format!(
                "architecture needs input_dim >= 1 and classes >= 2, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// A point in weight space: flat weights plus the architecture they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelState {
    arch: Arch,
    weights: Vec<f64>,
}

impl ModelState {
    /// Checks the length against the architecture and rejects NaN/Inf.
    pub fn new(arch: Arch, weights: Vec<f64>) -> Result<Self> {
        arch.validate()?;
        if weights.len() != arch.param_count() {
            return Err(Error::Shape(format!(
                "{} weights given, architecture needs {}",
                weights.len(),
                arch.param_count()
            )));
        }
        if let Some(i) = weights.iter().position(|w| !w.is_finite()) {
            return Err(Error::Domain(format!("weight {i} is not finite")));
        }
        Ok(Self { arch, weights })
    }

    pub fn zeros(arch: Arch) -> Self {
        Self {
            weights: vec![0.0; arch.param_count()],
            arch,
        }
    }

    pub fn arch(&self) -> &Arch {
        &self.arch
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub(crate) fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub(crate) fn check_finite(&self) -> Result<()> {
        match self.weights.iter().position(|w| !w.is_finite()) {
            Some(i) => Err(Error::Domain(format!("weight {i} became non-finite"))),
            None => Ok(()),
        }
    }

    pub fn same_arch(&self, other: &ModelState) -> Result<()> {
        if self.arch != other.arch {
            return Err(Error::Shape(format!(
                "architecture mismatch: {:?} vs {:?}",
                self.arch, other.arch
            )));
        }
        Ok(())
    }

    /// Bitwise equality of the weight vectors.
    pub fn bit_eq(&self, other: &ModelState) -> bool {
        self.arch == other.arch
            && self
                .weights
                .iter()
                .zip(&other.weights)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
