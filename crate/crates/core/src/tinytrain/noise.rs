//! Simulated reproduction noise.
//!
//! Real accelerators make every re-run of a training step land slightly
//! elsewhere. Here that error is injected explicitly after each SGD step so
//! that its size and shape are under test control.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::net::dot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseKind {
    #[default]
    None,
    IsotropicGaussian,
    /// Gaussian noise whose variance along the update direction is
    /// `anisotropy_ratio` times the variance in every orthogonal direction.
    AnisotropicAlongUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    #[serde(default)]
    pub kind: NoiseKind,
    /// Per-coordinate standard deviation, or, when `relative`, the expected
    /// noise norm as a fraction of the update norm.
    #[serde(default)]
    pub scale: f64,
    #[serde(default = "one", alias = "ratio")]
    pub anisotropy_ratio: f64,
    #[serde(default)]
    pub relative: bool,
}

fn one() -> f64 {
    1.0
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self::none()
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        Self {
            kind: NoiseKind::None,
            scale: 0.0,
            anisotropy_ratio: 1.0,
            relative: false,
        }
    }

    pub fn isotropic(scale: f64) -> Self {
        Self {
            kind: NoiseKind::IsotropicGaussian,
            scale,
            anisotropy_ratio: 1.0,
            relative: false,
        }
    }

    pub fn relative_isotropic(scale: f64) -> Self {
        Self {
            relative: true,
            ..Self::isotropic(scale)
        }
    }

    pub fn anisotropic(scale: f64, ratio: f64, relative: bool) -> Self {
        Self {
            kind: NoiseKind::AnisotropicAlongUpdate,
            scale,
            anisotropy_ratio: ratio,
            relative,
        }
    }

    pub fn is_none(&self) -> bool {
        self.kind == NoiseKind::None
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.scale.is_finite() && self.scale >= 0.0) {
            return Err(Error::Config(format!(
                "noise scale must be >= 0, got {}",
                self.scale
            )));
        }
        if !(self.anisotropy_ratio > 0.0 && self.anisotropy_ratio <= 1.0) {
            return Err(Error::Config(format!(
                "anisotropy ratio must lie in (0, 1], got {}",
                self.anisotropy_ratio
            )));
        }
        Ok(())
    }

    /// Draws one perturbation for an SGD step whose weight change was
    /// `update`. Returns `None` for [`NoiseKind::None`].
    pub fn sample<R: Rng + ?Sized>(&self, update: &[f64], rng: &mut R) -> Option<Vec<f64>> {
        if self.is_none() {
            return None;
        }
        let n = update.len();
        let update_norm = dot(update, update).sqrt();
        let sigma = if self.relative {
            self.scale * update_norm / (n as f64).sqrt()
        } else {
            self.scale
        };
        let mut z: Vec<f64> = (0..n)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        if self.kind == NoiseKind::AnisotropicAlongUpdate && update_norm > 0.0 {
            // shrink the component along the unit update direction
            let along = dot(&z, update) / update_norm;
            let shrink = (self.anisotropy_ratio.sqrt() - 1.0) * along / update_norm;
            for (zi, ui) in z.iter_mut().zip(update) {
                *zi += shrink * ui;
            }
        }
        for zi in &mut z {
            *zi *= sigma;
        }
        Some(z)
    }
}
