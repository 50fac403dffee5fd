use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tinytrain::{dot, ModelState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    L1,
    #[default]
    L2,
    Linf,
    /// `1 - cos(a, b)`. Two zero vectors are at distance 0, a zero and a
    /// nonzero vector at distance 1.
    CosineDistance,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::L1 => "l1",
            Metric::L2 => "l2",
            Metric::Linf => "linf",
            Metric::CosineDistance => "cosine-distance",
        }
    }

    /// Distance between two raw vectors of equal length.
    pub fn between(self, a: &[f64], b: &[f64]) -> Result<f64> {
        if a.len() != b.len() {
            return Err(Error::Shape(format!(
                "vectors of length {} and {}",
                a.len(),
                b.len()
            )));
        }
        let diffs = a.iter().zip(b).map(|(x, y)| x - y);
        Ok(match self {
            Metric::L1 => diffs.map(f64::abs).sum(),
            Metric::L2 => diffs.map(|d| d * d).sum::<f64>().sqrt(),
            Metric::Linf => diffs.map(f64::abs).fold(0.0, f64::max),
            Metric::CosineDistance => {
                let na = dot(a, a).sqrt();
                let nb = dot(b, b).sqrt();
                match (na > 0.0, nb > 0.0) {
                    _ if a == b => 0.0,
                    (false, false) => 0.0,
                    (true, true) => (1.0 - dot(a, b) / (na * nb)).clamp(0.0, 2.0),
                    _ => 1.0,
                }
            }
        })
    }

    /// Norm induced by the metric, i.e. the distance to the origin. For the
    /// cosine distance (which has none) the l2 norm is used.
    pub fn norm(self, v: &[f64]) -> f64 {
        match self {
            Metric::L1 => v.iter().map(|x| x.abs()).sum(),
            Metric::Linf => v.iter().map(|x| x.abs()).fold(0.0, f64::max),
            Metric::L2 | Metric::CosineDistance => dot(v, v).sqrt(),
        }
    }
}

/// Distance between two model states under `metric`.
pub fn distance(metric: Metric, a: &ModelState, b: &ModelState) -> Result<f64> {
    a.same_arch(b)?;
    metric.between(a.weights(), b.weights())
}

pub(crate) fn l2(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub(crate) fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
