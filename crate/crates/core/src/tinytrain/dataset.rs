//! Synthetic Gaussian-blob classification data.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub classes: usize,
    pub points_per_class: usize,
    pub dim: usize,
    /// Standard deviation of the class centres; points have unit spread
    /// around their centre.
    #[serde(default = "default_spread")]
    pub spread: f64,
}

fn default_spread() -> f64 {
    2.0
}

impl DatasetSpec {
    pub fn new(classes: usize, points_per_class: usize, dim: usize) -> Self {
        Self {
            classes,
            points_per_class,
            dim,
            spread: default_spread(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Config(format!(
                "dataset needs at least 2 classes, got {}",
                self.classes
            )));
        }
        if self.points_per_class < 1 {
            return Err(Error::Config("points_per_class must be >= 1".into()));
        }
        if self.dim < 2 {
            return Err(Error::Config(format!(
                "input dimension must be >= 2, got {}",
                self.dim
            )));
        }
        if !(self.spread.is_finite() && self.spread >= 0.0) {
            return Err(Error::Config(
                "spread must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Row-major labelled data. Rows are addressed by their position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub dim: usize,
    pub classes: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(dim: usize, classes: usize, features: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        if dim == 0 || features.len() != dim * labels.len() {
            return Err(Error::Shape(format!(
                "{} feature values do not form {} rows of dim {}",
                features.len(),
                labels.len(),
                dim
            )));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!(
                "label {l} out of range for {classes} classes"
            )));
        }
        Ok(Self {
            dim,
            classes,
            features,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::Reference {
                    index: i,
                    len: self.len(),
                });
            }
            features.extend_from_slice(self.row(i));
            labels.push(self.labels[i]);
        }
        Ok(Batch {
            indices: indices.to_vec(),
            dim: self.dim,
            features,
            labels,
        })
    }

    /// Appends rows and returns the index of the first new row.
    pub fn append(&mut self, features: &[f64], labels: &[usize]) -> Result<usize> {
        if features.len() != labels.len() * self.dim {
            return Err(Error::Shape(
                "appended rows do not match dataset dim".into(),
            ));
        }
        let first = self.len();
        self.features.extend_from_slice(features);
        self.labels.extend_from_slice(labels);
        Ok(first)
    }
}

/// Deterministic labelled Gaussian-blob dataset.
pub fn gen_dataset(seed: u64, spec: &DatasetSpec) -> Result<Dataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<f64> = (0..spec.classes * spec.dim)
        .map(|_| spec.spread * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = spec.classes * spec.points_per_class;
    let mut features = Vec::with_capacity(n * spec.dim);
    let mut labels = Vec::with_capacity(n);
    // interleave classes so contiguous index ranges are balanced
    for _ in 0..spec.points_per_class {
        for c in 0..spec.classes {
            for d in 0..spec.dim {
                let z: f64 = rng.sample(StandardNormal);
                features.push(centres[c * spec.dim + d] + z);
            }
            labels.push(c);
        }
    }
    Dataset::new(spec.dim, spec.classes, features, labels)
}

/// A mini-batch of rows together with the dataset indices they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn check(&self) -> Result<()> {
        if self.indices.len() != self.labels.len()
            || self.features.len() != self.labels.len() * self.dim
        {
            return Err(Error::Shape(format!(
                "batch has {} indices, {} labels and {} feature values (dim {})",
                self.indices.len(),
                self.labels.len(),
                self.features.len(),
                self.dim
            )));
        }
        Ok(())
    }
}

/// Anything that can hand out dataset rows at verification time.
pub trait DatasetProvider {
    fn fetch(&self, indices: &[usize]) -> Result<Batch>;
}

impl DatasetProvider for Dataset {
    fn fetch(&self, indices: &[usize]) -> Result<Batch> {
        self.batch(indices)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_for_fixed_seed() {
        let spec = DatasetSpec::new(2, 50, 2);
        let a = gen_dataset(7, &spec).unwrap();
        let b = gen_dataset(7, &spec).unwrap();
        assert_eq!(a.len(), 100);
        let bits = |d: &Dataset| d.features.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.labels, b.labels);
    }

    #[test]
    fn different_seed_differs() {
        let spec = DatasetSpec::new(2, 50, 2);
        let a = gen_dataset(7, &spec).unwrap();
        let b = gen_dataset(8, &spec).unwrap();
        let differing = (0..a.len()).filter(|&i| a.row(i) != b.row(i)).count();
        assert!(differing >= 1);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(matches!(
            gen_dataset(1, &DatasetSpec::new(0, 5, 2)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gen_dataset(1, &DatasetSpec::new(2, 0, 2)),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            gen_dataset(1, &DatasetSpec::new(2, 5, 1)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn batch_out_of_range() {
        let d = gen_dataset(1, &DatasetSpec::new(2, 3, 2)).unwrap();
        assert_eq!(d.batch(&[6]), Err(Error::Reference { index: 6, len: 6 }));
        let b = d.batch(&[0, 5]).unwrap();
        b.check().unwrap();
        assert_eq!(b.row(1), d.row(5));
    }
}
