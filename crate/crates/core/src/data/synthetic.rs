use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;

use super::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{self, tag};

/// Expected distance between two cluster means, in within-cluster standard deviations.
pub const DEFAULT_SEPARATION: f64 = 4.0;

/// Per-feature affine standardization `(x - mean) / std`.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn identity(dim: usize) -> Self {
        Standardizer {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn apply(&self, features: &mut Array2<f64>) {
        for mut row in features.outer_iter_mut() {
            for ((v, m), s) in row.iter_mut().zip(&self.mean).zip(&self.std) {
                *v = (*v - m) / s;
            }
        }
    }
}

/// Gaussian-blob classification task: one isotropic cluster per label with unit
/// spread. Every dataset drawn from a task (client data, canaries, test set,
/// auxiliary noise) passes through the same standardization.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTask {
    label_count: usize,
    input_dim: usize,
    means: Vec<Vec<f64>>,
    standardizer: Standardizer,
}

impl SyntheticTask {
    /// Cluster means are drawn as `N(0, separation^2 / (2 d) I)`, so the expected
    /// squared distance between two means is `separation^2`.
    pub fn new(label_count: usize, input_dim: usize, separation: f64, seed: u64) -> Result<Self> {
        if label_count < 2 {
            return Err(Error::invalid(format!("need at least 2 labels, got {label_count}")));
        }
        if input_dim < 2 {
            return Err(Error::invalid(format!("need input_dim >= 2, got {input_dim}")));
        }
        if !(separation.is_finite() && separation >= 0.0) {
            return Err(Error::invalid(format!(
                "separation {separation} must be finite and >= 0"
            )));
        }
        let mut rng = rng::stream(seed, &[tag::TASK]);
        let scale = separation / (2.0 * input_dim as f64).sqrt();
        let means: Vec<Vec<f64>> = (0..label_count)
            .map(|_| {
                (0..input_dim)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        let l = label_count as f64;
        let mut standardizer = Standardizer::identity(input_dim);
        for j in 0..input_dim {
            let m = means.iter().map(|mu| mu[j]).sum::<f64>() / l;
            let between = means.iter().map(|mu| (mu[j] - m).powi(2)).sum::<f64>() / l;
            standardizer.mean[j] = m;
            standardizer.std[j] = (1.0 + between).sqrt();
        }
        Ok(SyntheticTask {
            label_count,
            input_dim,
            means,
            standardizer,
        })
    }

    pub fn label_count(&self) -> usize {
        self.label_count
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn standardizer(&self) -> &Standardizer {
        &self.standardizer
    }

    /// `n` samples, labels balanced up to rounding, in shuffled order.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Dataset> {
        if n < self.label_count {
            return Err(Error::invalid(format!(
                "{n} samples cannot cover {} labels",
                self.label_count
            )));
        }
        let mut labels: Vec<usize> = (0..n).map(|i| i % self.label_count).collect();
        labels.shuffle(rng);
        let mut features = Array2::<f64>::zeros((n, self.input_dim));
        for (mut row, &y) in features.outer_iter_mut().zip(&labels) {
            for (v, mu) in row.iter_mut().zip(&self.means[y]) {
                *v = mu + rng.sample::<f64, _>(StandardNormal);
            }
        }
        self.standardizer.apply(&mut features);
        Dataset::new(features, labels, self.label_count)
    }

    /// Label-tagged pure noise: raw features i.i.d. standard normal, then the
    /// task's standardization.
    pub fn auxiliary(&self, per_label: usize, seed: u64) -> Result<Dataset> {
        auxiliary_with(self.label_count, per_label, self.input_dim, seed, &self.standardizer)
    }
}

/// Balanced Gaussian-blob dataset at [`DEFAULT_SEPARATION`].
pub fn make_synthetic(label_count: usize, n_samples: usize, input_dim: usize, seed: u64) -> Result<Dataset> {
    let task = SyntheticTask::new(label_count, input_dim, DEFAULT_SEPARATION, seed)?;
    task.sample(n_samples, &mut rng::stream(seed, &[tag::TRAIN_DATA]))
}

/// Auxiliary dataset of `per_label` noise samples per label with an identity transform.
pub fn make_auxiliary(label_count: usize, per_label: usize, input_dim: usize, seed: u64) -> Result<Dataset> {
    auxiliary_with(
        label_count,
        per_label,
        input_dim,
        seed,
        &Standardizer::identity(input_dim),
    )
}

fn auxiliary_with(
    label_count: usize,
    per_label: usize,
    input_dim: usize,
    seed: u64,
    standardizer: &Standardizer,
) -> Result<Dataset> {
    if per_label == 0 {
        return Err(Error::invalid("auxiliary set needs at least one sample per label"));
    }
    let mut rng = rng::stream(seed, &[tag::AUXILIARY]);
    let n = label_count * per_label;
    let labels: Vec<usize> = (0..n).map(|i| i / per_label).collect();
    let mut features = Array2::<f64>::zeros((n, input_dim));
    features.mapv_inplace(|_| rng.sample::<f64, _>(StandardNormal));
    standardizer.apply(&mut features);
    Dataset::new(features, labels, label_count)
}
