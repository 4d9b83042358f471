//! Objectives, client datasets, ingestion and partitioning.
//!
//! An [`Objective`] supplies per-example losses and gradients over a flat
//! parameter vector. Two objectives ship with the crate: the frozen-feature
//! multinomial logistic head ([`SoftmaxHeadTask`]) and a synthetic strongly
//! convex quadratic with a known minimizer ([`QuadraticTask`]).

mod data;
mod quadratic;
mod softmax;

pub use data::{
    load_frozen_features, make_anisotropic_features, parse_frozen_features, partition_iid,
    partition_indices, split_holdout, write_frozen_features, AnisotropicSpec, FeatureMetadata,
};
pub use quadratic::{make_synthetic_quadratic, QuadSample, QuadraticSpec, QuadraticTask};
pub use softmax::{Example, SoftmaxHeadTask, DEFAULT_L2_LAMBDA};

use crate::error::{check_dim, Error, Result};

/// A per-example loss over a flat parameter vector.
///
/// Implementations are immutable and shared across client workers.
pub trait Objective: Send + Sync {
    type Sample: Clone + Send + Sync;

    /// Flattened parameter dimension `d`.
    fn dim(&self) -> usize;

    /// Rejects samples that do not fit this objective.
    fn check_sample(&self, sample: &Self::Sample) -> Result<()>;

    /// Loss of one sample. Dimensions are assumed checked.
    fn sample_loss(&self, theta: &[f64], sample: &Self::Sample) -> f64;

    /// Overwrites `out` with the per-example gradient. Dimensions are
    /// assumed checked.
    fn gradient_into(&self, theta: &[f64], sample: &Self::Sample, out: &mut [f64]);

    /// Whether the model classifies `sample` correctly; `None` when the
    /// objective has no notion of a label.
    fn is_correct(&self, theta: &[f64], sample: &Self::Sample) -> Option<bool>;

    /// `F(theta*)` over the training federation when it is known.
    fn optimum_value(&self) -> Option<f64> {
        None
    }

    /// Checked per-example gradient `grad l(theta; sample)`.
    fn per_example_gradient(&self, theta: &[f64], sample: &Self::Sample) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        self.check_sample(sample)?;
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(theta, sample, &mut out);
        Ok(out)
    }

    fn loss(&self, theta: &[f64], sample: &Self::Sample) -> Result<f64> {
        check_dim(self.dim(), theta.len())?;
        self.check_sample(sample)?;
        Ok(self.sample_loss(theta, sample))
    }
}

/// Linear loss `l(θ; s) = θ·s`, whose per-example gradient is the sample
/// itself regardless of `θ`. Lets the release mechanism be driven with
/// arbitrary prescribed gradients.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LinearTask {
    pub dim: usize,
}

impl Objective for LinearTask {
    type Sample = Vec<f64>;

    fn dim(&self) -> usize {
        self.dim
    }

    fn check_sample(&self, sample: &Vec<f64>) -> Result<()> {
        check_dim(self.dim, sample.len())
    }

    fn sample_loss(&self, theta: &[f64], sample: &Vec<f64>) -> f64 {
        crate::linalg::dot(theta, sample)
    }

    fn gradient_into(&self, _theta: &[f64], sample: &Vec<f64>, out: &mut [f64]) {
        out.copy_from_slice(sample);
    }

    fn is_correct(&self, _theta: &[f64], _sample: &Vec<f64>) -> Option<bool> {
        None
    }
}

/// One client's local data. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientDataset<S> {
    samples: Vec<S>,
}

impl<S> ClientDataset<S> {
    pub fn new(samples: Vec<S>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::EmptyDataset);
        }
        Ok(ClientDataset { samples })
    }

    pub fn size(&self) -> usize {
        self.samples.len()
    }

    pub fn samples(&self) -> &[S] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<S> {
        self.samples
    }
}

/// Mean loss over `samples` and, for labelled objectives, the fraction of
/// argmax-correct predictions.
pub fn loss_and_accuracy<O: Objective>(
    objective: &O,
    theta: &[f64],
    samples: &[O::Sample],
) -> Result<(f64, Option<f64>)> {
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_dim(objective.dim(), theta.len())?;
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut labelled = true;
    for s in samples {
        objective.check_sample(s)?;
        loss += objective.sample_loss(theta, s);
        match objective.is_correct(theta, s) {
            Some(true) => correct += 1,
            Some(false) => {}
            None => labelled = false,
        }
    }
    let count = samples.len() as f64;
    let accuracy = labelled.then(|| correct as f64 / count);
    Ok((loss / count, accuracy))
}
