use crate::error::{Error, Result};

use super::Objective;

/// A frozen-extractor feature vector with its class label.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub features: Vec<f64>,
    pub label: usize,
}

impl Example {
    pub fn new(features: Vec<f64>, label: usize) -> Self {
        Example { features, label }
    }
}

/// Multinomial logistic regression head on frozen features with an ℓ2
/// penalty on every parameter, bias included.
///
/// Parameters are laid out class-major: class `c` owns
/// `theta[c*(f+1) .. (c+1)*(f+1)]`, the last entry of each block being the
/// bias. The per-example loss is
/// `logsumexp(z) - z_y + (lambda/2)||theta||^2` with `z_c = w_c . x + b_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxHeadTask {
    num_classes: usize,
    feature_dim: usize,
    l2_lambda: f64,
}

/// Default ℓ2 strength for frozen-feature heads.
pub const DEFAULT_L2_LAMBDA: f64 = 1e-4;

impl SoftmaxHeadTask {
    pub fn new(num_classes: usize, feature_dim: usize, l2_lambda: f64) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Task("softmax head needs at least 2 classes".into()));
        }
        if feature_dim < 1 {
            return Err(Error::Task("feature_dim must be at least 1".into()));
        }
        if !(l2_lambda >= 0.0 && l2_lambda.is_finite()) {
            return Err(Error::Task("l2_lambda must be non-negative".into()));
        }
        Ok(SoftmaxHeadTask {
            num_classes,
            feature_dim,
            l2_lambda,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn l2_lambda(&self) -> f64 {
        self.l2_lambda
    }

    fn logits_into(&self, theta: &[f64], x: &[f64], z: &mut [f64]) {
        let stride = self.feature_dim + 1;
        for (c, zc) in z.iter_mut().enumerate() {
            let block = &theta[c * stride..(c + 1) * stride];
            let mut acc = block[self.feature_dim];
            for (w, xi) in block[..self.feature_dim].iter().zip(x) {
                acc += w * xi;
            }
            *zc = acc;
        }
    }

    /// Class scores `z` for one feature vector.
    pub fn logits(&self, theta: &[f64], x: &[f64]) -> Vec<f64> {
        let mut z = vec![0.0; self.num_classes];
        self.logits_into(theta, x, &mut z);
        z
    }

    /// Predicted class; ties resolve to the lowest index.
    pub fn predict(&self, theta: &[f64], x: &[f64]) -> usize {
        argmax(&self.logits(theta, x))
    }

    fn with_scratch<R>(&self, f: impl FnOnce(&mut [f64]) -> R) -> R {
        let k = self.num_classes;
        if k <= 32 {
            let mut buf = [0.0f64; 32];
            f(&mut buf[..k])
        } else {
            f(&mut vec![0.0; k])
        }
    }

    fn penalty(&self, theta: &[f64]) -> f64 {
        if self.l2_lambda == 0.0 {
            0.0
        } else {
            0.5 * self.l2_lambda * crate::linalg::norm_sq(theta)
        }
    }
}

fn argmax(z: &[f64]) -> usize {
    let mut best = 0;
    for (c, &v) in z.iter().enumerate().skip(1) {
        if v > z[best] {
            best = c;
        }
    }
    best
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

impl Objective for SoftmaxHeadTask {
    type Sample = Example;

    fn dim(&self) -> usize {
        self.num_classes * (self.feature_dim + 1)
    }

    fn check_sample(&self, sample: &Example) -> Result<()> {
        if sample.features.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: sample.features.len(),
            });
        }
        if sample.label >= self.num_classes {
            return Err(Error::Task(format!(
                "label {} out of range for {} classes",
                sample.label, self.num_classes
            )));
        }
        Ok(())
    }

    fn sample_loss(&self, theta: &[f64], sample: &Example) -> f64 {
        let data = self.with_scratch(|z| {
            self.logits_into(theta, &sample.features, z);
            log_sum_exp(z) - z[sample.label]
        });
        data + self.penalty(theta)
    }

    fn gradient_into(&self, theta: &[f64], sample: &Example, out: &mut [f64]) {
        let stride = self.feature_dim + 1;
        let x = &sample.features;
        self.with_scratch(|z| {
            self.logits_into(theta, x, z);
            let lse = log_sum_exp(z);
            for (c, zc) in z.iter().enumerate() {
                let p = (zc - lse).exp();
                let r = if c == sample.label { p - 1.0 } else { p };
                let block = &mut out[c * stride..(c + 1) * stride];
                for (o, xi) in block[..self.feature_dim].iter_mut().zip(x) {
                    *o = r * xi;
                }
                block[self.feature_dim] = r;
            }
        });
        if self.l2_lambda != 0.0 {
            crate::linalg::axpy(self.l2_lambda, theta, out);
        }
    }

    fn is_correct(&self, theta: &[f64], sample: &Example) -> Option<bool> {
        let pred = self.with_scratch(|z| {
            self.logits_into(theta, &sample.features, z);
            argmax(z)
        });
        Some(pred == sample.label)
    }
}
