use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;

use super::{ClientDataset, Objective};

/// One sample of a quadratic shard: a center drawn around its client's mean
/// center. Its loss is `½(θ−c)ᵀA_client(θ−c)`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadSample {
    pub client: usize,
    pub center: Vec<f64>,
}

/// Federated quadratic `F(θ) = (1/n) Σ_i mean_j ½(θ−c_ij)ᵀA_i(θ−c_ij)`.
///
/// `mu` and `l` are the extreme eigenvalues of the mean curvature, so `F`
/// is `mu`-strongly convex and `l`-smooth exactly.
#[derive(Debug, Clone)]
pub struct QuadraticTask {
    dim: usize,
    /// Row-major `d×d` curvature of each client.
    curvatures: Vec<Vec<f64>>,
    mu: f64,
    l: f64,
    minimizer: Vec<f64>,
    optimum: f64,
}

impl QuadraticTask {
    /// Builds the task from per-client curvatures and their shards. `mu`/`l`
    /// come from an eigendecomposition of the mean curvature and `θ*` from a
    /// Cholesky solve of `Σ A_i θ = Σ A_i c̄_i`.
    pub fn from_parts(
        curvatures: Vec<DMatrix<f64>>,
        shards: &[ClientDataset<QuadSample>],
    ) -> Result<Self> {
        let bounds = Self::spectrum(&curvatures)?;
        Self::assemble(curvatures, shards, bounds)
    }

    fn spectrum(curvatures: &[DMatrix<f64>]) -> Result<(f64, f64)> {
        let d = curvatures
            .first()
            .ok_or_else(|| Error::Task("no client curvatures".into()))?
            .nrows();
        let mut mean = DMatrix::<f64>::zeros(d, d);
        for a in curvatures {
            mean += a;
        }
        mean /= curvatures.len() as f64;
        let eig = SymmetricEigen::new(mean).eigenvalues;
        Ok((eig.min(), eig.max()))
    }

    fn assemble(
        curvatures: Vec<DMatrix<f64>>,
        shards: &[ClientDataset<QuadSample>],
        (mu, l): (f64, f64),
    ) -> Result<Self> {
        let n = curvatures.len();
        if shards.len() != n {
            return Err(Error::Task(format!(
                "{} curvatures but {} shards",
                n,
                shards.len()
            )));
        }
        let d = curvatures[0].nrows();
        let mut lhs = DMatrix::<f64>::zeros(d, d);
        let mut rhs = DVector::<f64>::zeros(d);
        for (i, (a, shard)) in curvatures.iter().zip(shards).enumerate() {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::Task(format!("curvature {i} is not {d}x{d}")));
            }
            if a.clone().cholesky().is_none() {
                return Err(Error::Task(format!("curvature {i} is not positive definite")));
            }
            let mut mean_center = DVector::<f64>::zeros(d);
            for s in shard.samples() {
                if s.client != i || s.center.len() != d {
                    return Err(Error::Task(format!("shard {i} holds a foreign sample")));
                }
                mean_center += DVector::from_column_slice(&s.center);
            }
            mean_center /= shard.size() as f64;
            lhs += a;
            rhs += a * mean_center;
        }
        if !(mu > 0.0 && mu <= l) {
            return Err(Error::Task(format!("mean curvature spectrum [{mu}, {l}] is not positive")));
        }
        let minimizer = lhs
            .cholesky()
            .ok_or_else(|| Error::Task("summed curvature is singular".into()))?
            .solve(&rhs);
        let mut task = QuadraticTask {
            dim: d,
            curvatures: curvatures
                .iter()
                .map(|a| a.transpose().as_slice().to_vec())
                .collect(),
            mu,
            l,
            minimizer: minimizer.as_slice().to_vec(),
            optimum: 0.0,
        };
        task.optimum = task.objective_value(&task.minimizer, shards);
        Ok(task)
    }

    /// `F(θ)`: mean over clients of each client's mean sample loss.
    pub fn objective_value(&self, theta: &[f64], shards: &[ClientDataset<QuadSample>]) -> f64 {
        let total: f64 = shards
            .iter()
            .map(|shard| {
                shard
                    .samples()
                    .iter()
                    .map(|s| self.sample_loss(theta, s))
                    .sum::<f64>()
                    / shard.size() as f64
            })
            .sum();
        total / shards.len() as f64
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn smoothness(&self) -> f64 {
        self.l
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    pub fn num_clients(&self) -> usize {
        self.curvatures.len()
    }

    /// Row-major curvature of client `i`.
    pub fn curvature(&self, i: usize) -> &[f64] {
        &self.curvatures[i]
    }

    fn apply_curvature(&self, client: usize, v: &[f64], out: &mut [f64]) {
        let a = &self.curvatures[client];
        let d = self.dim;
        for (r, o) in out.iter_mut().enumerate() {
            *o = crate::linalg::dot(&a[r * d..(r + 1) * d], v);
        }
    }
}

impl Objective for QuadraticTask {
    type Sample = QuadSample;

    fn dim(&self) -> usize {
        self.dim
    }

    fn check_sample(&self, sample: &QuadSample) -> Result<()> {
        if sample.client >= self.curvatures.len() {
            return Err(Error::Task(format!("unknown client {}", sample.client)));
        }
        if sample.center.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                got: sample.center.len(),
            });
        }
        Ok(())
    }

    fn sample_loss(&self, theta: &[f64], sample: &QuadSample) -> f64 {
        let diff = crate::linalg::sub(theta, &sample.center);
        let mut ad = vec![0.0; self.dim];
        self.apply_curvature(sample.client, &diff, &mut ad);
        0.5 * crate::linalg::dot(&diff, &ad)
    }

    fn gradient_into(&self, theta: &[f64], sample: &QuadSample, out: &mut [f64]) {
        let diff = crate::linalg::sub(theta, &sample.center);
        self.apply_curvature(sample.client, &diff, out);
    }

    fn is_correct(&self, _theta: &[f64], _sample: &QuadSample) -> Option<bool> {
        None
    }

    fn optimum_value(&self) -> Option<f64> {
        Some(self.optimum)
    }
}

/// Parameters of a synthetic federated quadratic.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticSpec {
    pub dim: usize,
    pub clients: usize,
    pub mu: f64,
    pub l: f64,
    /// Standard deviation of client centers around the shared base center.
    pub heterogeneity: f64,
    pub samples_per_client: usize,
    /// Standard deviation of sample centers around their client center.
    pub sample_spread: f64,
    /// Standard deviation of the shared base center's coordinates.
    pub center_scale: f64,
    pub seed: u64,
}

impl Default for QuadraticSpec {
    fn default() -> Self {
        QuadraticSpec {
            dim: 20,
            clients: 20,
            mu: 0.01,
            l: 1.0,
            heterogeneity: 0.5,
            samples_per_client: 10,
            sample_spread: 0.0,
            center_scale: 1.0,
            seed: 0,
        }
    }
}

/// Generates a quadratic whose mean curvature has spectrum exactly
/// `[mu, l]`.
///
/// All clients share one random eigenbasis `Q`. Each `A_i = Q Λ_i Qᵀ` has
/// `mu` and `l` as its extreme eigenvalues and log-uniform interior
/// eigenvalues, so every `A_i` and their mean have spectrum in `[mu, l]` with
/// both ends attained.
pub fn make_synthetic_quadratic(
    spec: &QuadraticSpec,
) -> Result<(QuadraticTask, Vec<ClientDataset<QuadSample>>)> {
    let QuadraticSpec {
        dim: d,
        clients: n,
        mu,
        l,
        ..
    } = *spec;
    if d < 1 || n < 1 || spec.samples_per_client < 1 {
        return Err(Error::Task("dim, clients and samples_per_client must be positive".into()));
    }
    if !(mu > 0.0) || mu > l || !l.is_finite() {
        return Err(Error::Task(format!("need 0 < mu <= L (got mu={mu}, L={l})")));
    }
    if d == 1 && mu != l {
        return Err(Error::Task("a one-dimensional quadratic needs mu == L".into()));
    }
    let mut rng = seeded_rng(spec.seed);
    let mut normal = || -> f64 { rng.sample(StandardNormal) };

    let basis = DMatrix::<f64>::from_fn(d, d, |_, _| normal()).qr().q();
    let base: Vec<f64> = (0..d).map(|_| spec.center_scale * normal()).collect();

    let mut curvatures = Vec::with_capacity(n);
    let mut shards = Vec::with_capacity(n);
    let (log_mu, log_l) = (mu.ln(), l.ln());
    for i in 0..n {
        let mut eig = DVector::<f64>::zeros(d);
        eig[0] = mu;
        eig[d - 1] = l;
        for k in 1..d.saturating_sub(1) {
            let u: f64 = rng.random();
            eig[k] = (log_mu + u * (log_l - log_mu)).exp().clamp(mu, l);
        }
        let a = &basis * DMatrix::from_diagonal(&eig) * basis.transpose();
        curvatures.push((&a + a.transpose()) * 0.5);

        let center: Vec<f64> = base
            .iter()
            .map(|b| b + spec.heterogeneity * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let m = spec.samples_per_client;
        let mut offsets: Vec<Vec<f64>> = (0..m)
            .map(|_| {
                (0..d)
                    .map(|_| spec.sample_spread * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        for k in 0..d {
            let mean = offsets.iter().map(|o| o[k]).sum::<f64>() / m as f64;
            for o in &mut offsets {
                o[k] -= mean;
            }
        }
        let samples = offsets
            .into_iter()
            .map(|o| QuadSample {
                client: i,
                center: center.iter().zip(&o).map(|(c, oi)| c + oi).collect(),
            })
            .collect();
        shards.push(ClientDataset::new(samples)?);
    }
    let task = QuadraticTask::assemble(curvatures, &shards, (mu, l))?;
    Ok((task, shards))
}
