//! Executable checks of the optimizer's analytical guarantees.
//!
//! Each [`Suite`] runs a batch of measurements against the production code
//! paths and compares them with a bound, producing a [`SuiteReport`]. The
//! `measure_*` functions return raw measurements so callers can compare
//! them with their own reference values.

use std::fmt;
use std::hint::black_box;
use std::str::FromStr;
use std::time::Instant;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::accountant::{
    calibrate_sigma, composed_delta, gaussian_delta, noise_floor, sensitivity, single_round_delta,
    theoretical_floor, FloorInputs, SIGMA_BRACKET,
};
use crate::client::{clipped_sum, private_release, release_from_sum, ReleaseParams};
use crate::config::{FederatedConfig, OptimizerKind};
use crate::error::{Error, Result};
use crate::harness::{run_experiment, run_round, ExperimentPlan, Federation, TaskBinding};
use crate::linalg::{dot, norm, norm_sq, sub};
use crate::oracle::{dense_calls, dense_preconditioner, fisher_proxy, hockey_stick_quadrature};
use crate::rng::{derive_noise_stream, seeded_rng};
use crate::server::{aggregate, precondition_apply, update_momentum, ServerState};
use crate::task::{
    make_synthetic_quadratic, ClientDataset, LinearTask, Objective, QuadraticSpec, QuadraticTask,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Suite {
    ShermanMorrison,
    ClipNorm,
    MomentumMoment,
    VarianceReduction,
    NoiseFloor,
    Descent,
    ConvergenceFloor,
    ComplexityScaling,
    Accountant,
}

impl Suite {
    pub const ALL: [Suite; 9] = [
        Suite::ShermanMorrison,
        Suite::ClipNorm,
        Suite::MomentumMoment,
        Suite::VarianceReduction,
        Suite::NoiseFloor,
        Suite::Descent,
        Suite::ConvergenceFloor,
        Suite::ComplexityScaling,
        Suite::Accountant,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::ShermanMorrison => "SHERMAN_MORRISON",
            Suite::ClipNorm => "CLIP_NORM",
            Suite::MomentumMoment => "MOMENTUM_MOMENT",
            Suite::VarianceReduction => "VARIANCE_REDUCTION",
            Suite::NoiseFloor => "NOISE_FLOOR",
            Suite::Descent => "DESCENT",
            Suite::ConvergenceFloor => "CONVERGENCE_FLOOR",
            Suite::ComplexityScaling => "COMPLEXITY_SCALING",
            Suite::Accountant => "ACCOUNTANT",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    /// Accepts `SHERMAN_MORRISON`, `sherman-morrison` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_uppercase().replace('-', "_");
        Suite::ALL
            .into_iter()
            .find(|suite| suite.name() == key)
            .ok_or_else(|| {
                let names: Vec<&str> = Suite::ALL.iter().map(|s| s.name()).collect();
                Error::InvalidConfig(vec![format!(
                    "unknown suite {s:?}; expected one of {}",
                    names.join(", ")
                )])
            })
    }
}

/// One measured quantity against its bound.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub bound: f64,
    /// Distance to the bound in the passing direction; negative on failure.
    pub margin: f64,
    pub passed: bool,
}

impl Check {
    /// Passes when `measured <= bound`.
    pub fn at_most(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let passed = measured <= bound;
        Check {
            name: name.into(),
            measured,
            bound,
            margin: bound - measured,
            passed,
        }
    }

    /// Passes when `measured >= bound`.
    pub fn at_least(name: impl Into<String>, measured: f64, bound: f64) -> Self {
        let passed = measured >= bound;
        Check {
            name: name.into(),
            measured,
            bound,
            margin: measured - bound,
            passed,
        }
    }

    fn failed(name: impl Into<String>, err: &Error) -> Self {
        Check {
            name: format!("{}: {err}", name.into()),
            measured: f64::NAN,
            bound: f64::NAN,
            margin: f64::NAN,
            passed: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub seed: u64,
    pub checks: Vec<Check>,
    /// Estimates and observations that are not pass/fail.
    pub notes: Vec<String>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "suite {} (seed {}): {}",
            self.suite,
            self.seed,
            if self.passed() { "PASS" } else { "FAIL" }
        )?;
        for c in &self.checks {
            writeln!(
                f,
                "  {} {:<32} measured={:.6e} bound={:.6e} margin={:.3e}",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.measured,
                c.bound,
                c.margin
            )?;
        }
        for n in &self.notes {
            writeln!(f, "  note: {n}")?;
        }
        Ok(())
    }
}

/// Runs one suite. Internal errors show up as failed checks.
pub fn verify_theory(suite: Suite, seed: u64) -> SuiteReport {
    let mut report = SuiteReport {
        suite,
        seed,
        checks: Vec::new(),
        notes: Vec::new(),
    };
    let outcome = match suite {
        Suite::ShermanMorrison => sherman_morrison_suite(seed, &mut report),
        Suite::ClipNorm => clip_norm_suite(seed, &mut report),
        Suite::MomentumMoment => momentum_moment_suite(seed, &mut report),
        Suite::VarianceReduction => variance_reduction_suite(seed, &mut report),
        Suite::NoiseFloor => noise_floor_suite(seed, &mut report),
        Suite::Descent => descent_suite(seed, &mut report),
        Suite::ConvergenceFloor => convergence_floor_suite(seed, &mut report),
        Suite::ComplexityScaling => complexity_suite(seed, &mut report),
        Suite::Accountant => accountant_suite(seed, &mut report),
    };
    if let Err(e) = outcome {
        report.checks.push(Check::failed(suite.name(), &e));
    }
    report
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize, scale: f64) -> Vec<f64> {
    (0..d).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn log_uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    (lo.ln() + rng.random::<f64>() * (hi.ln() - lo.ln())).exp()
}

// ---------------------------------------------------------------------------
// preconditioner

/// Worst errors of the Sherman–Morrison apply against the dense inverse.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShermanMorrisonErrors {
    /// `max ||precondition_apply − H_dense G|| / ||G||`
    pub apply: f64,
    /// `max ||H_dense (ρI + MMᵀ) − I||_F`
    pub inverse_residual: f64,
    pub trials: usize,
}

/// `trials` random `(M, G, ρ)` cycling through `dims`, with `ρ` in
/// `[0.1, 10]` and `||M||` in `[0.1, 3]`.
pub fn measure_sherman_morrison(trials: usize, dims: &[usize], seed: u64) -> Result<ShermanMorrisonErrors> {
    let mut rng = seeded_rng(seed);
    let mut out = ShermanMorrisonErrors {
        apply: 0.0,
        inverse_residual: 0.0,
        trials,
    };
    for k in 0..trials {
        let d = dims[k % dims.len()];
        let rho = log_uniform(&mut rng, 0.1, 10.0);
        let m_norm = log_uniform(&mut rng, 0.1, 3.0);
        let mut m = gaussian_vec(&mut rng, d, 1.0);
        let scale = m_norm / norm(&m).max(f64::MIN_POSITIVE);
        m.iter_mut().for_each(|x| *x *= scale);
        let g_scale = log_uniform(&mut rng, 0.01, 100.0);
        let g = gaussian_vec(&mut rng, d, g_scale);

        let h = dense_preconditioner(&m, rho)?;
        let fast = precondition_apply(&m, &g, rho)?;
        let dense = &h * nalgebra::DVector::from_column_slice(&g);
        let err = norm(&sub(&fast, dense.as_slice())) / norm(&g);
        let residual = (&h * fisher_proxy(&m, rho) - nalgebra::DMatrix::<f64>::identity(d, d)).norm();
        out.apply = out.apply.max(err);
        out.inverse_residual = out.inverse_residual.max(residual);
    }
    Ok(out)
}

/// Violation counts of the operator bounds of `H = (ρI + MMᵀ)⁻¹`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatorBoundCounts {
    /// `||Hv|| > ||v||/ρ`
    pub norm_violations: usize,
    /// `vᵀHv < (1/ρ − ||M||²/ρ²)||v||²`
    pub lower_violations: usize,
    /// `vᵀHv ∉ [0, ||v||²/ρ]`
    pub sandwich_violations: usize,
    /// Largest `||Hv|| ρ / ||v||` seen.
    pub max_norm_ratio: f64,
    pub trials: usize,
}

/// `trials` random `(M, v, ρ)`; comparisons allow a relative slack of
/// `slack` on the scale `||v||²/ρ`.
pub fn measure_operator_bounds(trials: usize, slack: f64, seed: u64) -> Result<OperatorBoundCounts> {
    let mut rng = seeded_rng(seed);
    let mut out = OperatorBoundCounts {
        norm_violations: 0,
        lower_violations: 0,
        sandwich_violations: 0,
        max_norm_ratio: 0.0,
        trials,
    };
    for _ in 0..trials {
        let d = rng.random_range(1..=64);
        let rho = log_uniform(&mut rng, 1e-3, 1e3);
        let (m_scale, v_scale) = (log_uniform(&mut rng, 1e-3, 1e2), log_uniform(&mut rng, 1e-3, 1e3));
        let m = gaussian_vec(&mut rng, d, m_scale);
        let mut v = gaussian_vec(&mut rng, d, v_scale);
        if rng.random::<f64>() < 0.1 {
            // aligned with M, where the lower bound is tightest
            let k = log_uniform(&mut rng, 1e-3, 1e3);
            v = m.iter().map(|x| k * x).collect();
        }
        let hv = precondition_apply(&m, &v, rho)?;
        let vv = norm_sq(&v);
        let tol = slack * vv / rho;
        let ratio = norm(&hv) * rho / norm(&v);
        out.max_norm_ratio = out.max_norm_ratio.max(ratio);
        if norm(&hv) > norm(&v) / rho * (1.0 + slack) {
            out.norm_violations += 1;
        }
        let q = dot(&v, &hv);
        let mm = norm_sq(&m);
        if q < (1.0 / rho - mm / (rho * rho)) * vv - tol {
            out.lower_violations += 1;
        }
        if q < -tol || q > vv / rho + tol {
            out.sandwich_violations += 1;
        }
    }
    Ok(out)
}

fn sherman_morrison_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let sm = measure_sherman_morrison(400, &[1, 2, 8, 64, 256], seed)?;
    report.checks.push(Check::at_most("apply_vs_dense_rel", sm.apply, 1e-10));
    report
        .checks
        .push(Check::at_most("inverse_residual_fro", sm.inverse_residual, 1e-10));

    let ob = measure_operator_bounds(10_000, 1e-12, seed.wrapping_add(1))?;
    report
        .checks
        .push(Check::at_most("norm_bound_violations", ob.norm_violations as f64, 0.0));
    report
        .checks
        .push(Check::at_most("lower_form_violations", ob.lower_violations as f64, 0.0));
    report
        .checks
        .push(Check::at_most("psd_sandwich_violations", ob.sandwich_violations as f64, 0.0));
    report
        .notes
        .push(format!("max ||Hv||ρ/||v|| = {:.15}", ob.max_norm_ratio));

    // anisotropy: v ∥ M scales by 1/(ρ+||M||²), v ⊥ M by 1/ρ
    let mut rng = seeded_rng(seed.wrapping_add(2));
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let d = rng.random_range(2..=32);
        let rho = log_uniform(&mut rng, 0.1, 10.0);
        let m = gaussian_vec(&mut rng, d, 1.0);
        let mm = norm_sq(&m);
        let par = precondition_apply(&m, &m, rho)?;
        let expected: Vec<f64> = m.iter().map(|x| x / (rho + mm)).collect();
        worst = worst.max(norm(&sub(&par, &expected)) / norm(&expected));
        let mut w = gaussian_vec(&mut rng, d, 1.0);
        let proj = dot(&w, &m) / mm;
        w.iter_mut().zip(&m).for_each(|(wi, mi)| *wi -= proj * mi);
        let perp = precondition_apply(&m, &w, rho)?;
        let expected: Vec<f64> = w.iter().map(|x| x / rho).collect();
        worst = worst.max(norm(&sub(&perp, &expected)) / norm(&expected).max(1e-300));
    }
    report.checks.push(Check::at_most("anisotropy_rel", worst, 1e-10));
    Ok(())
}

// ---------------------------------------------------------------------------
// clipping

/// Largest `||G_t|| / C_g` over `rounds` random noiseless rounds through the
/// client release and aggregation path, and how many exceeded `C_g`.
pub fn measure_clip_norm(rounds: usize, seed: u64) -> Result<(f64, usize)> {
    let mut rng = seeded_rng(seed);
    let d = 8;
    let task = LinearTask { dim: d };
    let theta = vec![0.0; d];
    let mut worst: f64 = 0.0;
    let mut violations = 0;
    for round in 0..rounds {
        let n = rng.random_range(1..=4);
        let c_g = log_uniform(&mut rng, 1e-3, 1e3);
        let params = ReleaseParams {
            clip_cg: c_g,
            sigma_g: 0.0,
            n,
        };
        let mut releases = Vec::with_capacity(n);
        for i in 0..n {
            let size = rng.random_range(1..=6);
            let samples: Vec<Vec<f64>> = (0..size)
                .map(|_| {
                    let s = c_g * log_uniform(&mut rng, 1e-2, 1e2);
                    let mut g = gaussian_vec(&mut rng, d, 1.0);
                    // often all in one direction so the triangle inequality is tight
                    if i % 2 == 0 {
                        g = vec![1.0; d];
                    }
                    let k = s / norm(&g);
                    g.iter().map(|x| k * x).collect()
                })
                .collect();
            let data = ClientDataset::new(samples)?;
            let mut stream = derive_noise_stream(seed, i, round);
            releases.push(private_release(&task, &data, &theta, &params, &mut stream, i, round)?);
        }
        let g = aggregate(&releases, n)?;
        let ratio = norm(&g) / c_g;
        worst = worst.max(ratio);
        if norm(&g) > c_g {
            violations += 1;
        }
    }
    Ok((worst, violations))
}

fn clip_norm_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let (worst, violations) = measure_clip_norm(100_000, seed)?;
    report
        .checks
        .push(Check::at_most("aggregate_norm_violations", violations as f64, 0.0));
    report.checks.push(Check::at_most("max_norm_over_clip", worst, 1.0));
    Ok(())
}

// ---------------------------------------------------------------------------
// noise

/// Per-coordinate mean and variance of the aggregated privacy noise
/// `ξ = G − G_noiseless` over `draws` rounds, for clients of the given sizes.
pub fn measure_aggregate_noise(
    sizes: &[usize],
    c_g: f64,
    sigma_g: f64,
    d: usize,
    draws: usize,
    seed: u64,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let n = sizes.len();
    let task = LinearTask { dim: d };
    let theta = vec![0.0; d];
    let mut rng = seeded_rng(seed);
    let datasets = sizes
        .iter()
        .map(|&m| ClientDataset::new((0..m).map(|_| gaussian_vec(&mut rng, d, c_g)).collect()))
        .collect::<Result<Vec<_>>>()?;
    let params = ReleaseParams {
        clip_cg: c_g,
        sigma_g,
        n,
    };
    let quiet = ReleaseParams { sigma_g: 0.0, ..params };
    let clean = {
        let releases = datasets
            .iter()
            .enumerate()
            .map(|(i, data)| {
                private_release(&task, data, &theta, &quiet, &mut derive_noise_stream(seed, i, 0), i, 0)
            })
            .collect::<Result<Vec<_>>>()?;
        aggregate(&releases, n)?
    };
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for round in 0..draws {
        let releases = datasets
            .iter()
            .enumerate()
            .map(|(i, data)| {
                let mut stream = derive_noise_stream(seed, i, round);
                private_release(&task, data, &theta, &params, &mut stream, i, round)
            })
            .collect::<Result<Vec<_>>>()?;
        let g = aggregate(&releases, n)?;
        for k in 0..d {
            let xi = g[k] - clean[k];
            sum[k] += xi;
            sum_sq[k] += xi * xi;
        }
    }
    let k = draws as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / k).collect();
    let var = sum_sq
        .iter()
        .zip(&mean)
        .map(|(s, m)| (s - k * m * m) / (k - 1.0))
        .collect();
    Ok((mean, var))
}

fn noise_floor_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let (c_g, sigma_g, d, draws) = (2.0, 1.5, 4, 100_000);
    for (label, sizes) in [("equal", vec![10usize; 4]), ("mixed", vec![5, 10, 20, 40])] {
        let (mean, var) = measure_aggregate_noise(&sizes, c_g, sigma_g, d, draws, seed)?;
        let nu_sq = noise_floor(c_g, sigma_g, sizes.len(), &sizes)?.nu_sq;
        let worst = var
            .iter()
            .map(|v| (v / nu_sq - 1.0).abs())
            .fold(0.0, f64::max);
        report
            .checks
            .push(Check::at_most(format!("variance_rel_err_{label}"), worst, 0.03));
        let stderr = (nu_sq / draws as f64).sqrt();
        let worst_mean = mean.iter().map(|m| m.abs() / stderr).fold(0.0, f64::max);
        report
            .checks
            .push(Check::at_most(format!("mean_in_stderrs_{label}"), worst_mean, 5.0));
        let bound = noise_floor(c_g, sigma_g, sizes.len(), &sizes)?.uniform_bound;
        report
            .checks
            .push(Check::at_most(format!("nu_sq_below_uniform_{label}"), nu_sq, bound));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// momentum

/// Per-coordinate variance across `paths` of `M_t` after `steps` updates,
/// with `G_t = g0 + noise_std·z_t` and `z_t` standard normal.
pub fn measure_momentum_variance(
    beta: f64,
    noise_std: f64,
    d: usize,
    paths: usize,
    steps: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let g0 = gaussian_vec(&mut rng, d, 1.0);
    let mut sum = vec![0.0; d];
    let mut sum_sq = vec![0.0; d];
    for p in 0..paths {
        let mut stream = derive_noise_stream(seed, p, 0);
        let mut m = vec![0.0; d];
        let mut g = vec![0.0; d];
        for _ in 0..steps {
            g.copy_from_slice(&g0);
            stream.add_gaussian(noise_std, &mut g);
            m = update_momentum(&m, &g, beta)?;
        }
        for k in 0..d {
            let x = m[k] - g0[k];
            sum[k] += x;
            sum_sq[k] += x * x;
        }
    }
    let k = paths as f64;
    Ok(sum
        .iter()
        .zip(&sum_sq)
        .map(|(s, sq)| (sq - s * s / k) / (k - 1.0))
        .collect())
}

fn variance_reduction_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let beta = 0.9;
    let var = measure_momentum_variance(beta, 1.0, 64, 2000, 500, seed)?;
    let factor = (1.0 - beta) / (1.0 + beta);
    let pooled = var.iter().sum::<f64>() / var.len() as f64;
    report
        .checks
        .push(Check::at_most("pooled_variance_rel_err", (pooled / factor - 1.0).abs(), 0.03));
    let worst = var.iter().map(|v| (v / factor - 1.0).abs()).fold(0.0, f64::max);
    report.notes.push(format!(
        "pooled variance {pooled:.6} vs factor {factor:.6}; worst single coordinate off by {:.2}%",
        100.0 * worst
    ));
    Ok(())
}

fn momentum_moment_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let (task, shards) = make_synthetic_quadratic(&QuadraticSpec {
        dim: 10,
        clients: 5,
        mu: 0.1,
        l: 1.0,
        samples_per_client: 4,
        sample_spread: 1.0,
        seed,
        ..QuadraticSpec::default()
    })?;
    let (c_g, sigma_g, beta, runs, rounds) = (1.0, 2.0, 0.9, 500, 60);
    let n = shards.len();
    let d = task.dim();
    let theta = vec![0.0; d];
    let params = ReleaseParams {
        clip_cg: c_g,
        sigma_g,
        n,
    };
    let sums = shards
        .iter()
        .map(|s| clipped_sum(&task, s, &theta, c_g))
        .collect::<Result<Vec<_>>>()?;
    let sizes: Vec<usize> = shards.iter().map(ClientDataset::size).collect();
    let nu_sq = noise_floor(c_g, sigma_g, n, &sizes)?.nu_sq;

    let mut mean = vec![0.0; rounds];
    let mut mean_sq = vec![0.0; rounds];
    for r in 0..runs {
        let mut m = vec![0.0; d];
        for t in 0..rounds {
            let mut g = vec![0.0; d];
            for (i, sum) in sums.iter().enumerate() {
                let mut stream = derive_noise_stream(seed, i, r * rounds + t);
                let rel = release_from_sum(sum.clone(), sizes[i], &params, &mut stream)?;
                g.iter_mut().zip(&rel).for_each(|(a, b)| *a += b / n as f64);
            }
            m = update_momentum(&m, &g, beta)?;
            let sq = norm_sq(&m);
            mean[t] += sq;
            mean_sq[t] += sq * sq;
        }
    }
    let bound = c_g * c_g + (1.0 - beta) * d as f64 * nu_sq;
    let mut worst_margin = f64::INFINITY;
    let mut worst = (0.0, 0.0);
    for t in 0..rounds {
        let k = runs as f64;
        let mu = mean[t] / k;
        let var = (mean_sq[t] / k - mu * mu).max(0.0);
        let allowed = bound + 5.0 * (var / k).sqrt();
        if allowed - mu < worst_margin {
            worst_margin = allowed - mu;
            worst = (mu, allowed);
        }
    }
    report
        .checks
        .push(Check::at_most("second_moment_worst_round", worst.0, worst.1));
    report.notes.push(format!("M̄² = {bound:.6}, ν² = {nu_sq:.3e}"));
    Ok(())
}

// ---------------------------------------------------------------------------
// trajectories on the quadratic

/// The ill-conditioned quadratic used by the trajectory suites:
/// `d = 20`, `n = 20`, `L/μ = 100`.
pub fn reference_quadratic(seed: u64) -> Result<Federation<QuadraticTask>> {
    let (task, shards) = make_synthetic_quadratic(&QuadraticSpec {
        dim: 20,
        clients: 20,
        mu: 0.01,
        l: 1.0,
        heterogeneity: 0.5,
        samples_per_client: 10,
        sample_spread: 0.5,
        center_scale: 1.0,
        seed,
    })?;
    Federation::new(task, shards, Vec::new())
}

/// Gap `F(θ_t) − F*` at `t = 0..=T` and the per-round maxima of
/// `||∇F(θ_t)||`, `||g_clip(θ_t) − ∇F(θ_t)||` and the largest per-example
/// gradient norm along one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub gaps: Vec<f64>,
    pub losses: Vec<f64>,
    pub max_grad_norm: f64,
    pub max_clip_bias: f64,
    pub max_example_norm: f64,
}

pub fn trace_quadratic(fed: &Federation<QuadraticTask>, config: &FederatedConfig) -> Result<Trajectory> {
    let config = config.clone().validate()?;
    let optimum = fed.objective.optimum_value()
        .ok_or_else(|| Error::Task("quadratic without optimum".into()))?;
    let mut state = ServerState::new(vec![0.0; fed.dim()]);
    let mut out = Trajectory {
        gaps: Vec::with_capacity(config.rounds + 1),
        losses: Vec::with_capacity(config.rounds + 1),
        max_grad_norm: 0.0,
        max_clip_bias: 0.0,
        max_example_norm: 0.0,
    };
    let mut buf = vec![0.0; fed.dim()];
    for t in 0..=config.rounds {
        let loss = fed.train_loss(&state.theta)?;
        out.losses.push(loss);
        out.gaps.push(loss - optimum);
        let grad = fed.full_gradient(&state.theta)?;
        let clipped = fed.clipped_gradient(&state.theta, config.clip_cg)?;
        out.max_grad_norm = out.max_grad_norm.max(norm(&grad));
        out.max_clip_bias = out.max_clip_bias.max(norm(&sub(&clipped, &grad)));
        for c in &fed.clients {
            for s in c.samples() {
                fed.objective.gradient_into(&state.theta, s, &mut buf);
                out.max_example_norm = out.max_example_norm.max(norm(&buf));
            }
        }
        if t < config.rounds {
            state = run_round(fed, &state, &config, t, false)?.state;
        }
    }
    Ok(out)
}

/// Convergence-floor experiment: `seeds` private runs of `rounds` rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct FloorExperiment {
    pub mean_terminal_gap: f64,
    pub floor: f64,
    pub gamma: f64,
    pub rate: f64,
    pub g_max: f64,
    pub zeta_max: f64,
    pub nu_sq: f64,
    pub inputs: FloorInputs,
}

/// Base config of the floor and rate experiments.
pub fn floor_config(sigma_g: f64, clip_cg: f64, rounds: usize) -> FederatedConfig {
    FederatedConfig {
        n: 20,
        rounds,
        eta: 0.25,
        clip_cg,
        sigma_g,
        beta: 0.9,
        rho: 0.5,
        master_seed: 0,
        optimizer: OptimizerKind::Sofim,
        schedule: crate::config::StepSchedule::Constant,
    }
}

/// Runs `seeds` private trajectories; `G_max` and `ζ_max` are the largest
/// values observed over all of them.
pub fn measure_convergence_floor(
    fed: &Federation<QuadraticTask>,
    base: &FederatedConfig,
    seeds: usize,
) -> Result<FloorExperiment> {
    use rayon::prelude::*;
    let runs = (0..seeds as u64)
        .into_par_iter()
        .map(|s| {
            let cfg = FederatedConfig {
                master_seed: base.master_seed.wrapping_add(s),
                ..base.clone()
            };
            trace_quadratic(fed, &cfg)
        })
        .collect::<Result<Vec<_>>>()?;
    let g_max = runs.iter().map(|r| r.max_grad_norm).fold(0.0, f64::max);
    let zeta_max = runs.iter().map(|r| r.max_clip_bias).fold(0.0, f64::max);
    let mean_terminal_gap =
        runs.iter().map(|r| *r.gaps.last().expect("rounds >= 1")).sum::<f64>() / seeds as f64;
    let nu_sq = noise_floor(base.clip_cg, base.sigma_g, fed.n(), &fed.sizes())?.nu_sq;
    let inputs = FloorInputs {
        mu: fed.objective.mu(),
        l: fed.objective.smoothness(),
        eta: base.eta,
        rho: base.rho,
        beta: base.beta,
        c_g: base.clip_cg,
        nu_sq,
        d: fed.dim(),
        zeta_max,
        g_max,
        tau1: 0.0,
        tau2: 0.0,
    }
    .default_taus();
    let bound = theoretical_floor(&inputs)?;
    Ok(FloorExperiment {
        mean_terminal_gap,
        floor: bound.floor,
        gamma: bound.gamma,
        rate: bound.rate,
        g_max,
        zeta_max,
        nu_sq,
        inputs,
    })
}

/// Noiseless linear-rate experiment: the worst value over rounds of
/// `gap_{t+1} − (r·gap_t + Γ)` with `Γ` at `ν = 0`, and the clipping radius
/// used (the pilot's largest per-example gradient norm, plus 1%).
#[derive(Debug, Clone, PartialEq)]
pub struct RateExperiment {
    pub worst_excess: f64,
    pub gamma: f64,
    pub rate: f64,
    pub clip_cg: f64,
    pub g_max: f64,
    pub zeta_max: f64,
    pub gaps: Vec<f64>,
}

pub fn measure_linear_rate(fed: &Federation<QuadraticTask>, rounds: usize) -> Result<RateExperiment> {
    let pilot = trace_quadratic(fed, &floor_config(0.0, 1e12, rounds))?;
    let clip_cg = pilot.max_example_norm * 1.01;
    let run = trace_quadratic(fed, &floor_config(0.0, clip_cg, rounds))?;
    let cfg = floor_config(0.0, clip_cg, rounds);
    let inputs = FloorInputs {
        mu: fed.objective.mu(),
        l: fed.objective.smoothness(),
        eta: cfg.eta,
        rho: cfg.rho,
        beta: cfg.beta,
        c_g: clip_cg,
        nu_sq: 0.0,
        d: fed.dim(),
        zeta_max: run.max_clip_bias,
        g_max: run.max_grad_norm,
        tau1: 0.0,
        tau2: 0.0,
    }
    .default_taus();
    let bound = theoretical_floor(&inputs)?;
    let worst_excess = run
        .gaps
        .windows(2)
        .map(|w| w[1] - (bound.rate * w[0] + bound.gamma))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(RateExperiment {
        worst_excess,
        gamma: bound.gamma,
        rate: bound.rate,
        clip_cg,
        g_max: run.max_grad_norm,
        zeta_max: run.max_clip_bias,
        gaps: run.gaps,
    })
}

/// Largest relative deviation `||θ_sofim − θ_fedgd|| / ||θ_fedgd||` over
/// `rounds` rounds with `β = 0`, `ρ = 10⁶`, `σ_g = 0` and the preconditioned
/// rate `ρ` times the plain one.
pub fn measure_first_order_limit(fed: &Federation<QuadraticTask>, rounds: usize, clip_cg: f64) -> Result<f64> {
    let rho = 1e6;
    let eta = 0.5;
    let plain = FederatedConfig {
        n: fed.n(),
        rounds,
        eta,
        clip_cg,
        sigma_g: 0.0,
        beta: 0.0,
        rho,
        optimizer: OptimizerKind::FedGd,
        ..FederatedConfig::default()
    }
    .validate()?;
    let pre = FederatedConfig {
        eta: rho * eta,
        optimizer: OptimizerKind::Sofim,
        ..plain.clone()
    };
    let mut a = ServerState::new(vec![0.0; fed.dim()]);
    let mut b = a.clone();
    let mut worst: f64 = 0.0;
    for t in 0..rounds {
        a = run_round(fed, &a, &plain, t, false)?.state;
        b = run_round(fed, &b, &pre, t, false)?.state;
        let scale = norm(&a.theta).max(f64::MIN_POSITIVE);
        worst = worst.max(norm(&sub(&a.theta, &b.theta)) / scale);
    }
    Ok(worst)
}

fn descent_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let fed = reference_quadratic(seed)?;
    let pilot = trace_quadratic(&fed, &floor_config(0.0, 1e12, 300))?;
    // no clipping, and η = 0.25 < 2ρ/L
    let cfg = floor_config(0.0, pilot.max_example_norm * 1.01, 300);
    let run = trace_quadratic(&fed, &cfg)?;
    let increases = run.losses.windows(2).filter(|w| w[1] >= w[0]).count();
    let smallest_drop = run
        .losses
        .windows(2)
        .map(|w| w[0] - w[1])
        .fold(f64::INFINITY, f64::min);
    report
        .checks
        .push(Check::at_most("non_decreasing_rounds", increases as f64, 0.0));
    report.notes.push(format!("smallest per-round decrease {smallest_drop:.3e}"));

    let limit = measure_first_order_limit(&fed, 50, 0.1)?;
    report
        .checks
        .push(Check::at_most("first_order_limit_rel", limit, 1e-6));
    Ok(())
}

fn convergence_floor_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let fed = reference_quadratic(seed)?;
    let base = FederatedConfig {
        master_seed: seed,
        ..floor_config(1.0, 5.0, 500)
    };
    let fl = measure_convergence_floor(&fed, &base, 20)?;
    report
        .checks
        .push(Check::at_most("mean_terminal_gap", fl.mean_terminal_gap, fl.floor));
    report.notes.push(format!(
        "estimated G_max = {:.6}, ζ_max = {:.6}; ν² = {:.3e}, Γ = {:.6e}, r = {:.6}",
        fl.g_max, fl.zeta_max, fl.nu_sq, fl.gamma, fl.rate
    ));

    let rate = measure_linear_rate(&fed, 500)?;
    report
        .checks
        .push(Check::at_most("noiseless_rate_excess", rate.worst_excess, 0.0));
    report.notes.push(format!(
        "noiseless run: C_g = {:.6}, G_max = {:.6}, ζ_max = {:.3e}, Γ(ν=0) = {:.6e}",
        rate.clip_cg, rate.g_max, rate.zeta_max, rate.gamma
    ));
    Ok(())
}

// ---------------------------------------------------------------------------
// complexity

/// Median-of-batches seconds per in-place preconditioned step at each `d`.
pub fn measure_step_times(dims: &[usize], seed: u64) -> Result<Vec<f64>> {
    let mut rng = seeded_rng(seed);
    let mut out = Vec::with_capacity(dims.len());
    for &d in dims {
        let mut state = ServerState::new(gaussian_vec(&mut rng, d, 1.0));
        state.momentum = gaussian_vec(&mut rng, d, 1.0);
        let g = gaussian_vec(&mut rng, d, 1e-3);
        // about 4M coordinate updates per batch
        let reps = (1usize << 22) / d;
        for _ in 0..reps {
            state.sofim_update(black_box(&g), 1e-3, 0.9, 0.5)?;
        }
        let mut batches = Vec::with_capacity(9);
        for _ in 0..9 {
            let start = Instant::now();
            for _ in 0..reps {
                state.sofim_update(black_box(&g), 1e-3, 0.9, 0.5)?;
            }
            batches.push(start.elapsed().as_secs_f64() / reps as f64);
        }
        black_box(&state);
        batches.sort_by(f64::total_cmp);
        out.push(batches[batches.len() / 2]);
    }
    Ok(out)
}

fn complexity_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let dims: Vec<usize> = (10..=16).map(|k| 1usize << k).collect();
    let times = measure_step_times(&dims, seed)?;
    let worst = times.windows(2).map(|w| w[1] / w[0]).fold(0.0, f64::max);
    report.checks.push(Check::at_most("max_doubling_ratio", worst, 3.0));
    for (d, t) in dims.iter().zip(&times) {
        report.notes.push(format!("d = {d}: {:.3} µs per step", t * 1e6));
    }

    let before = dense_calls();
    let plan = ExperimentPlan {
        config: FederatedConfig {
            n: 4,
            rounds: 5,
            sigma_g: 0.0,
            ..FederatedConfig::default()
        },
        task: TaskBinding::Quadratic(QuadraticSpec {
            dim: 8,
            ..QuadraticSpec::default()
        }),
        ..ExperimentPlan::default()
    };
    run_experiment(&plan)?;
    report
        .checks
        .push(Check::at_most("dense_calls_during_run", (dense_calls() - before) as f64, 0.0));
    Ok(())
}

// ---------------------------------------------------------------------------
// accountant

/// Largest `|single_round_delta − quadrature|` over `trials` random
/// `(ε, Δ, σ)`.
pub fn measure_quadrature_gap(trials: usize, seed: u64) -> Result<f64> {
    let mut rng = seeded_rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let eps = rng.random_range(0.0..5.0);
        let delta_sens = rng.random_range(0.1..2.0);
        let sigma = rng.random_range(0.3..4.0);
        let a = single_round_delta(eps, delta_sens, sigma)?;
        let b = hockey_stick_quadrature(eps, delta_sens, sigma);
        worst = worst.max((a - b).abs());
    }
    Ok(worst)
}

/// Smallest `σ_g` meeting `δ` found by a two-level sweep: 10⁴ log-spaced
/// points over the calibration bracket, then 10⁴ linear points inside the
/// first cell that meets the target.
pub fn grid_sweep_sigma(epsilon: f64, delta: f64, n: usize, rounds: usize) -> Result<f64> {
    let (lo, hi) = SIGMA_BRACKET;
    let points = 10_000;
    let at = |k: usize| (lo.ln() + (hi.ln() - lo.ln()) * k as f64 / (points - 1) as f64).exp();
    let mut prev = lo;
    for k in 0..points {
        let s = at(k);
        if composed_delta(epsilon, s, n, rounds)? <= delta {
            if k == 0 {
                return Ok(s);
            }
            for j in 1..=points {
                let t = prev + (s - prev) * j as f64 / points as f64;
                if composed_delta(epsilon, t, n, rounds)? <= delta {
                    return Ok(t);
                }
            }
            return Ok(s);
        }
        prev = s;
    }
    Err(Error::Accountant("target not met anywhere on the sweep".into()))
}

fn accountant_suite(seed: u64, report: &mut SuiteReport) -> Result<()> {
    let gap = measure_quadrature_gap(20, seed)?;
    report.checks.push(Check::at_most("quadrature_abs_err", gap, 1e-8));

    let tv = gaussian_delta(0.0, 2.0);
    report
        .checks
        .push(Check::at_most("delta_eps0_mu2_err", (tv - 0.682_689_5).abs(), 1e-6));
    let witness = single_round_delta(0.0, sensitivity(1.0, 1), 1.0)?;
    report
        .checks
        .push(Check::at_most("unit_noise_sensitivity2_err", (witness - tv).abs(), 1e-15));

    let (n, t) = (20, 70);
    let sigmas: Vec<f64> = (0..50).map(|k| 10.0 * 30f64.powf(k as f64 / 49.0)).collect();
    let epsilons: Vec<f64> = (0..50).map(|k| 0.1 * 80f64.powf(k as f64 / 49.0)).collect();
    let mut inversions = 0;
    let mut out_of_range = 0;
    for &e in &epsilons {
        let row = sigmas
            .iter()
            .map(|&s| composed_delta(e, s, n, t))
            .collect::<Result<Vec<_>>>()?;
        inversions += row.windows(2).filter(|w| w[1] >= w[0]).count();
        out_of_range += row.iter().filter(|d| !(0.0..=1.0).contains(*d)).count();
    }
    for &s in &sigmas {
        let col = epsilons
            .iter()
            .map(|&e| composed_delta(e, s, n, t))
            .collect::<Result<Vec<_>>>()?;
        inversions += col.windows(2).filter(|w| w[1] >= w[0]).count();
    }
    report
        .checks
        .push(Check::at_most("monotonicity_inversions", inversions as f64, 0.0));
    report
        .checks
        .push(Check::at_most("out_of_range_values", out_of_range as f64, 0.0));
    let extreme = composed_delta(50.0, 0.1, n, t)?;
    report.checks.push(Check::at_most(
        "non_finite_at_eps50_sigma0.1",
        if extreme.is_finite() { 0.0 } else { 1.0 },
        0.0,
    ));

    let mut worst_rel: f64 = 0.0;
    let mut worst_excess = f64::NEG_INFINITY;
    for (n, t) in [(20, 70), (100, 70)] {
        for eps in [0.5, 1.0, 2.0, 5.0, 10.0] {
            let sigma = calibrate_sigma(eps, 1e-5, n, t)?;
            worst_excess = worst_excess.max(composed_delta(eps, sigma, n, t)? - 1e-5);
            let sweep = grid_sweep_sigma(eps, 1e-5, n, t)?;
            worst_rel = worst_rel.max((sigma / sweep - 1.0).abs());
        }
    }
    report
        .checks
        .push(Check::at_most("calibrated_delta_excess", worst_excess, 0.0));
    report
        .checks
        .push(Check::at_most("calibration_vs_sweep_rel", worst_rel, 1e-3));
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_names_parse_both_ways() {
        for s in Suite::ALL {
            assert_eq!(s.name().parse::<Suite>().unwrap(), s);
            let kebab = s.name().to_ascii_lowercase().replace('_', "-");
            assert_eq!(kebab.parse::<Suite>().unwrap(), s);
        }
        assert!("nope".parse::<Suite>().is_err());
    }

    #[test]
    fn at_most_and_at_least() {
        assert!(Check::at_most("x", 1.0, 1.0).passed);
        assert!(!Check::at_most("x", 1.1, 1.0).passed);
        assert!(Check::at_least("x", 1.0, 0.5).passed);
        assert!(!Check::at_most("x", f64::NAN, 1.0).passed);
    }

    #[test]
    fn small_sherman_morrison_run() {
        let e = measure_sherman_morrison(20, &[1, 3, 5], 4).unwrap();
        assert!(e.apply < 1e-12 && e.inverse_residual < 1e-12, "{e:?}");
    }

    #[test]
    fn momentum_variance_matches_closed_form_at_short_horizon() {
        // after t updates from M = 0: (1−β)² Σ_{k<t} β^{2k}
        let (beta, t) = (0.5, 3);
        let var = measure_momentum_variance(beta, 1.0, 16, 4000, t, 9).unwrap();
        let exact: f64 = (0..t).map(|k| (1.0 - beta) * (1.0 - beta) * beta.powi(2 * k as i32)).sum();
        let pooled = var.iter().sum::<f64>() / 16.0;
        assert!((pooled / exact - 1.0).abs() < 0.03, "{pooled} vs {exact}");
    }

    #[test]
    fn sweep_finds_the_threshold() {
        let s = grid_sweep_sigma(2.0, 1e-5, 20, 70).unwrap();
        assert!(composed_delta(2.0, s, 20, 70).unwrap() <= 1e-5);
        assert!(composed_delta(2.0, s * (1.0 - 1e-3), 20, 70).unwrap() > 1e-5);
    }
}
