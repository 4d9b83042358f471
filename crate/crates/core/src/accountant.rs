//! Privacy accounting for the client Gaussian release, plus the
//! convergence-floor constants used by the verification suites.
//!
//! A Gaussian mechanism with sensitivity `Δ` and noise `σ` has the exact
//! hockey-stick tradeoff
//!
//! ```text
//! δ(ε) = Φ(−ε/μ + μ/2) − e^ε Φ(−ε/μ − μ/2),   μ = Δ/σ.
//! ```
//!
//! `T` rounds of full participation compose to `μ = √T·Δ/σ_release`, which
//! for this release (`Δ = 2C_g/|D_min|`, `σ_release = C_g σ_g/(√n |D_min|)`)
//! is `μ = 2√(nT)/σ_g`, independent of `C_g` and `|D_min|`.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use crate::error::{Error, Result};

/// Below this `a`, `ln Φ(−a)` is taken from `erfc` directly; above it a
/// continued fraction for the Mills ratio is used.
const LOG_TAIL_SWITCH: f64 = 8.0;

/// Standard normal CDF, `½ erfc(−x/√2)`. `erfc` is the musl/FreeBSD
/// implementation (`libm` crate), accurate to about one ulp, so `Φ` carries
/// relative error well below `1e-12` in both tails.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// `ln Φ(−a)` without underflow for large `a`.
///
/// For `a > 8` this evaluates `−a²/2 − ln√(2π) + ln R(a)` where `R` is the
/// Mills ratio, computed from its Laplace continued fraction
/// `R(a) = 1/(a + 1/(a + 2/(a + 3/(a + …))))`.
pub fn log_normal_tail(a: f64) -> f64 {
    if a <= LOG_TAIL_SWITCH {
        return normal_cdf(-a).ln();
    }
    let mut t = a;
    for k in (1..=80).rev() {
        t = a + k as f64 / t;
    }
    let mills = 1.0 / t;
    -0.5 * a * a - 0.5 * (2.0 * PI).ln() + mills.ln()
}

/// Hockey-stick `δ(ε)` of a Gaussian mechanism with `μ = Δ/σ`.
pub fn gaussian_delta(epsilon: f64, mu: f64) -> f64 {
    if mu == 0.0 {
        return 0.0;
    }
    if mu.is_infinite() {
        return 1.0;
    }
    let shift = epsilon / mu;
    let plus = normal_cdf(0.5 * mu - shift);
    let minus = (epsilon + log_normal_tail(shift + 0.5 * mu)).exp();
    (plus - minus).clamp(0.0, 1.0)
}

/// `Δ = 2C_g/|D_min|`, the replace-one ℓ2 sensitivity of a normalized
/// client release.
pub fn sensitivity(c_g: f64, d_min: usize) -> f64 {
    assert!(c_g > 0.0 && d_min >= 1, "sensitivity needs C_g > 0 and |D_min| >= 1");
    2.0 * c_g / d_min as f64
}

/// `δ(ε)` of one Gaussian release with sensitivity `delta_sens` and noise
/// standard deviation `sigma_release`.
pub fn single_round_delta(epsilon: f64, delta_sens: f64, sigma_release: f64) -> Result<f64> {
    if !(sigma_release > 0.0) {
        return Err(Error::Accountant("noise standard deviation must be positive".into()));
    }
    if !(delta_sens > 0.0) || epsilon < 0.0 {
        return Err(Error::Accountant("need ε >= 0 and Δ > 0".into()));
    }
    Ok(gaussian_delta(epsilon, delta_sens / sigma_release))
}

/// Noise standard deviation of one released client vector.
pub fn release_sigma(c_g: f64, sigma_g: f64, n: usize, d_min: usize) -> f64 {
    c_g * sigma_g / ((n as f64).sqrt() * d_min as f64)
}

/// `δ(ε)` after `T` rounds of full participation by `n` clients at noise
/// multiplier `σ_g`.
pub fn composed_delta(epsilon: f64, sigma_g: f64, n: usize, rounds: usize) -> Result<f64> {
    if !(sigma_g > 0.0) {
        return Err(Error::Accountant("sigma_g must be positive".into()));
    }
    if n == 0 || rounds == 0 || epsilon < 0.0 {
        return Err(Error::Accountant("need n >= 1, T >= 1 and ε >= 0".into()));
    }
    let mu = 2.0 * ((n * rounds) as f64).sqrt() / sigma_g;
    Ok(gaussian_delta(epsilon, mu))
}

/// Target `(ε, δ)` budget with the run shape it applies to.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PrivacySpec {
    pub epsilon: f64,
    pub delta: f64,
    pub rounds: usize,
    pub n: usize,
    pub d_min: usize,
}

impl PrivacySpec {
    pub fn validate(self) -> Result<Self> {
        let mut problems = Vec::new();
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            problems.push("epsilon must be positive".to_string());
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            problems.push("delta must lie in (0,1)".to_string());
        }
        if self.rounds < 1 {
            problems.push("rounds must be at least 1".to_string());
        }
        if self.n < 1 {
            problems.push("n must be at least 1".to_string());
        }
        if self.d_min < 1 {
            problems.push("d_min must be at least 1".to_string());
        }
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn calibrate(&self) -> Result<f64> {
        self.validate()?;
        calibrate_sigma(self.epsilon, self.delta, self.n, self.rounds)
    }
}

pub const SIGMA_BRACKET: (f64, f64) = (1e-3, 1e6);

/// Smallest `σ_g` in [`SIGMA_BRACKET`] with `composed_delta(ε, σ_g) <= δ`,
/// found by bisection on `ln σ_g` to a relative width of `1e-12`.
pub fn calibrate_sigma(epsilon: f64, delta: f64, n: usize, rounds: usize) -> Result<f64> {
    PrivacySpec {
        epsilon,
        delta,
        rounds,
        n,
        d_min: 1,
    }
    .validate()?;
    let within = |s: f64| composed_delta(epsilon, s, n, rounds).map(|d| d <= delta);
    let (mut lo, mut hi) = SIGMA_BRACKET;
    if !within(hi)? {
        return Err(Error::Accountant(format!(
            "target (ε={epsilon}, δ={delta}) unreachable with σ_g <= {hi}"
        )));
    }
    if within(lo)? {
        return Ok(lo);
    }
    while hi / lo > 1.0 + 1e-12 {
        let mid = (lo * hi).sqrt();
        if within(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Basic sequential composition: `(Σε_t, Σδ_t)`.
pub fn compose_adaptive(per_round: &[(f64, f64)]) -> Result<(f64, f64)> {
    if per_round.is_empty() {
        return Err(Error::Accountant("no rounds to compose".into()));
    }
    for &(e, d) in per_round {
        if !(e >= 0.0 && e.is_finite()) || !(0.0..=1.0).contains(&d) {
            return Err(Error::Accountant(format!("invalid per-round budget ({e}, {d})")));
        }
    }
    Ok(per_round
        .iter()
        .fold((0.0, 0.0), |(se, sd), &(e, d)| (se + e, sd + d)))
}

/// Per-coordinate variance of the aggregated privacy noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseFloor {
    /// `ν_t² = (C_g σ_g)²/n³ · Σ 1/|D_i|²`
    pub nu_sq: f64,
    /// `(C_g σ_g)²/(n² m_min²) >= ν_t²`
    pub uniform_bound: f64,
}

pub fn noise_floor(c_g: f64, sigma_g: f64, n: usize, sizes: &[usize]) -> Result<NoiseFloor> {
    if sizes.len() != n || n == 0 {
        return Err(Error::Accountant(format!("{} sizes for {n} clients", sizes.len())));
    }
    if sizes.contains(&0) {
        return Err(Error::Accountant("client dataset size 0".into()));
    }
    let cs = (c_g * sigma_g).powi(2);
    let inv_sq: f64 = sizes.iter().map(|&m| 1.0 / (m as f64).powi(2)).sum();
    let n_f = n as f64;
    let m_min = *sizes.iter().min().expect("nonempty") as f64;
    Ok(NoiseFloor {
        nu_sq: cs / n_f.powi(3) * inv_sq,
        uniform_bound: cs / (n_f * n_f * m_min * m_min),
    })
}

/// Inputs of the one-step descent constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorInputs {
    pub mu: f64,
    pub l: f64,
    pub eta: f64,
    pub rho: f64,
    pub beta: f64,
    pub c_g: f64,
    pub nu_sq: f64,
    pub d: usize,
    pub zeta_max: f64,
    pub g_max: f64,
    pub tau1: f64,
    pub tau2: f64,
}

impl FloorInputs {
    /// `τ1 = τ2 = 1/(2ρ)`, giving `c_∇ = 1/(2ρ)`.
    pub fn default_taus(mut self) -> Self {
        self.tau1 = 0.5 / self.rho;
        self.tau2 = 0.5 / self.rho;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloorBound {
    /// Additive constant `Γ` of the one-step descent inequality.
    pub gamma: f64,
    /// Limiting neighborhood `Γ/(2μηc_∇)`.
    pub floor: f64,
    /// Contraction `r = 1 − 2μηc_∇`.
    pub rate: f64,
    pub c_grad: f64,
    /// `M̄² = C_g² + (1−β)dν²`
    pub m_bar_sq: f64,
}

/// `Γ`, the floor `Γ/(2μηc_∇)` and the rate `r`, where
///
/// ```text
/// Γ = ηG²M̄²/ρ² + ηζ²/(2τ1ρ²) + ηdν²/(2τ2ρ²) + Lη²(C_g² + dν²)/(2ρ²)
/// ```
pub fn theoretical_floor(p: &FloorInputs) -> Result<FloorBound> {
    let c_grad = 1.0 / p.rho - 0.5 * (p.tau1 + p.tau2);
    if !(c_grad > 0.0) {
        return Err(Error::Accountant(format!("c_grad = {c_grad} is not positive")));
    }
    let rate = 1.0 - 2.0 * p.mu * p.eta * c_grad;
    if !(rate > 0.0 && rate < 1.0) {
        return Err(Error::Accountant(format!("rate r = {rate} outside (0,1)")));
    }
    let d = p.d as f64;
    let rho_sq = p.rho * p.rho;
    let m_bar_sq = p.c_g * p.c_g + (1.0 - p.beta) * d * p.nu_sq;
    let coupling = p.eta * p.g_max * p.g_max * m_bar_sq / rho_sq;
    let bias = p.eta * p.zeta_max * p.zeta_max / (2.0 * p.tau1 * rho_sq);
    let noise = p.eta * d * p.nu_sq / (2.0 * p.tau2 * rho_sq);
    let smooth = p.l * p.eta * p.eta * (p.c_g * p.c_g + d * p.nu_sq) / (2.0 * rho_sq);
    let gamma = coupling + bias + noise + smooth;
    Ok(FloorBound {
        gamma,
        floor: gamma / (2.0 * p.mu * p.eta * c_grad),
        rate,
        c_grad,
        m_bar_sq,
    })
}
