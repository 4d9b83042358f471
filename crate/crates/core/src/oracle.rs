//! Independent reference computations for tests and the `verify` suites.
//!
//! Nothing on the training path (`client`, `server`, `harness`) calls into
//! this module; [`dense_calls`] counts invocations so that can be checked at
//! run time.

use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest dimension the dense oracle accepts.
pub const DENSE_GUARD: usize = 256;

static DENSE_CALLS: AtomicUsize = AtomicUsize::new(0);

/// Number of times [`dense_preconditioner`] has run in this process.
pub fn dense_calls() -> usize {
    DENSE_CALLS.load(Ordering::SeqCst)
}

/// Forms `ρI + M Mᵀ` explicitly and inverts it with an LU factorization.
pub fn dense_preconditioner(m: &[f64], rho: f64) -> Result<DMatrix<f64>> {
    let d = m.len();
    if d > DENSE_GUARD {
        return Err(Error::DenseGuard {
            dim: d,
            guard: DENSE_GUARD,
        });
    }
    DENSE_CALLS.fetch_add(1, Ordering::SeqCst);
    let proxy = fisher_proxy(m, rho);
    proxy
        .lu()
        .try_inverse()
        .ok_or_else(|| Error::Task("Fisher proxy is singular".into()))
}

/// `ρI + M Mᵀ` as a dense matrix.
pub fn fisher_proxy(m: &[f64], rho: f64) -> DMatrix<f64> {
    let d = m.len();
    DMatrix::from_fn(d, d, |r, c| m[r] * m[c] + if r == c { rho } else { 0.0 })
}

/// `E_{e^ε}(P‖Q) = ∫ max(0, p(x) − e^ε q(x)) dx` for `P = N(0, σ²)` and
/// `Q = N(Δ, σ²)`, by adaptive Simpson quadrature of the densities.
///
/// The integrand is positive exactly left of
/// `x* = (Δ²/2 − εσ²)/Δ`, so the integral runs over `[x* − 40σ, x*]`.
pub fn hockey_stick_quadrature(epsilon: f64, delta_sens: f64, sigma: f64) -> f64 {
    let gamma = epsilon.exp();
    let norm = 1.0 / (sigma * (2.0 * std::f64::consts::PI).sqrt());
    let density = |x: f64, mean: f64| norm * (-0.5 * ((x - mean) / sigma).powi(2)).exp();
    let f = |x: f64| (density(x, 0.0) - gamma * density(x, delta_sens)).max(0.0);
    let x_star = (0.5 * delta_sens * delta_sens - epsilon * sigma * sigma) / delta_sens;
    let lo = x_star - 40.0 * sigma;
    // split into panels so the recursion starts with a resolved mesh
    let panels = 400;
    let width = (x_star - lo) / panels as f64;
    (0..panels)
        .map(|k| {
            let a = lo + k as f64 * width;
            let b = a + width;
            adaptive_simpson(&f, a, b, 1e-15, 40)
        })
        .sum()
}

fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (fa, fm, fb) = (f(a), f(m), f(b));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_step(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
        + simpson_step(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}
