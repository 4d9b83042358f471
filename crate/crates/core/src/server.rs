//! Server-side aggregation and update rules.
//!
//! The preconditioned step uses the inverse of the Fisher proxy
//! `ρI + M Mᵀ`, applied through Sherman–Morrison:
//!
//! ```text
//! H G = G/ρ − M (MᵀG) / (ρ(ρ + ||M||²))
//! ```
//!
//! which costs two inner products and never materializes a `d×d` matrix.

use crate::client::ClientRelease;
use crate::config::FederatedConfig;
use crate::error::{check_dim, Error, Result};
use crate::linalg::dot;

/// Optimizer state carried between rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct ServerState {
    pub theta: Vec<f64>,
    pub momentum: Vec<f64>,
    /// Index of the last completed round; `-1` before the first update.
    pub round: i64,
}

impl ServerState {
    /// Fresh state at `theta0` with `M_{-1} = 0`.
    pub fn new(theta0: Vec<f64>) -> Self {
        let d = theta0.len();
        ServerState {
            theta: theta0,
            momentum: vec![0.0; d],
            round: -1,
        }
    }

    pub fn dim(&self) -> usize {
        self.theta.len()
    }

    /// Index of the round the next step belongs to.
    pub fn next_round(&self) -> usize {
        (self.round + 1) as usize
    }

    /// In-place preconditioned step: momentum first, then the parameter
    /// update with the preconditioner built from the new momentum. Performs
    /// no allocation.
    pub fn sofim_update(&mut self, g: &[f64], eta: f64, beta: f64, rho: f64) -> Result<()> {
        check_dim(self.dim(), g.len())?;
        check_dim(self.dim(), self.momentum.len())?;
        for (m, gi) in self.momentum.iter_mut().zip(g) {
            *m = momentum_coord(*m, *gi, beta);
        }
        let (inv_rho, coef) = sm_coefficients(&self.momentum, g, rho);
        for ((t, gi), m) in self.theta.iter_mut().zip(g).zip(&self.momentum) {
            *t -= eta * (gi * inv_rho - coef * m);
        }
        self.round += 1;
        Ok(())
    }

    /// In-place plain descent step; the momentum buffer is left alone.
    pub fn fedgd_update(&mut self, g: &[f64], eta: f64) -> Result<()> {
        check_dim(self.dim(), g.len())?;
        for (t, gi) in self.theta.iter_mut().zip(g) {
            *t -= eta * gi;
        }
        self.round += 1;
        Ok(())
    }
}

#[inline(always)]
fn momentum_coord(m: f64, g: f64, beta: f64) -> f64 {
    beta * m + (1.0 - beta) * g
}

/// `(1/ρ, MᵀG / (ρ(ρ + ||M||²)))`. `||M||²` is recomputed from `M` each
/// call.
#[inline]
fn sm_coefficients(m: &[f64], g: &[f64], rho: f64) -> (f64, f64) {
    let mg = dot(m, g);
    let mm = dot(m, m);
    (1.0 / rho, mg / (rho * (rho + mm)))
}

/// `G_t = (1/n) Σ g_{i,t}`, summed in client order.
pub fn aggregate(releases: &[ClientRelease], n: usize) -> Result<Vec<f64>> {
    if releases.len() != n || n == 0 {
        return Err(Error::Aggregation(format!(
            "expected {n} releases, got {}",
            releases.len()
        )));
    }
    let d = releases[0].vector.len();
    let round = releases[0].round;
    let mut sum = vec![0.0; d];
    for r in releases {
        check_dim(d, r.vector.len())?;
        if r.round != round {
            return Err(Error::Aggregation(format!(
                "mixed rounds {round} and {} in one aggregate",
                r.round
            )));
        }
        for (s, v) in sum.iter_mut().zip(&r.vector) {
            *s += v;
        }
    }
    let inv = 1.0 / n as f64;
    sum.iter_mut().for_each(|s| *s *= inv);
    Ok(sum)
}

/// `M_t = β M_{t−1} + (1−β) G_t`.
pub fn update_momentum(m_prev: &[f64], g: &[f64], beta: f64) -> Result<Vec<f64>> {
    check_dim(m_prev.len(), g.len())?;
    Ok(m_prev
        .iter()
        .zip(g)
        .map(|(m, gi)| momentum_coord(*m, *gi, beta))
        .collect())
}

/// `H G` for `H = (ρI + M Mᵀ)⁻¹` via Sherman–Morrison, in `O(d)`.
pub fn precondition_apply(m: &[f64], g: &[f64], rho: f64) -> Result<Vec<f64>> {
    check_dim(m.len(), g.len())?;
    let (inv_rho, coef) = sm_coefficients(m, g, rho);
    Ok(g.iter().zip(m).map(|(gi, mi)| gi * inv_rho - coef * mi).collect())
}

/// One preconditioned round: `M_t` from `G_t`, then
/// `θ_{t+1} = θ_t − η_t H_t G_t`.
pub fn sofim_step(state: &ServerState, g: &[f64], config: &FederatedConfig) -> Result<ServerState> {
    let mut next = state.clone();
    let eta = config.eta_at(state.next_round());
    next.sofim_update(g, eta, config.beta, config.rho)?;
    Ok(next)
}

/// One plain round: `θ_{t+1} = θ_t − η G_t`.
pub fn fedgd_step(state: &ServerState, g: &[f64], eta: f64) -> Result<ServerState> {
    let mut next = state.clone();
    next.fedgd_update(g, eta)?;
    Ok(next)
}
