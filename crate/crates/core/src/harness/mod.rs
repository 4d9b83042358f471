//! Experiment orchestration: the federated round loop, full runs, grid
//! search and metrics emission.

mod grid;
mod plan;

pub use grid::{grid_search, GridCell, GridResult, GridSpec};
pub use plan::{
    run_experiment, ExperimentPlan, ExperimentResult, PreparedTask, PrivacyMode, TaskBinding,
};

use std::time::Instant;

use rayon::prelude::*;

use crate::client::{clipped_sum, private_release, ReleaseParams};
use crate::config::{FederatedConfig, OptimizerKind};
use crate::error::{check_dim, Error, Result};
use crate::linalg::{axpy, norm};
use crate::metrics::{MetricsTable, RoundMetrics};
use crate::rng::derive_noise_stream;
use crate::server::{aggregate, ServerState};
use crate::task::{loss_and_accuracy, ClientDataset, Objective};

/// An objective together with the client shards it is trained on and an
/// optional held-out set.
#[derive(Debug, Clone)]
pub struct Federation<O: Objective> {
    pub objective: O,
    pub clients: Vec<ClientDataset<O::Sample>>,
    pub test: Vec<O::Sample>,
}

impl<O: Objective> Federation<O> {
    pub fn new(objective: O, clients: Vec<ClientDataset<O::Sample>>, test: Vec<O::Sample>) -> Result<Self> {
        if clients.is_empty() {
            return Err(Error::Task("federation without clients".into()));
        }
        for c in &clients {
            for s in c.samples() {
                objective.check_sample(s)?;
            }
        }
        Ok(Federation {
            objective,
            clients,
            test,
        })
    }

    pub fn n(&self) -> usize {
        self.clients.len()
    }

    pub fn dim(&self) -> usize {
        self.objective.dim()
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.clients.iter().map(ClientDataset::size).collect()
    }

    /// `F(θ) = (1/n) Σ_i mean_{D_i} l`.
    pub fn train_loss(&self, theta: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for c in &self.clients {
            total += loss_and_accuracy(&self.objective, theta, c.samples())?.0;
        }
        Ok(total / self.n() as f64)
    }

    /// `∇F(θ)` with the same client weighting as [`Federation::train_loss`].
    pub fn full_gradient(&self, theta: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim(), theta.len())?;
        let mut g = vec![0.0; self.dim()];
        let mut buf = vec![0.0; self.dim()];
        for c in &self.clients {
            let w = 1.0 / (c.size() * self.n()) as f64;
            for s in c.samples() {
                self.objective.gradient_into(theta, s, &mut buf);
                axpy(w, &buf, &mut g);
            }
        }
        Ok(g)
    }

    /// Noiseless aggregate of clipped gradients, `g_clip(θ)`.
    pub fn clipped_gradient(&self, theta: &[f64], c_g: f64) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.dim()];
        for c in &self.clients {
            let s = clipped_sum(&self.objective, c, theta, c_g)?;
            axpy(1.0 / (c.size() * self.n()) as f64, &s, &mut g);
        }
        Ok(g)
    }

    /// Train loss, accuracy (held-out set when present, else pooled
    /// training data) and suboptimality gap at `theta`.
    pub fn evaluate(&self, theta: &[f64]) -> Result<(f64, Option<f64>, Option<f64>)> {
        let train_loss = self.train_loss(theta)?;
        let accuracy = if self.test.is_empty() {
            let mut correct = 0.0;
            let mut count = 0.0;
            let mut labelled = true;
            for c in &self.clients {
                match loss_and_accuracy(&self.objective, theta, c.samples())?.1 {
                    Some(acc) => {
                        correct += acc * c.size() as f64;
                        count += c.size() as f64;
                    }
                    None => labelled = false,
                }
            }
            labelled.then(|| correct / count)
        } else {
            loss_and_accuracy(&self.objective, theta, &self.test)?.1
        };
        let gap = self
            .objective
            .optimum_value()
            .map(|opt| (train_loss - opt).max(0.0));
        Ok((train_loss, accuracy, gap))
    }
}

/// Result of one federated round.
#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub state: ServerState,
    /// The privatized aggregate `G_t` used by the step.
    pub aggregate: Vec<f64>,
    pub metrics: Option<RoundMetrics>,
}

/// One round: all client releases (in parallel on the ambient rayon pool),
/// aggregation, then the configured server step. Metrics are computed at
/// the new iterate when `evaluate` is set.
pub fn run_round<O: Objective>(
    fed: &Federation<O>,
    state: &ServerState,
    config: &FederatedConfig,
    round: usize,
    evaluate: bool,
) -> Result<RoundOutcome> {
    if round >= config.rounds || state.next_round() != round {
        return Err(Error::Task(format!(
            "round {round} does not follow state round {} (T = {})",
            state.round, config.rounds
        )));
    }
    if fed.n() != config.n {
        return Err(Error::Task(format!(
            "config has n = {} but the federation has {} clients",
            config.n,
            fed.n()
        )));
    }
    let params = ReleaseParams {
        clip_cg: config.clip_cg,
        sigma_g: config.sigma_g,
        n: config.n,
    };
    let releases = fed
        .clients
        .par_iter()
        .enumerate()
        .map(|(i, data)| {
            let mut stream = derive_noise_stream(config.master_seed, i, round);
            private_release(&fed.objective, data, &state.theta, &params, &mut stream, i, round)
        })
        .collect::<Result<Vec<_>>>()?;
    let g = aggregate(&releases, config.n)?;

    let mut next = state.clone();
    let eta = config.eta_at(round);
    match config.optimizer {
        OptimizerKind::Sofim => next.sofim_update(&g, eta, config.beta, config.rho)?,
        OptimizerKind::FedGd => next.fedgd_update(&g, eta)?,
    }

    let metrics = if evaluate {
        let (train_loss, test_accuracy, suboptimality_gap) = fed.evaluate(&next.theta)?;
        Some(RoundMetrics {
            round: round + 1,
            train_loss,
            test_accuracy,
            aggregate_grad_norm: norm(&g),
            suboptimality_gap,
            elapsed: 0.0,
        })
    } else {
        None
    };
    Ok(RoundOutcome {
        state: next,
        aggregate: g,
        metrics,
    })
}

/// Evaluation cadence and timing for a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    /// Metrics after every `eval_every` completed rounds, and after the last.
    pub eval_every: usize,
    /// Record wall-clock seconds in `elapsed`; off keeps output byte-stable.
    pub wall_clock: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            eval_every: 10,
            wall_clock: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub table: MetricsTable,
    pub state: ServerState,
}

/// `T` rounds from `θ_0 = 0`.
pub fn run_federation<O: Objective>(
    fed: &Federation<O>,
    config: &FederatedConfig,
    options: RunOptions,
) -> Result<RunResult> {
    let config = config.clone().validate()?;
    let cadence = options.eval_every.max(1);
    let start = Instant::now();
    let mut state = ServerState::new(vec![0.0; fed.dim()]);
    let mut table = MetricsTable::new();
    for t in 0..config.rounds {
        let done = t + 1;
        let evaluate = done % cadence == 0 || done == config.rounds;
        let outcome = run_round(fed, &state, &config, t, evaluate)?;
        state = outcome.state;
        if let Some(mut m) = outcome.metrics {
            if options.wall_clock {
                m.elapsed = start.elapsed().as_secs_f64();
            }
            table.push(m);
        }
    }
    Ok(RunResult { table, state })
}
