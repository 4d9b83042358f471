use rayon::prelude::*;

use crate::config::{FederatedConfig, KeyValues};
use crate::error::{Error, Result};

use super::plan::ExperimentPlan;
use super::RunOptions;

/// Candidate step sizes and clipping radii to sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct GridSpec {
    pub etas: Vec<f64>,
    pub clips: Vec<f64>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            etas: vec![0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 1.0, 2.0, 5.0],
            clips: vec![5.0, 10.0],
        }
    }
}

impl GridSpec {
    pub fn validate(self) -> Result<Self> {
        let mut problems = Vec::new();
        if self.etas.is_empty() {
            problems.push("eta grid is empty".to_string());
        }
        if self.clips.is_empty() {
            problems.push("clip grid is empty".to_string());
        }
        if self.etas.iter().chain(&self.clips).any(|v| !(*v > 0.0 && v.is_finite())) {
            problems.push("grid values must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// Parses comma-separated lists, e.g. `0.1,0.5,1`.
    pub fn parse_list(key: &str, raw: &str) -> Result<Vec<f64>> {
        raw.split(',')
            .map(|s| {
                s.trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(vec![format!("{key}: cannot parse {s:?}")]))
            })
            .collect()
    }

    /// Reads `grid_eta` and `grid_clip`, falling back to the defaults.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut grid = GridSpec::default();
        if let Some(raw) = kv.get("grid_eta") {
            grid.etas = Self::parse_list("grid_eta", raw)?;
        }
        if let Some(raw) = kv.get("grid_clip") {
            grid.clips = Self::parse_list("grid_clip", raw)?;
        }
        grid.validate()
    }
}

/// Seed-averaged outcome of one `(η, C_g)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct GridCell {
    pub eta: f64,
    pub clip_cg: f64,
    /// Mean final test accuracy, when the task is labelled. Diverged seeds
    /// count as zero.
    pub mean_accuracy: Option<f64>,
    /// Mean final training loss; infinite when any seed diverged.
    pub mean_final_loss: f64,
    pub mean_final_gap: Option<f64>,
    pub diverged_seeds: usize,
    /// Selection score: accuracy, else negative gap, else negative loss.
    /// `-inf` for a cell with any diverged seed.
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct GridResult {
    pub best: FederatedConfig,
    pub best_cell: GridCell,
    /// Cells ordered by `η` then `C_g`.
    pub cells: Vec<GridCell>,
    pub sigma_g: f64,
}

impl GridResult {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("eta,clip_cg,mean_accuracy,mean_final_loss,mean_final_gap,diverged_seeds,score\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for c in &self.cells {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                c.eta,
                c.clip_cg,
                opt(c.mean_accuracy),
                c.mean_final_loss,
                opt(c.mean_final_gap),
                c.diverged_seeds,
                c.score
            ));
        }
        out
    }
}

struct SeedOutcome {
    accuracy: Option<f64>,
    loss: f64,
    gap: Option<f64>,
    diverged: bool,
}

/// Runs every cell for `seeds` master seeds (`base.master_seed + s`) and
/// picks the highest score. Ties go to the smaller `η`, then the smaller
/// `C_g`. The privacy mode is resolved once, so all cells share `σ_g`.
pub fn grid_search(base: &ExperimentPlan, grid: &GridSpec, seeds: usize) -> Result<GridResult> {
    let base = base.clone().validate()?;
    let grid = grid.clone().validate()?;
    if seeds < 1 {
        return Err(Error::InvalidConfig(vec!["seeds must be at least 1".into()]));
    }
    let sigma_g = base.privacy.resolve(base.config.n, base.config.rounds)?;
    let prepared = base.task.prepare(base.config.n)?;

    let mut etas = grid.etas.clone();
    let mut clips = grid.clips.clone();
    etas.sort_by(f64::total_cmp);
    etas.dedup();
    clips.sort_by(f64::total_cmp);
    clips.dedup();
    let cells: Vec<(f64, f64)> = etas
        .iter()
        .flat_map(|&e| clips.iter().map(move |&c| (e, c)))
        .collect();
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..seeds as u64).map(move |s| (c, s)))
        .collect();

    // only the final round is evaluated
    let options = RunOptions {
        eval_every: base.config.rounds,
        wall_clock: false,
    };
    let outcomes: Vec<SeedOutcome> = base.in_pool(|| {
        jobs.par_iter()
            .map(|&(c, s)| {
                let (eta, clip_cg) = cells[c];
                let config = FederatedConfig {
                    eta,
                    clip_cg,
                    sigma_g,
                    master_seed: base.config.master_seed.wrapping_add(s),
                    ..base.config.clone()
                };
                let (table, state) = prepared.run(&config, options)?;
                let last = table
                    .last()
                    .ok_or_else(|| Error::Task("run produced no metrics".into()))?;
                let diverged = !last.train_loss.is_finite() || !crate::linalg::is_finite(&state.theta);
                Ok(SeedOutcome {
                    accuracy: last.test_accuracy,
                    loss: last.train_loss,
                    gap: last.suboptimality_gap,
                    diverged,
                })
            })
            .collect::<Result<Vec<_>>>()
    })??;

    let mut summaries = Vec::with_capacity(cells.len());
    for (c, &(eta, clip_cg)) in cells.iter().enumerate() {
        let runs = &outcomes[c * seeds..(c + 1) * seeds];
        let diverged_seeds = runs.iter().filter(|r| r.diverged).count();
        let k = seeds as f64;
        let mean_accuracy = runs[0].accuracy.map(|_| {
            runs.iter()
                .map(|r| if r.diverged { 0.0 } else { r.accuracy.unwrap_or(0.0) })
                .sum::<f64>()
                / k
        });
        let (mean_final_loss, mean_final_gap) = if diverged_seeds > 0 {
            (f64::INFINITY, runs[0].gap.map(|_| f64::INFINITY))
        } else {
            (
                runs.iter().map(|r| r.loss).sum::<f64>() / k,
                runs[0].gap.map(|_| runs.iter().map(|r| r.gap.unwrap_or(0.0)).sum::<f64>() / k),
            )
        };
        let score = if diverged_seeds > 0 {
            f64::NEG_INFINITY
        } else if let Some(acc) = mean_accuracy {
            acc
        } else if let Some(gap) = mean_final_gap {
            -gap
        } else {
            -mean_final_loss
        };
        summaries.push(GridCell {
            eta,
            clip_cg,
            mean_accuracy,
            mean_final_loss,
            mean_final_gap,
            diverged_seeds,
            score: if score.is_nan() { f64::NEG_INFINITY } else { score },
        });
    }

    let mut best = 0;
    for (i, cell) in summaries.iter().enumerate() {
        if cell.score > summaries[best].score {
            best = i;
        }
    }
    let best_cell = summaries[best].clone();
    Ok(GridResult {
        best: FederatedConfig {
            eta: best_cell.eta,
            clip_cg: best_cell.clip_cg,
            sigma_g,
            ..base.config.clone()
        },
        best_cell,
        cells: summaries,
        sigma_g,
    })
}
