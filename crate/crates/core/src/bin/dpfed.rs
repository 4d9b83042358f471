use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use dpfed::accountant::{calibrate_sigma, composed_delta};
use dpfed::config::KeyValues;
use dpfed::harness::{grid_search, run_experiment, ExperimentPlan, GridSpec};
use dpfed::task::{make_anisotropic_features, write_frozen_features, AnisotropicSpec};
use dpfed::verify::{verify_theory, Suite};

#[derive(Parser)]
#[command(name = "dpfed", version, about = "Differentially private federated optimization simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its metrics.
    Run(RunArgs),
    /// Smallest noise multiplier meeting an (ε, δ) target.
    Calibrate {
        #[arg(long)]
        epsilon: f64,
        #[arg(long)]
        delta: f64,
        /// Number of clients.
        #[arg(long)]
        n: usize,
        #[arg(long)]
        rounds: usize,
    },
    /// Sweep step sizes and clipping radii.
    Grid {
        #[command(flatten)]
        plan: RunArgs,
        /// Comma-separated step sizes.
        #[arg(long)]
        grid_eta: Option<String>,
        /// Comma-separated clipping radii.
        #[arg(long)]
        grid_clip: Option<String>,
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        /// Where to write the per-cell table (stdout when absent).
        #[arg(long)]
        sweep_output: Option<PathBuf>,
    },
    /// Run a theory-verification suite; exits nonzero on failure.
    Verify {
        /// Suite name, or `all`.
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Write a synthetic anisotropic feature file.
    GenTask {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 4)]
        classes: usize,
        #[arg(long, default_value_t = 4000)]
        examples: usize,
        #[arg(long, default_value_t = 100.0)]
        kappa: f64,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = 1.0)]
        offset: f64,
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    /// `key = value` config file.
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set eta=0.3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl RunArgs {
    fn key_values(&self) -> Result<KeyValues> {
        let mut kv = match &self.config {
            Some(path) => KeyValues::load(path)?,
            None => KeyValues::new(),
        };
        for o in &self.overrides {
            let Some((k, v)) = o.split_once('=') else {
                bail!("override {o:?} is not KEY=VALUE");
            };
            kv.set(k.trim(), v.trim());
        }
        Ok(kv)
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Run(args) => {
            let plan = ExperimentPlan::from_key_values(&args.key_values()?)?;
            let result = run_experiment(&plan)?;
            print!("{}", result.header_text());
            if plan.output.is_none() {
                print!("{}", result.table.to_csv());
            }
        }
        Command::Calibrate {
            epsilon,
            delta,
            n,
            rounds,
        } => {
            let sigma = calibrate_sigma(epsilon, delta, n, rounds)?;
            let achieved = composed_delta(epsilon, sigma, n, rounds)?;
            println!("sigma_g = {sigma}");
            println!("achieved_delta = {achieved:e}");
        }
        Command::Grid {
            plan,
            grid_eta,
            grid_clip,
            seeds,
            sweep_output,
        } => {
            let mut kv = plan.key_values()?;
            let mut grid_kv = KeyValues::new();
            for key in ["grid_eta", "grid_clip"] {
                if let Some(v) = kv.get(key) {
                    grid_kv.set(key, v.to_string());
                }
            }
            kv = strip(&kv, &["grid_eta", "grid_clip"]);
            if let Some(v) = grid_eta {
                grid_kv.set("grid_eta", v);
            }
            if let Some(v) = grid_clip {
                grid_kv.set("grid_clip", v);
            }
            let plan = ExperimentPlan::from_key_values(&kv)?;
            let grid = GridSpec::from_key_values(&grid_kv)?;
            let result = grid_search(&plan, &grid, seeds)?;
            match sweep_output {
                Some(path) => std::fs::write(&path, result.to_csv())
                    .with_context(|| format!("writing {}", path.display()))?,
                None => print!("{}", result.to_csv()),
            }
            println!("best_eta = {}", result.best.eta);
            println!("best_clip_cg = {}", result.best.clip_cg);
            println!("best_score = {}", result.best_cell.score);
            println!("sigma_g = {}", result.sigma_g);
        }
        Command::Verify { suite, seed } => {
            let suites: Vec<Suite> = if suite.eq_ignore_ascii_case("all") {
                Suite::ALL.to_vec()
            } else {
                vec![suite.parse()?]
            };
            let mut ok = true;
            for s in suites {
                let report = verify_theory(s, seed);
                print!("{report}");
                ok &= report.passed();
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::GenTask {
            out,
            dim,
            classes,
            examples,
            kappa,
            separation,
            offset,
            scale,
            seed,
        } => {
            let spec = AnisotropicSpec {
                feature_dim: dim,
                classes,
                examples,
                kappa,
                separation,
                offset,
                scale,
                seed,
            };
            let data = make_anisotropic_features(&spec)?;
            let file = File::create(&out).with_context(|| format!("creating {}", out.display()))?;
            let mut w = BufWriter::new(file);
            write_frozen_features(&mut w, &data, dim, classes)?;
            w.flush()?;
            println!("wrote {} examples to {}", data.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn strip(kv: &KeyValues, keys: &[&str]) -> KeyValues {
    let mut out = KeyValues::new();
    for k in kv.keys().filter(|k| !keys.contains(k)) {
        out.set(k, kv.get(k).unwrap_or_default());
    }
    out
}
