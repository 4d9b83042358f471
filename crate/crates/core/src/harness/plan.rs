use std::path::{Path, PathBuf};

use crate::accountant::calibrate_sigma;
use crate::config::{FederatedConfig, KeyValues};
use crate::error::{Error, Result};
use crate::metrics::{emit_metrics, MetricsTable};
use crate::server::ServerState;
use crate::task::{
    load_frozen_features, make_anisotropic_features, make_synthetic_quadratic, partition_iid,
    split_holdout, AnisotropicSpec, ClientDataset, Example, QuadSample, QuadraticSpec,
    QuadraticTask, SoftmaxHeadTask,
};

use super::{run_federation, Federation, RunOptions};

/// How `σ_g` is chosen for a run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PrivacyMode {
    NonPrivate,
    /// Explicit noise multiplier.
    NoiseMultiplier(f64),
    /// Calibrate `σ_g` to this `(ε, δ)` before training.
    Target { epsilon: f64, delta: f64 },
}

impl PrivacyMode {
    /// `σ_g` for a run of `n` clients and `rounds` rounds.
    pub fn resolve(&self, n: usize, rounds: usize) -> Result<f64> {
        match *self {
            PrivacyMode::NonPrivate => Ok(0.0),
            PrivacyMode::NoiseMultiplier(s) => Ok(s),
            PrivacyMode::Target { epsilon, delta } => calibrate_sigma(epsilon, delta, n, rounds),
        }
    }
}

/// Where the training data comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum TaskBinding {
    /// Synthetic quadratic; its client count follows the config's `n`.
    Quadratic(QuadraticSpec),
    /// Synthetic anisotropic features with a softmax head.
    Anisotropic {
        spec: AnisotropicSpec,
        test_fraction: f64,
        l2_lambda: f64,
    },
    /// Frozen features read from disk. Without a test file a
    /// `test_fraction` holdout is split off the training file.
    Features {
        train: PathBuf,
        test: Option<PathBuf>,
        test_fraction: f64,
        l2_lambda: f64,
    },
}

/// Task data loaded once and sharded per run.
#[derive(Debug, Clone)]
pub enum PreparedTask {
    Quadratic {
        task: QuadraticTask,
        shards: Vec<ClientDataset<QuadSample>>,
    },
    Softmax {
        task: SoftmaxHeadTask,
        train: Vec<Example>,
        test: Vec<Example>,
    },
}

impl TaskBinding {
    /// Generates or loads the data. `n` is the number of clients; the
    /// holdout split is seeded by the task seed so it does not vary across
    /// runs of one plan.
    pub fn prepare(&self, n: usize) -> Result<PreparedTask> {
        match self {
            TaskBinding::Quadratic(spec) => {
                let spec = QuadraticSpec {
                    clients: n,
                    ..spec.clone()
                };
                let (task, shards) = make_synthetic_quadratic(&spec)?;
                Ok(PreparedTask::Quadratic { task, shards })
            }
            TaskBinding::Anisotropic {
                spec,
                test_fraction,
                l2_lambda,
            } => {
                let all = make_anisotropic_features(spec)?;
                let (train, test) = split_holdout(&all, *test_fraction, spec.seed);
                let task = SoftmaxHeadTask::new(spec.classes, spec.feature_dim, *l2_lambda)?;
                Ok(PreparedTask::Softmax { task, train, test })
            }
            TaskBinding::Features {
                train,
                test,
                test_fraction,
                l2_lambda,
            } => {
                let (all, meta) = load_frozen_features(train)?;
                let (train, test) = match test {
                    Some(path) => {
                        let (test, tmeta) = load_frozen_features(path)?;
                        if tmeta.feature_dim != meta.feature_dim || tmeta.num_classes != meta.num_classes {
                            return Err(Error::Task(format!(
                                "test file {} has dim={},classes={} but training has dim={},classes={}",
                                path.display(),
                                tmeta.feature_dim,
                                tmeta.num_classes,
                                meta.feature_dim,
                                meta.num_classes
                            )));
                        }
                        (all, test)
                    }
                    None => split_holdout(&all, *test_fraction, 0),
                };
                let task = SoftmaxHeadTask::new(meta.num_classes, meta.feature_dim, *l2_lambda)?;
                Ok(PreparedTask::Softmax { task, train, test })
            }
        }
    }

    fn to_pairs(&self) -> Vec<(String, String)> {
        let mut out: Vec<(&str, String)> = Vec::new();
        match self {
            TaskBinding::Quadratic(s) => {
                out.push(("task", "quadratic".into()));
                out.push(("quad_dim", s.dim.to_string()));
                out.push(("quad_mu", s.mu.to_string()));
                out.push(("quad_l", s.l.to_string()));
                out.push(("quad_heterogeneity", s.heterogeneity.to_string()));
                out.push(("quad_samples", s.samples_per_client.to_string()));
                out.push(("quad_spread", s.sample_spread.to_string()));
                out.push(("quad_center_scale", s.center_scale.to_string()));
                out.push(("task_seed", s.seed.to_string()));
            }
            TaskBinding::Anisotropic {
                spec,
                test_fraction,
                l2_lambda,
            } => {
                out.push(("task", "anisotropic".into()));
                out.push(("aniso_dim", spec.feature_dim.to_string()));
                out.push(("aniso_classes", spec.classes.to_string()));
                out.push(("aniso_examples", spec.examples.to_string()));
                out.push(("aniso_kappa", spec.kappa.to_string()));
                out.push(("aniso_separation", spec.separation.to_string()));
                out.push(("aniso_offset", spec.offset.to_string()));
                out.push(("aniso_scale", spec.scale.to_string()));
                out.push(("task_seed", spec.seed.to_string()));
                out.push(("test_fraction", test_fraction.to_string()));
                out.push(("l2_lambda", l2_lambda.to_string()));
            }
            TaskBinding::Features {
                train,
                test,
                test_fraction,
                l2_lambda,
            } => {
                out.push(("task", "features".into()));
                out.push(("features_path", train.display().to_string()));
                if let Some(t) = test {
                    out.push(("test_path", t.display().to_string()));
                }
                out.push(("test_fraction", test_fraction.to_string()));
                out.push(("l2_lambda", l2_lambda.to_string()));
            }
        }
        out.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }
}

impl PreparedTask {
    /// Shards the data for one run; softmax data is partitioned IID with
    /// the config's master seed.
    pub fn run(&self, config: &FederatedConfig, options: RunOptions) -> Result<(MetricsTable, ServerState)> {
        match self {
            PreparedTask::Quadratic { task, shards } => {
                let fed = Federation::new(task.clone(), shards.clone(), Vec::new())?;
                let r = run_federation(&fed, config, options)?;
                Ok((r.table, r.state))
            }
            PreparedTask::Softmax { task, train, test } => {
                let clients = partition_iid(train, config.n, config.master_seed)?;
                let fed = Federation::new(task.clone(), clients, test.clone())?;
                let r = run_federation(&fed, config, options)?;
                Ok((r.table, r.state))
            }
        }
    }
}

/// Everything needed for one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    /// `sigma_g` here is ignored; the privacy mode decides it.
    pub config: FederatedConfig,
    pub task: TaskBinding,
    pub privacy: PrivacyMode,
    pub eval_every: usize,
    pub output: Option<PathBuf>,
    /// Threads for client computation; 0 uses the global rayon pool.
    pub workers: usize,
    pub wall_clock: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            config: FederatedConfig::default(),
            task: TaskBinding::Quadratic(QuadraticSpec::default()),
            privacy: PrivacyMode::NonPrivate,
            eval_every: 10,
            output: None,
            workers: 0,
            wall_clock: false,
        }
    }
}

const PLAN_KEYS: &[&str] = &[
    "task",
    "epsilon",
    "delta",
    "eval_every",
    "output",
    "workers",
    "wall_clock",
    "task_seed",
    "quad_dim",
    "quad_mu",
    "quad_l",
    "quad_heterogeneity",
    "quad_samples",
    "quad_spread",
    "quad_center_scale",
    "aniso_dim",
    "aniso_classes",
    "aniso_examples",
    "aniso_kappa",
    "aniso_separation",
    "aniso_offset",
    "aniso_scale",
    "features_path",
    "test_path",
    "test_fraction",
    "l2_lambda",
];

const CONFIG_KEYS: &[&str] = &[
    "n",
    "rounds",
    "eta",
    "clip_cg",
    "sigma_g",
    "beta",
    "rho",
    "master_seed",
    "optimizer",
    "schedule",
];

impl ExperimentPlan {
    /// Builds a plan from config-file keys. Unknown keys are rejected, and
    /// `sigma_g` may not be combined with `epsilon`/`delta`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let unknown: Vec<String> = kv
            .keys()
            .filter(|k| !PLAN_KEYS.contains(k) && !CONFIG_KEYS.contains(k))
            .map(|k| format!("unknown key `{k}`"))
            .collect();
        if !unknown.is_empty() {
            return Err(Error::InvalidConfig(unknown));
        }
        let config = FederatedConfig::from_key_values(kv)?;
        let task_seed: u64 = kv.parsed("task_seed")?.unwrap_or(0);
        let test_fraction: f64 = kv.parsed("test_fraction")?.unwrap_or(0.2);
        let l2_lambda: f64 = kv
            .parsed("l2_lambda")?
            .unwrap_or(crate::task::DEFAULT_L2_LAMBDA);

        let task = match kv.get("task").unwrap_or("quadratic") {
            "quadratic" => {
                let d = QuadraticSpec::default();
                TaskBinding::Quadratic(QuadraticSpec {
                    dim: kv.parsed("quad_dim")?.unwrap_or(d.dim),
                    clients: config.n,
                    mu: kv.parsed("quad_mu")?.unwrap_or(d.mu),
                    l: kv.parsed("quad_l")?.unwrap_or(d.l),
                    heterogeneity: kv.parsed("quad_heterogeneity")?.unwrap_or(d.heterogeneity),
                    samples_per_client: kv.parsed("quad_samples")?.unwrap_or(d.samples_per_client),
                    sample_spread: kv.parsed("quad_spread")?.unwrap_or(d.sample_spread),
                    center_scale: kv.parsed("quad_center_scale")?.unwrap_or(d.center_scale),
                    seed: task_seed,
                })
            }
            "anisotropic" => {
                let d = AnisotropicSpec::default();
                TaskBinding::Anisotropic {
                    spec: AnisotropicSpec {
                        feature_dim: kv.parsed("aniso_dim")?.unwrap_or(d.feature_dim),
                        classes: kv.parsed("aniso_classes")?.unwrap_or(d.classes),
                        examples: kv.parsed("aniso_examples")?.unwrap_or(d.examples),
                        kappa: kv.parsed("aniso_kappa")?.unwrap_or(d.kappa),
                        separation: kv.parsed("aniso_separation")?.unwrap_or(d.separation),
                        offset: kv.parsed("aniso_offset")?.unwrap_or(d.offset),
                        scale: kv.parsed("aniso_scale")?.unwrap_or(d.scale),
                        seed: task_seed,
                    },
                    test_fraction,
                    l2_lambda,
                }
            }
            "features" => TaskBinding::Features {
                train: kv
                    .get("features_path")
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::InvalidConfig(vec!["task = features needs features_path".into()]))?,
                test: kv.get("test_path").map(PathBuf::from),
                test_fraction,
                l2_lambda,
            },
            other => {
                return Err(Error::InvalidConfig(vec![format!(
                    "task must be quadratic, anisotropic or features (got {other:?})"
                )]))
            }
        };

        let epsilon: Option<f64> = kv.parsed("epsilon")?;
        let delta: Option<f64> = kv.parsed("delta")?;
        let privacy = match (epsilon, delta, kv.contains("sigma_g")) {
            (Some(_), _, true) | (_, Some(_), true) => {
                return Err(Error::InvalidConfig(vec![
                    "set either sigma_g or epsilon/delta, not both".into(),
                ]))
            }
            (Some(epsilon), Some(delta), false) => PrivacyMode::Target { epsilon, delta },
            (Some(_), None, false) | (None, Some(_), false) => {
                return Err(Error::InvalidConfig(vec![
                    "epsilon and delta must be given together".into(),
                ]))
            }
            (None, None, _) if config.sigma_g > 0.0 => PrivacyMode::NoiseMultiplier(config.sigma_g),
            (None, None, _) => PrivacyMode::NonPrivate,
        };

        let plan = ExperimentPlan {
            config,
            task,
            privacy,
            eval_every: kv.parsed("eval_every")?.unwrap_or(10),
            output: kv.get("output").map(PathBuf::from),
            workers: kv.parsed("workers")?.unwrap_or(0),
            wall_clock: kv.parsed("wall_clock")?.unwrap_or(false),
        };
        plan.validate()
    }

    pub fn validate(self) -> Result<Self> {
        let mut problems = Vec::new();
        let shape = FederatedConfig {
            sigma_g: 0.0,
            ..self.config.clone()
        };
        if let Err(Error::InvalidConfig(p)) = shape.validate() {
            problems.extend(p);
        }
        if self.eval_every < 1 {
            problems.push("eval_every must be at least 1".into());
        }
        match self.privacy {
            PrivacyMode::NoiseMultiplier(s) if !(s >= 0.0 && s.is_finite()) => {
                problems.push("sigma_g must be non-negative".into())
            }
            PrivacyMode::Target { epsilon, delta } => {
                if !(epsilon > 0.0 && epsilon.is_finite()) {
                    problems.push("epsilon must be positive".into());
                }
                if !(delta > 0.0 && delta < 1.0) {
                    problems.push("delta must lie in (0,1)".into());
                }
            }
            _ => {}
        }
        match &self.task {
            TaskBinding::Anisotropic { test_fraction, l2_lambda, .. }
            | TaskBinding::Features { test_fraction, l2_lambda, .. } => {
                if !(0.0..1.0).contains(test_fraction) {
                    problems.push("test_fraction must lie in [0,1)".into());
                }
                if !(*l2_lambda >= 0.0) {
                    problems.push("l2_lambda must be non-negative".into());
                }
            }
            TaskBinding::Quadratic(_) => {}
        }
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    /// The config with `σ_g` resolved from the privacy mode.
    pub fn resolved_config(&self) -> Result<FederatedConfig> {
        let sigma_g = self.privacy.resolve(self.config.n, self.config.rounds)?;
        FederatedConfig {
            sigma_g,
            ..self.config.clone()
        }
        .validate()
    }

    pub(crate) fn options(&self) -> RunOptions {
        RunOptions {
            eval_every: self.eval_every,
            wall_clock: self.wall_clock,
        }
    }

    pub(crate) fn in_pool<T: Send>(&self, f: impl FnOnce() -> T + Send) -> Result<T> {
        if self.workers == 0 {
            return Ok(f());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::Task(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(f))
    }
}

/// Output of [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub config: FederatedConfig,
    /// Resolved `σ_g`, the config and the task as `key = value` pairs.
    pub header: Vec<(String, String)>,
    pub table: MetricsTable,
    pub final_state: ServerState,
}

impl ExperimentResult {
    pub fn header_text(&self) -> String {
        self.header
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

/// Resolves `σ_g`, runs `T` rounds and, when the plan names an output path,
/// writes the metrics CSV there and the header to `<output>.meta`.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentResult> {
    let plan = plan.clone().validate()?;
    let config = plan.resolved_config()?;
    let prepared = plan.task.prepare(config.n)?;
    let (table, final_state) = plan.in_pool(|| prepared.run(&config, plan.options()))??;

    let mut header = vec![("resolved_sigma_g".to_string(), config.sigma_g.to_string())];
    if let PrivacyMode::Target { epsilon, delta } = plan.privacy {
        header.push(("epsilon".into(), epsilon.to_string()));
        header.push(("delta".into(), delta.to_string()));
    }
    header.extend(config.to_pairs());
    header.extend(plan.task.to_pairs());
    header.push(("eval_every".into(), plan.eval_every.to_string()));

    let result = ExperimentResult {
        config,
        header,
        table,
        final_state,
    };
    if let Some(path) = &plan.output {
        emit_metrics(&result.table, path)?;
        let meta = meta_path(path);
        std::fs::write(&meta, result.header_text()).map_err(|e| Error::file(&meta, e))?;
    }
    Ok(result)
}

/// `<output>.meta`, next to the metrics file.
pub fn meta_path(output: &Path) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".meta");
    PathBuf::from(s)
}
