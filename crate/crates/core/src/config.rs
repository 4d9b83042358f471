//! Federated run configuration and the flat `key = value` config format.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Which server update rule a run uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OptimizerKind {
    /// Rank-one Fisher-preconditioned step with a momentum-built proxy.
    Sofim,
    /// Plain private federated gradient descent.
    FedGd,
}

impl FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "sofim" | "dpfedsofim" => Ok(OptimizerKind::Sofim),
            "fedgd" | "dpfedgd" => Ok(OptimizerKind::FedGd),
            other => Err(Error::InvalidConfig(vec![format!(
                "optimizer must be one of sofim, fedgd (got {other:?})"
            )])),
        }
    }
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OptimizerKind::Sofim => f.write_str("sofim"),
            OptimizerKind::FedGd => f.write_str("fedgd"),
        }
    }
}

/// Per-round step size rule. The convergence analysis covers the constant
/// schedule only; the geometric variant is an experimentation hook.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepSchedule {
    Constant,
    /// `eta_t = eta * decay^t`
    Geometric { decay: f64 },
}

impl StepSchedule {
    pub fn eta_at(&self, eta: f64, round: usize) -> f64 {
        match *self {
            StepSchedule::Constant => eta,
            StepSchedule::Geometric { decay } => eta * decay.powi(round as i32),
        }
    }
}

impl FromStr for StepSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("constant") {
            return Ok(StepSchedule::Constant);
        }
        if let Some(rest) = s.strip_prefix("geometric:") {
            let decay: f64 = rest.trim().parse().map_err(|_| {
                Error::InvalidConfig(vec![format!("schedule decay is not a number: {rest:?}")])
            })?;
            return Ok(StepSchedule::Geometric { decay });
        }
        Err(Error::InvalidConfig(vec![format!(
            "schedule must be `constant` or `geometric:<decay>` (got {s:?})"
        )]))
    }
}

impl fmt::Display for StepSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            StepSchedule::Constant => f.write_str("constant"),
            StepSchedule::Geometric { decay } => write!(f, "geometric:{decay}"),
        }
    }
}

/// Hyperparameters shared by every round of a federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederatedConfig {
    /// Number of clients; all participate every round.
    pub n: usize,
    /// Number of rounds `T`.
    pub rounds: usize,
    /// Server step size.
    pub eta: f64,
    /// Per-example clipping radius `C_g`.
    pub clip_cg: f64,
    /// Noise multiplier `sigma_g`; zero disables noise entirely.
    pub sigma_g: f64,
    /// Momentum coefficient of the Fisher proxy buffer.
    pub beta: f64,
    /// Ridge `rho` of the Fisher proxy.
    pub rho: f64,
    pub master_seed: u64,
    pub optimizer: OptimizerKind,
    pub schedule: StepSchedule,
}

impl Default for FederatedConfig {
    fn default() -> Self {
        FederatedConfig {
            n: 20,
            rounds: 70,
            eta: 0.5,
            clip_cg: 10.0,
            sigma_g: 0.0,
            beta: 0.9,
            rho: 0.5,
            master_seed: 0,
            optimizer: OptimizerKind::Sofim,
            schedule: StepSchedule::Constant,
        }
    }
}

impl FederatedConfig {
    /// Returns the config unchanged when every bound holds, otherwise an
    /// error listing each violated field.
    pub fn validate(self) -> Result<Self> {
        let mut problems = Vec::new();
        if self.n < 1 {
            problems.push("n must be at least 1".to_string());
        }
        if self.rounds < 1 {
            problems.push("rounds must be at least 1".to_string());
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            problems.push("eta must be positive".to_string());
        }
        if !(self.clip_cg > 0.0 && self.clip_cg.is_finite()) {
            problems.push("clip_cg must be positive".to_string());
        }
        if !(self.sigma_g >= 0.0 && self.sigma_g.is_finite()) {
            problems.push("sigma_g must be non-negative".to_string());
        }
        if !(0.0..1.0).contains(&self.beta) {
            problems.push("beta must lie in [0,1)".to_string());
        }
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            problems.push("rho must be positive".to_string());
        }
        if let StepSchedule::Geometric { decay } = self.schedule {
            if !(decay > 0.0 && decay <= 1.0) {
                problems.push("schedule decay must lie in (0,1]".to_string());
            }
        }
        if problems.is_empty() {
            Ok(self)
        } else {
            Err(Error::InvalidConfig(problems))
        }
    }

    pub fn eta_at(&self, round: usize) -> f64 {
        self.schedule.eta_at(self.eta, round)
    }

    pub fn is_private(&self) -> bool {
        self.sigma_g > 0.0
    }

    /// Reads the config keys out of `kv`, keeping defaults for absent keys.
    /// Keys consumed: `n rounds eta clip_cg sigma_g beta rho master_seed
    /// optimizer schedule`.
    pub fn from_key_values(kv: &KeyValues) -> Result<Self> {
        let mut cfg = FederatedConfig::default();
        if let Some(v) = kv.parsed("n")? {
            cfg.n = v;
        }
        if let Some(v) = kv.parsed("rounds")? {
            cfg.rounds = v;
        }
        if let Some(v) = kv.parsed("eta")? {
            cfg.eta = v;
        }
        if let Some(v) = kv.parsed("clip_cg")? {
            cfg.clip_cg = v;
        }
        if let Some(v) = kv.parsed("sigma_g")? {
            cfg.sigma_g = v;
        }
        if let Some(v) = kv.parsed("beta")? {
            cfg.beta = v;
        }
        if let Some(v) = kv.parsed("rho")? {
            cfg.rho = v;
        }
        if let Some(v) = kv.parsed("master_seed")? {
            cfg.master_seed = v;
        }
        if let Some(v) = kv.get("optimizer") {
            cfg.optimizer = v.parse()?;
        }
        if let Some(v) = kv.get("schedule") {
            cfg.schedule = v.parse()?;
        }
        Ok(cfg)
    }

    /// The config as ordered `key = value` pairs (inverse of
    /// [`FederatedConfig::from_key_values`]).
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        vec![
            ("n".into(), self.n.to_string()),
            ("rounds".into(), self.rounds.to_string()),
            ("eta".into(), self.eta.to_string()),
            ("clip_cg".into(), self.clip_cg.to_string()),
            ("sigma_g".into(), self.sigma_g.to_string()),
            ("beta".into(), self.beta.to_string()),
            ("rho".into(), self.rho.to_string()),
            ("master_seed".into(), self.master_seed.to_string()),
            ("optimizer".into(), self.optimizer.to_string()),
            ("schedule".into(), self.schedule.to_string()),
        ]
    }
}

/// Ordered `key = value` map read from a config file. Blank lines and lines
/// starting with `#` are ignored; a key may appear only once per file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KeyValues {
    entries: BTreeMap<String, String>,
}

impl KeyValues {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = KeyValues::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::parse(line_no, "expected `key = value`"))?;
            let key = key.trim();
            if key.is_empty() {
                return Err(Error::parse(line_no, "empty key"));
            }
            if kv.entries.contains_key(key) {
                return Err(Error::parse(line_no, format!("duplicate key `{key}`")));
            }
            kv.entries.insert(key.to_string(), value.trim().to_string());
        }
        Ok(kv)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::parse(&text)
    }

    /// Inserts or replaces a value (used for command-line overrides).
    pub fn set(&mut self, key: impl Into<String>, value: impl Into<String>) {
        self.entries.insert(key.into(), value.into());
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.get(key).map(String::as_str)
    }

    pub fn contains(&self, key: &str) -> bool {
        self.entries.contains_key(key)
    }

    pub fn keys(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn parsed<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|_| {
                Error::InvalidConfig(vec![format!("{key}: cannot parse {raw:?}")])
            }),
        }
    }
}
