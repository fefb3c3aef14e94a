//! Flat `key = value` settings shared by config files, manifests and flags.
//!
//! Every command owns a settings struct with defaults. Values are applied in
//! order: config file (or manifest), then environment and flags.

use std::path::{Path, PathBuf};

use dflprivacy::attack::{AttackConfig, InversionConfig};
use dflprivacy::leakage::ExperimentConfig;
use dflprivacy::Mode;

use crate::error::CliError;

/// Keys that manifests carry but that are not settings.
const MANIFEST_KEYS: &[&str] = &[
    "command",
    "version",
    "started_unix",
    "finished_unix",
    "output",
    "out_dir",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

/// Parses `key = value` lines; `#` starts a comment line.
pub fn parse_key_values(text: &str, origin: &str) -> Result<Vec<Entry>, CliError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::Usage(format!(
                "{origin}:{}: expected `key = value`, found `{line}`",
                i + 1
            )));
        };
        out.push(Entry {
            line: i + 1,
            key: key.trim().to_string(),
            value: value.trim().to_string(),
        });
    }
    Ok(out)
}

pub fn read_key_values(path: &Path) -> Result<Vec<Entry>, CliError> {
    let text =
        std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_key_values(&text, &path.display().to_string())
}

pub trait Settings {
    const COMMAND: &'static str;

    /// Sets one key; `Err` carries a message without location.
    fn apply(&mut self, key: &str, value: &str) -> Result<(), String>;

    /// Every setting, in manifest order.
    fn pairs(&self) -> Vec<(&'static str, String)>;

    fn apply_entries(&mut self, entries: &[Entry], origin: &str) -> Result<(), CliError> {
        for e in entries {
            if MANIFEST_KEYS.contains(&e.key.as_str()) {
                continue;
            }
            self.apply(&e.key, &e.value)
                .map_err(|m| CliError::Usage(format!("{origin}:{}: {m}", e.line)))?;
        }
        Ok(())
    }

    fn apply_overrides(&mut self, overrides: &[(&str, String)]) -> Result<(), CliError> {
        for (key, value) in overrides {
            self.apply(key, value)
                .map_err(|m| CliError::Usage(format!("--{}: {m}", key.replace('_', "-"))))?;
        }
        Ok(())
    }
}

fn unknown(command: &str, key: &str) -> String {
    format!("`{key}` is not a setting of `{command}`")
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String> {
    value
        .trim()
        .parse()
        .map_err(|_| format!("invalid value `{value}` for `{key}`"))
}

fn list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>, String> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| number(key, s))
        .collect()
}

fn boolean(key: &str, value: &str) -> Result<bool, String> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("invalid value `{value}` for `{key}`, expected true or false")),
    }
}

fn modes(value: &str) -> Result<Vec<Mode>, String> {
    let parsed: Vec<Mode> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<Mode>().map_err(|e| e.to_string()))
        .collect::<Result<_, _>>()?;
    if parsed.is_empty() {
        return Err("no modes given".into());
    }
    let mut unique = Vec::new();
    for m in parsed {
        if !unique.contains(&m) {
            unique.push(m);
        }
    }
    Ok(unique)
}

fn join<T: ToString>(values: &[T]) -> String {
    values.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn optional<T: ToString>(value: &Option<T>) -> String {
    value.as_ref().map(T::to_string).unwrap_or_default()
}

fn optional_path(value: &str) -> Option<PathBuf> {
    (!value.trim().is_empty()).then(|| PathBuf::from(value.trim()))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SimulateSettings {
    pub experiment: ExperimentConfig,
    pub analytic_only: bool,
}

impl Settings for SimulateSettings {
    const COMMAND: &'static str = "simulate";

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.experiment;
        match key {
            "seed" => e.seed = number(key, value)?,
            "n" => e.n_values = list(key, value)?,
            "densities" => e.densities = list(key, value)?,
            "modes" => e.modes = modes(value)?,
            "samples" => e.samples = number(key, value)?,
            "knn_k" => e.k_nn = number(key, value)?,
            "condition_on_own" => e.condition_on_own = boolean(key, value)?,
            "corrupt_subsample" => {
                e.corrupt_subsample = if value.trim().is_empty() {
                    None
                } else {
                    Some(number(key, value)?)
                }
            }
            "analytic_only" => self.analytic_only = boolean(key, value)?,
            _ => return Err(unknown(Self::COMMAND, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.experiment;
        vec![
            ("seed", e.seed.to_string()),
            ("n", join(&e.n_values)),
            ("densities", join(&e.densities)),
            ("modes", join(&e.modes)),
            ("samples", e.samples.to_string()),
            ("knn_k", e.k_nn.to_string()),
            ("condition_on_own", e.condition_on_own.to_string()),
            ("corrupt_subsample", optional(&e.corrupt_subsample)),
            ("analytic_only", self.analytic_only.to_string()),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalyticSettings {
    pub experiment: ExperimentConfig,
}

impl Settings for AnalyticSettings {
    const COMMAND: &'static str = "analytic";

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let e = &mut self.experiment;
        match key {
            "seed" => e.seed = number(key, value)?,
            "n" => e.n_values = list(key, value)?,
            "densities" => e.densities = list(key, value)?,
            "modes" => e.modes = modes(value)?,
            _ => return Err(unknown(Self::COMMAND, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let e = &self.experiment;
        vec![
            ("seed", e.seed.to_string()),
            ("n", join(&e.n_values)),
            ("densities", join(&e.densities)),
            ("modes", join(&e.modes)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Empty unless given; decentralized modes then need `graph`.
    pub densities: Vec<f64>,
    pub graph: Option<PathBuf>,
    pub runs: usize,
    pub attack: AttackConfig,
}

impl Default for AttackSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            modes: Mode::ALL.to_vec(),
            densities: Vec::new(),
            graph: None,
            runs: 1,
            attack: AttackConfig::default(),
        }
    }
}

impl Settings for AttackSettings {
    const COMMAND: &'static str = "attack";

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        let a = &mut self.attack;
        match key {
            "seed" => self.seed = number(key, value)?,
            "modes" => self.modes = modes(value)?,
            "densities" => self.densities = list(key, value)?,
            "graph" => self.graph = optional_path(value),
            "runs" => self.runs = number(key, value)?,
            "n" => {
                let values: Vec<usize> = list(key, value)?;
                match values.as_slice() {
                    [n] => a.nodes = *n,
                    _ => return Err("`attack` takes a single node count".into()),
                }
            }
            "corrupt" => a.corrupt = number(key, value)?,
            "height" => a.height = number(key, value)?,
            "width" => a.width = number(key, value)?,
            "classes" => a.classes = number(key, value)?,
            "model_scale" => a.model_scale = number(key, value)?,
            "iterations" => a.inversion.iterations = number(key, value)?,
            "learning_rate" => a.inversion.learning_rate = number(key, value)?,
            _ => return Err(unknown(Self::COMMAND, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        let a = &self.attack;
        vec![
            ("seed", self.seed.to_string()),
            ("modes", join(&self.modes)),
            ("densities", join(&self.densities)),
            (
                "graph",
                self.graph.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("runs", self.runs.to_string()),
            ("n", a.nodes.to_string()),
            ("corrupt", a.corrupt.to_string()),
            ("height", a.height.to_string()),
            ("width", a.width.to_string()),
            ("classes", a.classes.to_string()),
            ("model_scale", a.model_scale.to_string()),
            ("iterations", a.inversion.iterations.to_string()),
            ("learning_rate", a.inversion.learning_rate.to_string()),
        ]
    }
}

impl AttackSettings {
    pub fn validate(&self) -> Result<(), CliError> {
        let a = &self.attack;
        let usage = |m: String| Err(CliError::Usage(m));
        if self.runs == 0 {
            return usage("--runs must be at least 1".into());
        }
        if a.nodes < 3 {
            return usage(format!("the attack needs at least 3 nodes, got {}", a.nodes));
        }
        if a.corrupt >= a.nodes {
            return usage(format!("--corrupt {} is outside 0..{}", a.corrupt, a.nodes));
        }
        if a.height == 0 || a.width == 0 || a.classes < 2 {
            return usage("images need a positive size and at least 2 classes".into());
        }
        if !(a.model_scale.is_finite() && a.model_scale > 0.0) {
            return usage(format!("--model-scale must be positive, got {}", a.model_scale));
        }
        if a.inversion.iterations == 0 || !(a.inversion.learning_rate > 0.0 && a.inversion.learning_rate.is_finite()) {
            return usage("inversion needs iterations >= 1 and a positive learning rate".into());
        }
        if self.graph.is_some() && !self.densities.is_empty() {
            return usage("--graph and --densities are mutually exclusive".into());
        }
        let decentralized: Vec<String> = self
            .modes
            .iter()
            .filter(|m| m.is_decentralized())
            .map(|m| m.to_string())
            .collect();
        if !decentralized.is_empty() && self.graph.is_none() && self.densities.is_empty() {
            return usage(format!(
                "mode(s) {} need a topology: pass --densities or --graph",
                decentralized.join(",")
            ));
        }
        Ok(())
    }

    pub fn inversion(&self) -> InversionConfig {
        self.attack.inversion
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerifySettings {
    pub report: Option<PathBuf>,
    pub tol: f64,
    /// Required gap on non-complete graphs; defaults to `tol`.
    pub gap_tol: Option<f64>,
    /// Allowed difference on complete graphs; defaults to `tol`.
    pub eq_tol: Option<f64>,
}

impl Default for VerifySettings {
    fn default() -> Self {
        Self {
            report: None,
            tol: 0.05,
            gap_tol: None,
            eq_tol: None,
        }
    }
}

impl Settings for VerifySettings {
    const COMMAND: &'static str = "verify";

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "report" => self.report = optional_path(value),
            "tol" => self.tol = number(key, value)?,
            "gap_tol" => {
                self.gap_tol = if value.is_empty() {
                    None
                } else {
                    Some(number(key, value)?)
                }
            }
            "eq_tol" => {
                self.eq_tol = if value.is_empty() {
                    None
                } else {
                    Some(number(key, value)?)
                }
            }
            _ => return Err(unknown(Self::COMMAND, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            (
                "report",
                self.report
                    .as_ref()
                    .map(|p| p.display().to_string())
                    .unwrap_or_default(),
            ),
            ("tol", self.tol.to_string()),
            ("gap_tol", optional(&self.gap_tol)),
            ("eq_tol", optional(&self.eq_tol)),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceSettings {
    pub seed: u64,
    pub mode: Mode,
    pub nodes: usize,
    pub density: f64,
    pub graph: Option<PathBuf>,
    pub corrupt: usize,
    pub rounds: usize,
    pub eta: f64,
    pub dim: usize,
    /// Gossip to consensus each round instead of a single mixing step.
    pub converge: bool,
    pub gossip_tol: f64,
    pub max_gossip_rounds: usize,
}

impl Default for TraceSettings {
    fn default() -> Self {
        Self {
            seed: 0,
            mode: Mode::Dfl,
            nodes: 10,
            density: 0.5,
            graph: None,
            corrupt: 0,
            rounds: 5,
            eta: 0.1,
            dim: 4,
            converge: false,
            gossip_tol: 1e-10,
            max_gossip_rounds: 10_000,
        }
    }
}

impl Settings for TraceSettings {
    const COMMAND: &'static str = "trace";

    fn apply(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "seed" => self.seed = number(key, value)?,
            "modes" | "mode" => {
                let m = modes(value)?;
                match m.as_slice() {
                    [single] => self.mode = *single,
                    _ => return Err("`trace` takes a single mode".into()),
                }
            }
            "n" => {
                let values: Vec<usize> = list(key, value)?;
                match values.as_slice() {
                    [n] => self.nodes = *n,
                    _ => return Err("`trace` takes a single node count".into()),
                }
            }
            "densities" | "density" => {
                let values: Vec<f64> = list(key, value)?;
                match values.as_slice() {
                    [d] => self.density = *d,
                    _ => return Err("`trace` takes a single density".into()),
                }
            }
            "graph" => self.graph = optional_path(value),
            "corrupt" => self.corrupt = number(key, value)?,
            "rounds" => self.rounds = number(key, value)?,
            "eta" => self.eta = number(key, value)?,
            "dim" => self.dim = number(key, value)?,
            "converge" => self.converge = boolean(key, value)?,
            "gossip_tol" => self.gossip_tol = number(key, value)?,
            "max_gossip_rounds" => self.max_gossip_rounds = number(key, value)?,
            _ => return Err(unknown(Self::COMMAND, key)),
        }
        Ok(())
    }

    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("seed", self.seed.to_string()),
            ("mode", self.mode.to_string()),
            ("n", self.nodes.to_string()),
            ("density", self.density.to_string()),
            (
                "graph",
                self.graph.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
            ),
            ("corrupt", self.corrupt.to_string()),
            ("rounds", self.rounds.to_string()),
            ("eta", self.eta.to_string()),
            ("dim", self.dim.to_string()),
            ("converge", self.converge.to_string()),
            ("gossip_tol", self.gossip_tol.to_string()),
            ("max_gossip_rounds", self.max_gossip_rounds.to_string()),
        ]
    }
}
