//! Command-line front end for the leakage simulation, the gradient-inversion
//! attack and the ordering check.
//!
//! Settings resolve in order: built-in defaults, `--config` file,
//! `FLPRIV_<KEY>` environment variables, flags.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;
pub mod settings;
pub mod svg;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::commands::Outcome;
use crate::error::{CliError, EXIT_OK, EXIT_USAGE};
use crate::manifest::{unix_now, RunManifest, MANIFEST_FILE};
use crate::output::OutputDir;
use crate::settings::{
    read_key_values, AnalyticSettings, AttackSettings, Settings, SimulateSettings, TraceSettings, VerifySettings,
};

pub const ENV_PREFIX: &str = "FLPRIV_";
pub const DEFAULT_OUT_DIR: &str = "out";

#[derive(Debug, Parser)]
#[command(
    name = "dflprivacy",
    version,
    about = "Privacy leakage of centralized and decentralized federated learning"
)]
pub struct Cli {
    /// Suppress progress lines on stderr.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte-Carlo leakage estimates per mode, node count and density.
    Simulate(SimulateArgs),
    /// Gradient inversion against each mode's view.
    Attack(AttackArgs),
    /// Check the leakage ordering on a summary CSV.
    Verify(VerifyArgs),
    /// Closed-form leakage, no sampling.
    Analytic(AnalyticArgs),
    /// Record model states and adversary observations of a protocol run.
    Trace(TraceArgs),
    /// Repeat a run from its manifest.
    Rerun(RerunArgs),
}

#[derive(Debug, Args, Default)]
pub struct Common {
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: out]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// `key = value` settings file; a manifest also works.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Node counts, comma separated.
    #[arg(long, value_name = "LIST")]
    pub n: Option<String>,
    /// Graph densities, comma separated.
    #[arg(long, value_name = "LIST")]
    pub densities: Option<String>,
    /// Subset of cfl,cfl_sa,dfl,dfl_sa.
    #[arg(long, alias = "mode", value_name = "LIST")]
    pub modes: Option<String>,
    /// Monte-Carlo draws per variable.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Neighbors of the kNN estimator.
    #[arg(long)]
    pub knn_k: Option<usize>,
    /// Tolerance of the ordering check, in nats.
    #[arg(long)]
    pub tol: Option<f64>,
}

impl Common {
    fn overrides(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        let mut push = |k: &'static str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k, v));
            }
        };
        push("seed", self.seed.map(|v| v.to_string()));
        push("n", self.n.clone());
        push("densities", self.densities.clone());
        push("modes", self.modes.clone());
        push("samples", self.samples.map(|v| v.to_string()));
        push("knn_k", self.knn_k.map(|v| v.to_string()));
        push("tol", self.tol.map(|v| v.to_string()));
        out
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub common: Common,
    /// Closed-form values only.
    #[arg(long)]
    pub analytic_only: bool,
    /// Use the conditional estimator (true) or subtract the own gradient (false).
    #[arg(long, value_name = "BOOL")]
    pub condition_on_own: Option<String>,
    /// Average over this many random corrupt nodes instead of all.
    #[arg(long)]
    pub corrupt_subsample: Option<usize>,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[command(flatten)]
    pub common: Common,
    /// Edge-list file used instead of generated graphs.
    #[arg(long)]
    pub graph: Option<PathBuf>,
    /// Independent scenarios averaged per cell.
    #[arg(long)]
    pub runs: Option<usize>,
    #[arg(long)]
    pub corrupt: Option<usize>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub height: Option<usize>,
    #[arg(long)]
    pub width: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub model_scale: Option<f64>,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Summary CSV written by `simulate`.
    pub report: Option<PathBuf>,
    #[command(flatten)]
    pub common: Common,
    /// Required gap on non-complete graphs [default: --tol]
    #[arg(long)]
    pub gap_tol: Option<f64>,
    /// Allowed difference on complete graphs [default: --tol]
    #[arg(long)]
    pub eq_tol: Option<f64>,
}

#[derive(Debug, Args)]
pub struct AnalyticArgs {
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub graph: Option<PathBuf>,
    #[arg(long)]
    pub corrupt: Option<usize>,
    #[arg(long)]
    pub rounds: Option<usize>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Gossip to consensus every round.
    #[arg(long)]
    pub converge: bool,
}

#[derive(Debug, Args)]
pub struct RerunArgs {
    pub manifest: PathBuf,
    /// Output directory [default: the manifest's directory]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

fn push<T: ToString>(out: &mut Vec<(&'static str, String)>, key: &'static str, value: &Option<T>) {
    if let Some(v) = value {
        out.push((key, v.to_string()));
    }
}

/// `FLPRIV_<KEY>` values for the keys `S` knows.
fn env_overrides<S: Settings>(settings: &S) -> Vec<(&'static str, String)> {
    settings
        .pairs()
        .into_iter()
        .filter_map(|(key, _)| {
            std::env::var(format!("{ENV_PREFIX}{}", key.to_uppercase()))
                .ok()
                .map(|v| (key, v))
        })
        .collect()
}

fn resolve<S: Settings + Default>(common: &Common, extra: Vec<(&'static str, String)>) -> Result<S, CliError> {
    let mut s = S::default();
    if let Some(path) = &common.config {
        s.apply_entries(&read_key_values(path)?, &path.display().to_string())?;
    }
    let env = env_overrides(&s);
    s.apply_overrides(&env)?;
    let mut flags = common.overrides();
    flags.extend(extra);
    s.apply_overrides(&flags)?;
    Ok(s)
}

fn out_dir(common: &Common) -> PathBuf {
    common
        .out_dir
        .clone()
        .or_else(|| std::env::var_os(format!("{ENV_PREFIX}OUT_DIR")).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

/// Runs `body`, then records the settings and outputs in the manifest.
fn execute<S: Settings>(
    settings: &S,
    dir: &Path,
    body: impl FnOnce(&S, &mut OutputDir) -> Result<Outcome, CliError>,
) -> Result<Outcome, CliError> {
    let started = unix_now();
    let mut out = OutputDir::create(dir)?;
    let outcome = body(settings, &mut out)?;
    let mut outputs = out.written().to_vec();
    outputs.sort();
    let manifest = RunManifest {
        command: S::COMMAND.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        settings: settings.pairs().into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
        started_unix: started,
        finished_unix: unix_now(),
        outputs,
    };
    out.write(MANIFEST_FILE, &manifest.render())?;
    Ok(outcome)
}

fn from_manifest<S: Settings + Default>(manifest: &RunManifest, origin: &str) -> Result<S, CliError> {
    let mut s = S::default();
    s.apply_entries(&manifest.setting_entries(), origin)?;
    Ok(s)
}

pub fn dispatch(cli: Cli) -> Result<Outcome, CliError> {
    let quiet = cli.quiet;
    match cli.command {
        Command::Simulate(a) => {
            let mut extra = Vec::new();
            if a.analytic_only {
                extra.push(("analytic_only", "true".to_string()));
            }
            push(&mut extra, "condition_on_own", &a.condition_on_own);
            push(&mut extra, "corrupt_subsample", &a.corrupt_subsample);
            let s: SimulateSettings = resolve(&a.common, extra)?;
            execute(&s, &out_dir(&a.common), |s, out| commands::simulate(s, out, quiet))
        }
        Command::Attack(a) => {
            let mut extra = Vec::new();
            push(&mut extra, "graph", &a.graph.as_ref().map(|p| p.display().to_string()));
            push(&mut extra, "runs", &a.runs);
            push(&mut extra, "corrupt", &a.corrupt);
            push(&mut extra, "iterations", &a.iterations);
            push(&mut extra, "learning_rate", &a.learning_rate);
            push(&mut extra, "height", &a.height);
            push(&mut extra, "width", &a.width);
            push(&mut extra, "classes", &a.classes);
            push(&mut extra, "model_scale", &a.model_scale);
            let s: AttackSettings = resolve(&a.common, extra)?;
            execute(&s, &out_dir(&a.common), |s, out| commands::attack(s, out, quiet))
        }
        Command::Verify(a) => {
            let mut extra = Vec::new();
            push(
                &mut extra,
                "report",
                &a.report.as_ref().map(|p| p.display().to_string()),
            );
            push(&mut extra, "gap_tol", &a.gap_tol);
            push(&mut extra, "eq_tol", &a.eq_tol);
            let s: VerifySettings = resolve(&a.common, extra)?;
            execute(&s, &out_dir(&a.common), commands::verify)
        }
        Command::Analytic(a) => {
            let s: AnalyticSettings = resolve(&a.common, Vec::new())?;
            execute(&s, &out_dir(&a.common), commands::analytic)
        }
        Command::Trace(a) => {
            let mut extra = Vec::new();
            push(&mut extra, "graph", &a.graph.as_ref().map(|p| p.display().to_string()));
            push(&mut extra, "corrupt", &a.corrupt);
            push(&mut extra, "rounds", &a.rounds);
            push(&mut extra, "eta", &a.eta);
            push(&mut extra, "dim", &a.dim);
            if a.converge {
                extra.push(("converge", "true".to_string()));
            }
            let s: TraceSettings = resolve(&a.common, extra)?;
            execute(&s, &out_dir(&a.common), commands::trace)
        }
        Command::Rerun(a) => {
            let manifest = RunManifest::read(&a.manifest)?;
            let origin = a.manifest.display().to_string();
            let dir = a.out_dir.clone().unwrap_or_else(|| {
                a.manifest
                    .parent()
                    .filter(|p| !p.as_os_str().is_empty())
                    .map(Path::to_path_buf)
                    .unwrap_or_else(|| PathBuf::from("."))
            });
            match manifest.command.as_str() {
                "simulate" => {
                    let s: SimulateSettings = from_manifest(&manifest, &origin)?;
                    execute(&s, &dir, |s, out| commands::simulate(s, out, quiet))
                }
                "attack" => {
                    let s: AttackSettings = from_manifest(&manifest, &origin)?;
                    execute(&s, &dir, |s, out| commands::attack(s, out, quiet))
                }
                "verify" => execute(
                    &from_manifest::<VerifySettings>(&manifest, &origin)?,
                    &dir,
                    commands::verify,
                ),
                "analytic" => execute(
                    &from_manifest::<AnalyticSettings>(&manifest, &origin)?,
                    &dir,
                    commands::analytic,
                ),
                "trace" => execute(
                    &from_manifest::<TraceSettings>(&manifest, &origin)?,
                    &dir,
                    commands::trace,
                ),
                other => Err(CliError::Usage(format!("{origin}: unknown command `{other}`"))),
            }
        }
    }
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(Outcome::Success) => EXIT_OK,
        Ok(Outcome::Failed(message)) => {
            let e = CliError::Verification(message);
            eprintln!("error: {e}");
            e.exit_code()
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
