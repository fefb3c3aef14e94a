//! Monte-Carlo estimate of the average information a single corrupt node
//! learns about honest nodes' gradients, per observation mode, and the
//! check of the leakage ordering `CFL >= DFL > DFL_SA >= CFL_SA`.
//!
//! Gradients are scalar `N(0, 1)` variables, one per node. For a corrupt
//! node `k` and honest node `i` the leakage terms are
//!
//! | mode   | term                                   | average over           |
//! |--------|----------------------------------------|------------------------|
//! | CFL    | `I({G_j}; G_i)`                        | `i`, weight `1/n`      |
//! | CFL_SA | `I((1/n) sum_j G_j; G_i \| G_k)`       | `(k, i)`, `1/(n(n-1))` |
//! | DFL    | `I({b_kj G_j}; G_i \| G_k)`            | `(k, i)`, `1/(n(n-1))` |
//! | DFL_SA | `I(sum_j a_kj G_j; G_i \| G_k)`        | `(k, i)`, `1/(n(n-1))` |
//!
//! Whenever the observation contains `G_i` itself the term is the
//! self-information `I(G_i; G_i)`, which the kNN estimator reports as a
//! finite, sample-size dependent value.

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::infotheory::{
    analytic_mi_cfl_sa, analytic_mi_dfl_sa, ksg_cmi, ksg_cmi_dense, ksg_mi, ksg_mi_dense, DistanceMatrix,
    EstimatorError, SampleMatrix, DEFAULT_K,
};
use crate::protocol::{Mode, Topology};
use crate::seeds::derive_seed;
use crate::topology::{edges_for_density, generate_graph, graph_density, metropolis_weights, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LeakageError {
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("mode {0} needs a graph and weight matrix")]
    MissingTopology(Mode),
    #[error("invalid experiment configuration: {0}")]
    InvalidConfig(String),
    #[error("summary line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub n_values: Vec<usize>,
    pub densities: Vec<f64>,
    /// Monte-Carlo draws per variable.
    pub samples: usize,
    pub k_nn: usize,
    pub seed: u64,
    pub modes: Vec<Mode>,
    /// Estimate the conditional terms with the conditional estimator. When
    /// false, the adversary's own term is subtracted from the aggregate and
    /// the unconditional estimator is used instead.
    pub condition_on_own: bool,
    /// Average over this many uniformly drawn corrupt nodes instead of all `n`.
    pub corrupt_subsample: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            n_values: vec![10, 20, 30, 40, 50],
            densities: vec![0.3, 0.6, 0.9],
            samples: 1000,
            k_nn: DEFAULT_K,
            seed: 0,
            modes: Mode::ALL.to_vec(),
            condition_on_own: true,
            corrupt_subsample: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), LeakageError> {
        let bad = |m: String| Err(LeakageError::InvalidConfig(m));
        if self.n_values.is_empty() {
            return bad("no node counts given".into());
        }
        if self.densities.is_empty() {
            return bad("no densities given".into());
        }
        if self.modes.is_empty() {
            return bad("no modes selected".into());
        }
        if self.samples < 100 {
            return bad(format!("need at least 100 samples, got {}", self.samples));
        }
        if self.k_nn == 0 || self.k_nn >= self.samples {
            return bad(format!("k_nn = {} is invalid for {} samples", self.k_nn, self.samples));
        }
        if self.corrupt_subsample == Some(0) {
            return bad("corrupt subsample must be at least 1".into());
        }
        for &n in &self.n_values {
            if n < 2 {
                return Err(TopologyError::TooFewNodes(n).into());
            }
            for &density in &self.densities {
                if !(density > 0.0 && density <= 1.0) {
                    return Err(TopologyError::DensityOutOfRange(density).into());
                }
                let minimum = 2.0 / n as f64;
                if density < minimum - 1e-12 || edges_for_density(n, density) < n - 1 {
                    return Err(TopologyError::InfeasibleDensity { n, density, minimum }.into());
                }
            }
        }
        Ok(())
    }
}

/// `n` independent columns of `samples` standard normal draws.
pub fn draw_gradient_samples(n: usize, samples: usize, seed: u64) -> SampleMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let columns: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..samples).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let labels = (0..n).map(|i| format!("G{i}")).collect();
    SampleMatrix::from_columns(labels, columns).expect("normal draws are finite and aligned")
}

/// Above this many samples the neighbor set of a DFL observation is searched
/// column by column instead of through an `N x N` distance matrix.
pub const DENSE_SAMPLE_LIMIT: usize = 4096;

/// How to evaluate the per-pair terms.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimationOptions {
    pub k_nn: usize,
    pub condition_on_own: bool,
    /// Corrupt nodes to average over; `None` means all of them.
    pub corrupt_nodes: Option<Vec<usize>>,
}

impl Default for EstimationOptions {
    fn default() -> Self {
        Self {
            k_nn: DEFAULT_K,
            condition_on_own: true,
            corrupt_nodes: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairLeakage {
    pub corrupt: usize,
    pub target: usize,
    /// Estimated nats.
    pub mi: f64,
    /// Gaussian closed form, `+inf` for self-information; `None` if undefined.
    pub analytic: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModeLeakage {
    pub mode: Mode,
    pub pairs: Vec<PairLeakage>,
    /// Mode-specific average in nats.
    pub average: f64,
    pub analytic_average: Option<f64>,
}

/// Self-information estimates `I(G_i; G_i)` for every node.
pub fn self_information(samples: &SampleMatrix, k_nn: usize) -> Result<Vec<f64>, LeakageError> {
    (0..samples.cols())
        .map(|i| {
            let c = [samples.column(i)];
            Ok(ksg_mi(&c, &c, k_nn)?)
        })
        .collect()
}

fn corrupt_nodes(n: usize, options: &EstimationOptions) -> Vec<usize> {
    options.corrupt_nodes.clone().unwrap_or_else(|| (0..n).collect())
}

/// `sum_j weights[j] * G_j` as a sample column.
fn weighted_sum(samples: &SampleMatrix, weights: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; samples.rows()];
    for (j, &a) in weights.iter().enumerate() {
        if a != 0.0 {
            for (o, v) in out.iter_mut().zip(samples.column(j)) {
                *o += a * v;
            }
        }
    }
    out
}

/// Estimates every `(k, i)` term of `mode` and the mode's average.
///
/// `self_info` may carry precomputed [`self_information`] values.
pub fn estimate_mode_leakage(
    mode: Mode,
    samples: &SampleMatrix,
    topology: Option<&Topology>,
    options: &EstimationOptions,
    self_info: Option<&[f64]>,
) -> Result<ModeLeakage, LeakageError> {
    let n = samples.cols();
    let k_nn = options.k_nn;
    let owned;
    let self_info = match self_info {
        Some(s) => s,
        None => {
            owned = self_information(samples, k_nn)?;
            &owned
        }
    };
    let topology = if mode.is_decentralized() {
        Some(topology.ok_or(LeakageError::MissingTopology(mode))?)
    } else {
        None
    };
    let corrupt = corrupt_nodes(n, options);

    let per_corrupt: Vec<Vec<PairLeakage>> = corrupt
        .par_iter()
        .map(|&k| corrupt_terms(mode, k, samples, topology, options, self_info))
        .collect::<Result<_, _>>()?;
    let pairs: Vec<PairLeakage> = per_corrupt.into_iter().flatten().collect();

    let average = match mode {
        Mode::Cfl => self_info.iter().sum::<f64>() / n as f64,
        _ => pairs.iter().map(|p| p.mi).sum::<f64>() / pairs.len() as f64,
    };
    let analytic_average = match mode {
        Mode::Cfl => Some(f64::INFINITY),
        _ => {
            let values: Option<Vec<f64>> = pairs.iter().map(|p| p.analytic).collect();
            values.map(|v| v.iter().sum::<f64>() / v.len() as f64)
        }
    };
    Ok(ModeLeakage {
        mode,
        pairs,
        average,
        analytic_average,
    })
}

fn corrupt_terms(
    mode: Mode,
    k: usize,
    samples: &SampleMatrix,
    topology: Option<&Topology>,
    options: &EstimationOptions,
    self_info: &[f64],
) -> Result<Vec<PairLeakage>, LeakageError> {
    let n = samples.cols();
    let k_nn = options.k_nn;
    let own = [samples.column(k)];
    let targets = (0..n).filter(move |&i| i != k);
    let mut out = Vec::with_capacity(n - 1);
    match mode {
        Mode::Cfl => {
            for i in targets {
                out.push(PairLeakage {
                    corrupt: k,
                    target: i,
                    mi: self_info[i],
                    analytic: Some(f64::INFINITY),
                });
            }
        }
        Mode::CflSa | Mode::DflSa => {
            let weights: Vec<f64> = match (mode, topology) {
                (Mode::DflSa, Some(topo)) => topo.weights.row(k).to_vec(),
                _ => vec![1.0 / n as f64; n],
            };
            let observed = if options.condition_on_own {
                weighted_sum(samples, &weights)
            } else {
                let mut stripped = weights.clone();
                stripped[k] = 0.0;
                weighted_sum(samples, &stripped)
            };
            let obs = [observed.as_slice()];
            for i in targets {
                let target = [samples.column(i)];
                let mi = if options.condition_on_own {
                    ksg_cmi(&obs, &target, &own, k_nn)?
                } else {
                    ksg_mi(&obs, &target, k_nn)?
                };
                let analytic = match (mode, topology) {
                    (Mode::DflSa, Some(topo)) => Some(analytic_mi_dfl_sa(&topo.weights, k, i)?),
                    _ => analytic_mi_cfl_sa(n).ok(),
                };
                out.push(PairLeakage {
                    corrupt: k,
                    target: i,
                    mi,
                    analytic,
                });
            }
        }
        Mode::Dfl => {
            let topo = topology.ok_or(LeakageError::MissingTopology(mode))?;
            let neighbors = topo.graph.neighbors(k);
            let seen: Vec<&[f64]> = neighbors.iter().map(|&j| samples.column(j)).collect();
            let has_outsiders = neighbors.len() < n - 1;
            let dense = (has_outsiders && samples.rows() <= DENSE_SAMPLE_LIMIT).then(|| {
                let mut cols = seen.clone();
                if options.condition_on_own {
                    cols.push(samples.column(k));
                }
                DistanceMatrix::max_norm(&cols)
            });
            for i in targets {
                let (mi, analytic) = if topo.graph.is_adjacent(k, i) {
                    (self_info[i], f64::INFINITY)
                } else {
                    let target = [samples.column(i)];
                    let mi = match (&dense, options.condition_on_own) {
                        (Some(d), true) => ksg_cmi_dense(d, &target, &own, k_nn, false)?,
                        (Some(d), false) => ksg_mi_dense(d, &target, k_nn)?,
                        (None, true) => ksg_cmi(&seen, &target, &own, k_nn)?,
                        (None, false) => ksg_mi(&seen, &target, k_nn)?,
                    };
                    (mi, 0.0)
                };
                out.push(PairLeakage {
                    corrupt: k,
                    target: i,
                    mi,
                    analytic: Some(analytic),
                });
            }
        }
    }
    Ok(out)
}

/// All modes for one `(n, density)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellReport {
    pub n: usize,
    /// Requested density.
    pub density: f64,
    pub edges: usize,
    /// Realized `2m / (n(n-1))`.
    pub graph_density: f64,
    /// `I_CFL`, the normalizer of the relative values.
    pub cfl_reference: f64,
    pub modes: Vec<ModeLeakage>,
}

impl CellReport {
    pub fn mode(&self, mode: Mode) -> Option<&ModeLeakage> {
        self.modes.iter().find(|m| m.mode == mode)
    }

    pub fn relative(&self, mode: Mode) -> Option<f64> {
        self.mode(mode).map(|m| m.average / self.cfl_reference)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    pub config: ExperimentConfig,
    pub cells: Vec<CellReport>,
}

fn fmt_value(v: f64) -> String {
    if v.is_infinite() {
        if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    } else {
        format!("{v:.10}")
    }
}

fn fmt_optional(v: Option<f64>) -> String {
    v.map(fmt_value).unwrap_or_default()
}

impl LeakageReport {
    pub fn cell(&self, n: usize, density: f64) -> Option<&CellReport> {
        self.cells.iter().find(|c| c.n == n && c.density == density)
    }

    /// Rows `mode,n,density,mi_nats,mi_analytic,relative`.
    pub fn summary(&self) -> SummaryTable {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for m in &cell.modes {
                rows.push(SummaryRow {
                    mode: m.mode,
                    n: cell.n,
                    density: cell.density,
                    mi: m.average,
                    analytic: m.analytic_average,
                    relative: Some(m.average / cell.cfl_reference),
                });
            }
        }
        SummaryTable { rows }
    }

    pub fn summary_csv(&self) -> String {
        self.summary().to_csv()
    }

    /// Rows `mode,n,density,k,i,mi_nats,mi_analytic,relative`; `relative`
    /// divides the pair term by the cell's `I_CFL`.
    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("mode,n,density,k,i,mi_nats,mi_analytic,relative\n");
        for cell in &self.cells {
            for m in &cell.modes {
                for p in &m.pairs {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{},{},{},{}",
                        m.mode,
                        cell.n,
                        cell.density,
                        p.corrupt,
                        p.target,
                        fmt_value(p.mi),
                        fmt_optional(p.analytic),
                        fmt_value(p.mi / cell.cfl_reference)
                    );
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub mode: Mode,
    pub n: usize,
    pub density: f64,
    pub mi: f64,
    pub analytic: Option<f64>,
    pub relative: Option<f64>,
}

/// Per-`(mode, n, density)` averages; what the verifier and plots consume.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub const SUMMARY_HEADER: &str = "mode,n,density,mi_nats,mi_analytic,relative";

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out = format!("{SUMMARY_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.mode,
                r.n,
                r.density,
                fmt_value(r.mi),
                fmt_optional(r.analytic),
                fmt_optional(r.relative)
            );
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, LeakageError> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        match lines.next() {
            Some((_, header)) if header.trim() == SUMMARY_HEADER => {}
            Some((line, header)) => {
                return Err(LeakageError::Parse {
                    line,
                    message: format!("expected header `{SUMMARY_HEADER}`, found `{header}`"),
                })
            }
            None => {
                return Err(LeakageError::Parse {
                    line: 1,
                    message: "empty file".into(),
                })
            }
        }
        let mut rows = Vec::new();
        for (line, body) in lines {
            if body.trim().is_empty() {
                continue;
            }
            let err = |message: String| LeakageError::Parse { line, message };
            let fields: Vec<&str> = body.split(',').collect();
            if fields.len() != 6 {
                return Err(err(format!("expected 6 fields, found {}", fields.len())));
            }
            let number = |s: &str, what: &str| -> Result<f64, LeakageError> {
                s.trim()
                    .parse::<f64>()
                    .map_err(|_| err(format!("invalid {what} `{s}`")))
            };
            let optional = |s: &str, what: &str| -> Result<Option<f64>, LeakageError> {
                if s.trim().is_empty() {
                    Ok(None)
                } else {
                    number(s, what).map(Some)
                }
            };
            rows.push(SummaryRow {
                mode: fields[0].parse().map_err(|e| err(format!("{e}")))?,
                n: fields[1]
                    .trim()
                    .parse()
                    .map_err(|_| err(format!("invalid n `{}`", fields[1])))?,
                density: number(fields[2], "density")?,
                mi: number(fields[3], "mi_nats")?,
                analytic: optional(fields[4], "mi_analytic")?,
                relative: optional(fields[5], "relative")?,
            });
        }
        Ok(Self { rows })
    }

    pub fn get(&self, mode: Mode, n: usize, density: f64) -> Option<&SummaryRow> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.n == n && r.density == density)
    }

    /// Distinct `(n, density)` pairs in first-seen order.
    pub fn cells(&self) -> Vec<(usize, f64)> {
        let mut out: Vec<(usize, f64)> = Vec::new();
        for r in &self.rows {
            if !out.iter().any(|&(n, d)| n == r.n && d == r.density) {
                out.push((r.n, r.density));
            }
        }
        out
    }
}

/// Seed of the gradient draws for node count `n`; shared by every density
/// and mode so that cells differ only in what the adversary observes.
pub fn sample_seed(seed: u64, n: usize) -> u64 {
    derive_seed(seed, &[0x5a3b, n as u64])
}

/// Seed of the graph for cell `(n, density)`.
pub fn graph_seed(seed: u64, n: usize, density: f64) -> u64 {
    derive_seed(seed, &[0x6a4f, n as u64, density.to_bits()])
}

/// Full sweep over `n_values x densities x modes`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<LeakageReport, LeakageError> {
    run_experiment_with_progress(config, |_| {})
}

/// [`run_experiment`] with a callback after each finished cell.
pub fn run_experiment_with_progress(
    config: &ExperimentConfig,
    mut progress: impl FnMut(&CellReport),
) -> Result<LeakageReport, LeakageError> {
    config.validate()?;
    let mut cells = Vec::new();
    for &n in &config.n_values {
        let samples = draw_gradient_samples(n, config.samples, sample_seed(config.seed, n));
        let self_info = self_information(&samples, config.k_nn)?;
        let corrupt = config.corrupt_subsample.filter(|&c| c < n).map(|count| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, &[0xc0, n as u64]));
            let mut nodes: Vec<usize> = (0..n).collect();
            for i in 0..count {
                let j = rng.random_range(i..n);
                nodes.swap(i, j);
            }
            let mut picked = nodes[..count].to_vec();
            picked.sort_unstable();
            picked
        });
        let options = EstimationOptions {
            k_nn: config.k_nn,
            condition_on_own: config.condition_on_own,
            corrupt_nodes: corrupt,
        };
        // Centralized modes do not depend on the graph; estimate once per n.
        let mut centralized: Vec<ModeLeakage> = Vec::new();
        for &mode in config.modes.iter().filter(|m| !m.is_decentralized()) {
            centralized.push(estimate_mode_leakage(mode, &samples, None, &options, Some(&self_info))?);
        }
        let cfl_reference = self_info.iter().sum::<f64>() / n as f64;
        for &density in &config.densities {
            let graph = generate_graph(n, density, graph_seed(config.seed, n, density))?;
            let weights = metropolis_weights(&graph)?;
            let topology = Topology { graph, weights };
            let mut modes = Vec::with_capacity(config.modes.len());
            for &mode in &config.modes {
                if mode.is_decentralized() {
                    modes.push(estimate_mode_leakage(
                        mode,
                        &samples,
                        Some(&topology),
                        &options,
                        Some(&self_info),
                    )?);
                } else {
                    let found = centralized.iter().find(|m| m.mode == mode).expect("estimated above");
                    modes.push(found.clone());
                }
            }
            let cell = CellReport {
                n,
                density,
                edges: topology.graph.edge_count(),
                graph_density: graph_density(&topology.graph),
                cfl_reference,
                modes,
            };
            progress(&cell);
            cells.push(cell);
        }
    }
    Ok(LeakageReport {
        config: config.clone(),
        cells,
    })
}

/// Closed-form counterpart of [`run_experiment`]; no sampling. Self-information
/// is infinite, so `CFL` and neighbor `DFL` terms are `+inf` and relative
/// values are the limits `1` (CFL), the graph density (DFL) and `0` (SA modes).
pub fn run_analytic(config: &ExperimentConfig) -> Result<LeakageReport, LeakageError> {
    config.validate()?;
    let mut cells = Vec::new();
    for &n in &config.n_values {
        for &density in &config.densities {
            let needs_graph = config.modes.iter().any(|m| m.is_decentralized());
            let topology = if needs_graph {
                let graph = generate_graph(n, density, graph_seed(config.seed, n, density))?;
                let weights = metropolis_weights(&graph)?;
                Some(Topology { graph, weights })
            } else {
                None
            };
            let mut modes = Vec::new();
            for &mode in &config.modes {
                let average = match mode {
                    Mode::Cfl => f64::INFINITY,
                    Mode::CflSa => analytic_mi_cfl_sa(n)?,
                    Mode::Dfl => f64::INFINITY,
                    Mode::DflSa => {
                        let topo = topology.as_ref().expect("graph built for decentralized modes");
                        crate::infotheory::analytic_mi_dfl_sa_average(&topo.weights)
                    }
                };
                modes.push(ModeLeakage {
                    mode,
                    pairs: Vec::new(),
                    average,
                    analytic_average: Some(average),
                });
            }
            let (edges, realized) = topology
                .as_ref()
                .map(|t| (t.graph.edge_count(), graph_density(&t.graph)))
                .unwrap_or((edges_for_density(n, density), density));
            cells.push(CellReport {
                n,
                density,
                edges,
                graph_density: realized,
                cfl_reference: f64::INFINITY,
                modes,
            });
        }
    }
    Ok(LeakageReport {
        config: config.clone(),
        cells,
    })
}

impl LeakageReport {
    /// Summary of an analytic report, with the limit ratios in `relative`.
    pub fn analytic_summary(&self) -> SummaryTable {
        let mut rows = Vec::new();
        for cell in &self.cells {
            for m in &cell.modes {
                let relative = match m.mode {
                    Mode::Cfl => 1.0,
                    Mode::Dfl => cell.graph_density,
                    Mode::CflSa | Mode::DflSa => {
                        if m.average.is_finite() {
                            0.0
                        } else {
                            f64::NAN
                        }
                    }
                };
                rows.push(SummaryRow {
                    mode: m.mode,
                    n: cell.n,
                    density: cell.density,
                    mi: m.average,
                    analytic: m.analytic_average,
                    relative: relative.is_finite().then_some(relative),
                });
            }
        }
        SummaryTable { rows }
    }
}

/// One link of the ordering.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Relation {
    /// `I_CFL >= I_DFL`
    CflAtLeastDfl,
    /// `I_DFL > I_DFL_SA`
    DflAboveDflSa,
    /// `I_DFL_SA >= I_CFL_SA`
    DflSaAtLeastCflSa,
    /// `I_CFL - I_DFL > gap` on non-complete graphs
    CflStrictlyAboveDfl,
    /// `I_DFL_SA - I_CFL_SA > gap` on non-complete graphs
    DflSaStrictlyAboveCflSa,
    /// `|I_CFL - I_DFL| < eq` on the complete graph
    CflEqualsDfl,
    /// `|I_DFL_SA - I_CFL_SA| < eq` on the complete graph
    DflSaEqualsCflSa,
}

impl Relation {
    pub fn describe(self) -> &'static str {
        match self {
            Relation::CflAtLeastDfl => "I_CFL >= I_DFL",
            Relation::DflAboveDflSa => "I_DFL > I_DFL_SA",
            Relation::DflSaAtLeastCflSa => "I_DFL_SA >= I_CFL_SA",
            Relation::CflStrictlyAboveDfl => "I_CFL - I_DFL > gap (non-complete graph)",
            Relation::DflSaStrictlyAboveCflSa => "I_DFL_SA - I_CFL_SA > gap (non-complete graph)",
            Relation::CflEqualsDfl => "|I_CFL - I_DFL| < eq (complete graph)",
            Relation::DflSaEqualsCflSa => "|I_DFL_SA - I_CFL_SA| < eq (complete graph)",
        }
    }
}

/// Tolerances of the ordering check, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainTolerance {
    /// Allowed violation of the three ordering relations.
    pub noise: f64,
    /// Required gap of the first and third relations on non-complete graphs.
    pub strict_gap: f64,
    /// Allowed difference of the first and third relations on complete graphs.
    pub equality: f64,
}

impl ChainTolerance {
    pub fn uniform(tol: f64) -> Self {
        Self {
            noise: tol,
            strict_gap: tol,
            equality: tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RelationCheck {
    pub relation: Relation,
    /// Left side minus right side.
    pub gap: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellVerdict {
    pub n: usize,
    pub density: f64,
    pub complete: bool,
    pub checks: Vec<RelationCheck>,
}

impl CellVerdict {
    pub fn holds(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }

    pub fn violations(&self) -> impl Iterator<Item = &RelationCheck> {
        self.checks.iter().filter(|c| !c.holds)
    }

    pub fn check(&self, relation: Relation) -> Option<&RelationCheck> {
        self.checks.iter().find(|c| c.relation == relation)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChainVerdict {
    pub cells: Vec<CellVerdict>,
    /// Cells lacking one of the four modes.
    pub incomplete: Vec<(usize, f64)>,
}

impl ChainVerdict {
    pub fn holds(&self) -> bool {
        self.incomplete.is_empty() && !self.cells.is_empty() && self.cells.iter().all(CellVerdict::holds)
    }
}

/// Checks `I_CFL >= I_DFL > I_DFL_SA >= I_CFL_SA` in every `(n, density)`
/// cell, near-equality of the outer relations at density 1 and a gap on
/// sparser graphs. The middle relation needs more than two nodes and is
/// skipped for `n <= 2`.
pub fn verify_proposition1(table: &SummaryTable, tol: &ChainTolerance) -> ChainVerdict {
    let mut cells = Vec::new();
    let mut incomplete = Vec::new();
    for (n, density) in table.cells() {
        let get = |m: Mode| table.get(m, n, density).map(|r| r.mi);
        let (Some(cfl), Some(cfl_sa), Some(dfl), Some(dfl_sa)) =
            (get(Mode::Cfl), get(Mode::CflSa), get(Mode::Dfl), get(Mode::DflSa))
        else {
            incomplete.push((n, density));
            continue;
        };
        let complete = density >= 1.0 - 1e-12;
        let mut checks = vec![RelationCheck {
            relation: Relation::CflAtLeastDfl,
            gap: cfl - dfl,
            holds: cfl - dfl >= -tol.noise,
        }];
        if n > 2 {
            checks.push(RelationCheck {
                relation: Relation::DflAboveDflSa,
                gap: dfl - dfl_sa,
                holds: dfl - dfl_sa > 0.0,
            });
        }
        checks.push(RelationCheck {
            relation: Relation::DflSaAtLeastCflSa,
            gap: dfl_sa - cfl_sa,
            holds: dfl_sa - cfl_sa >= -tol.noise,
        });
        if complete {
            checks.push(RelationCheck {
                relation: Relation::CflEqualsDfl,
                gap: cfl - dfl,
                holds: (cfl - dfl).abs() < tol.equality,
            });
            checks.push(RelationCheck {
                relation: Relation::DflSaEqualsCflSa,
                gap: dfl_sa - cfl_sa,
                holds: (dfl_sa - cfl_sa).abs() < tol.equality,
            });
        } else {
            checks.push(RelationCheck {
                relation: Relation::CflStrictlyAboveDfl,
                gap: cfl - dfl,
                holds: cfl - dfl > tol.strict_gap,
            });
            checks.push(RelationCheck {
                relation: Relation::DflSaStrictlyAboveCflSa,
                gap: dfl_sa - cfl_sa,
                holds: dfl_sa - cfl_sa > tol.strict_gap,
            });
        }
        cells.push(CellVerdict {
            n,
            density,
            complete,
            checks,
        });
    }
    ChainVerdict { cells, incomplete }
}
