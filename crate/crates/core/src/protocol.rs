//! FedSGD and D-FedSGD rounds, and what a single honest-but-curious node
//! observes under each of the four aggregation modes.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::topology::{Graph, WeightMatrix};

const STOCHASTIC_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("step size must be positive and finite, got {0}")]
    InvalidStepSize(f64),
    #[error("FedSGD needs every node to start the round from the same global model")]
    DivergentStates,
    #[error("no nodes supplied")]
    NoNodes,
    #[error("weight matrix is not a valid mixing matrix: {0}")]
    InvalidWeights(String),
    #[error("mode {0} needs a graph and weight matrix")]
    MissingTopology(Mode),
    #[error("corrupt node {corrupt} is outside 0..{n}")]
    CorruptOutOfRange { corrupt: usize, n: usize },
    #[error("at least one round is required")]
    NoRounds,
    #[error("gradient contains a non-finite value")]
    NonFinite,
    #[error("unknown mode `{0}` (expected cfl, cfl_sa, dfl or dfl_sa)")]
    UnknownMode(String),
}

/// One of the four observation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Cfl,
    CflSa,
    Dfl,
    DflSa,
}

impl Mode {
    pub const ALL: [Mode; 4] = [Mode::Cfl, Mode::CflSa, Mode::Dfl, Mode::DflSa];

    pub fn is_decentralized(self) -> bool {
        matches!(self, Mode::Dfl | Mode::DflSa)
    }

    pub fn secure_aggregation(self) -> bool {
        matches!(self, Mode::CflSa | Mode::DflSa)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Cfl => "cfl",
            Mode::CflSa => "cfl_sa",
            Mode::Dfl => "dfl",
            Mode::DflSa => "dfl_sa",
        }
    }

    /// Human-readable name, e.g. `DFL w/ SA`.
    pub fn title(self) -> &'static str {
        match self {
            Mode::Cfl => "CFL w/o SA",
            Mode::CflSa => "CFL w/ SA",
            Mode::Dfl => "DFL w/o SA",
            Mode::DflSa => "DFL w/ SA",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Mode {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "cfl" => Ok(Mode::Cfl),
            "cfl_sa" => Ok(Mode::CflSa),
            "dfl" => Ok(Mode::Dfl),
            "dfl_sa" => Ok(Mode::DflSa),
            _ => Err(ProtocolError::UnknownMode(s.to_string())),
        }
    }
}

/// Graph and mixing matrix of a decentralized network.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub graph: Graph,
    pub weights: WeightMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientVector {
    pub owner: usize,
    pub values: Vec<f64>,
}

impl GradientVector {
    pub fn new(owner: usize, values: Vec<f64>) -> Self {
        Self { owner, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    pub weights: Vec<f64>,
    pub iteration: u64,
}

impl ModelState {
    pub fn new(weights: Vec<f64>) -> Self {
        Self { weights, iteration: 0 }
    }
}

fn check_gradients(grads: &[GradientVector]) -> Result<usize, ProtocolError> {
    let first = grads.first().ok_or(ProtocolError::NoNodes)?;
    let d = first.values.len();
    for g in grads {
        if g.values.len() != d {
            return Err(ProtocolError::DimensionMismatch {
                expected: d,
                actual: g.values.len(),
            });
        }
        if g.values.iter().any(|v| !v.is_finite()) {
            return Err(ProtocolError::NonFinite);
        }
    }
    Ok(d)
}

/// Server update `w <- w - (eta / n) sum_i g_i`.
pub fn fedsgd_round(states: &[ModelState], grads: &[GradientVector], eta: f64) -> Result<ModelState, ProtocolError> {
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(ProtocolError::InvalidStepSize(eta));
    }
    let global = states.first().ok_or(ProtocolError::NoNodes)?;
    if states.iter().any(|s| s != global) {
        return Err(ProtocolError::DivergentStates);
    }
    let d = check_gradients(grads)?;
    if d != global.weights.len() {
        return Err(ProtocolError::DimensionMismatch {
            expected: global.weights.len(),
            actual: d,
        });
    }
    let scale = eta / grads.len() as f64;
    let mut weights = global.weights.clone();
    for g in grads {
        for (w, v) in weights.iter_mut().zip(&g.values) {
            *w -= scale * v;
        }
    }
    Ok(ModelState {
        weights,
        iteration: global.iteration + 1,
    })
}

fn check_mixing(w: &WeightMatrix, n: usize) -> Result<(), ProtocolError> {
    if w.size() != n {
        return Err(ProtocolError::InvalidWeights(format!(
            "matrix is {0}x{0} but {n} nodes were supplied",
            w.size()
        )));
    }
    for k in 0..n {
        let row: f64 = w.row(k).iter().sum();
        let col: f64 = (0..n).map(|j| w.get(j, k)).sum();
        if !row.is_finite() || (row - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(ProtocolError::InvalidWeights(format!("row {k} sums to {row}")));
        }
        if (col - 1.0).abs() > STOCHASTIC_TOLERANCE {
            return Err(ProtocolError::InvalidWeights(format!("column {k} sums to {col}")));
        }
    }
    Ok(())
}

/// One gossip step `g <- A g` on the stacked per-node vectors.
pub fn gossip_round(grads: &[GradientVector], w: &WeightMatrix) -> Result<Vec<GradientVector>, ProtocolError> {
    let d = check_gradients(grads)?;
    let n = grads.len();
    check_mixing(w, n)?;
    Ok((0..n)
        .map(|k| {
            let mut values = vec![0.0; d];
            for (j, g) in grads.iter().enumerate() {
                let a = w.get(k, j);
                if a != 0.0 {
                    for (o, v) in values.iter_mut().zip(&g.values) {
                        *o += a * v;
                    }
                }
            }
            GradientVector {
                owner: grads[k].owner,
                values,
            }
        })
        .collect())
}

/// Repeats [`gossip_round`] until every node is within `tol` (max-norm) of
/// the exact average, or `max_rounds` is reached. Returns the rounds used.
pub fn gossip_to_consensus(
    grads: &[GradientVector],
    w: &WeightMatrix,
    tol: f64,
    max_rounds: usize,
) -> Result<(Vec<GradientVector>, usize), ProtocolError> {
    let d = check_gradients(grads)?;
    let mean = average(grads, d);
    let spread = |gs: &[GradientVector]| {
        gs.iter()
            .flat_map(|g| g.values.iter().zip(&mean).map(|(a, b)| (a - b).abs()))
            .fold(0.0, f64::max)
    };
    let mut current = grads.to_vec();
    let mut rounds = 0;
    while rounds < max_rounds && spread(&current) >= tol {
        current = gossip_round(&current, w)?;
        rounds += 1;
    }
    Ok((current, rounds))
}

fn average(grads: &[GradientVector], d: usize) -> Vec<f64> {
    let mut mean = vec![0.0; d];
    for g in grads {
        for (m, v) in mean.iter_mut().zip(&g.values) {
            *m += v;
        }
    }
    let scale = 1.0 / grads.len() as f64;
    mean.iter_mut().for_each(|m| *m *= scale);
    mean
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObservedLabel {
    /// Another node's raw gradient.
    Gradient(usize),
    /// The adversary's own gradient.
    Own(usize),
    /// `(1/n) sum_j G_j` from the server.
    Average,
    /// `sum_j a_kj G_j` from the adversary's neighborhood.
    WeightedAggregate,
}

impl fmt::Display for ObservedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObservedLabel::Gradient(j) => write!(f, "g{j}"),
            ObservedLabel::Own(k) => write!(f, "own{k}"),
            ObservedLabel::Average => f.write_str("average"),
            ObservedLabel::WeightedAggregate => f.write_str("weighted_aggregate"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedItem {
    pub label: ObservedLabel,
    pub values: Vec<f64>,
}

/// Everything node `corrupt_node` sees in one round.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub mode: Mode,
    pub corrupt_node: usize,
    pub items: Vec<ObservedItem>,
}

/// Builds the adversary's view:
///
/// * `Cfl`: every node's gradient.
/// * `CflSa`: the server average only.
/// * `Dfl`: neighbors' gradients plus its own.
/// * `DflSa`: `sum_j a_kj G_j` plus its own.
pub fn extract_observation(
    mode: Mode,
    corrupt_node: usize,
    grads: &[GradientVector],
    topology: Option<&Topology>,
) -> Result<Observation, ProtocolError> {
    let d = check_gradients(grads)?;
    let n = grads.len();
    if corrupt_node >= n {
        return Err(ProtocolError::CorruptOutOfRange {
            corrupt: corrupt_node,
            n,
        });
    }
    let own = || ObservedItem {
        label: ObservedLabel::Own(corrupt_node),
        values: grads[corrupt_node].values.clone(),
    };
    let items = match mode {
        Mode::Cfl => grads
            .iter()
            .enumerate()
            .map(|(j, g)| ObservedItem {
                label: ObservedLabel::Gradient(j),
                values: g.values.clone(),
            })
            .collect(),
        Mode::CflSa => vec![ObservedItem {
            label: ObservedLabel::Average,
            values: average(grads, d),
        }],
        Mode::Dfl => {
            let topo = topology.ok_or(ProtocolError::MissingTopology(mode))?;
            check_topology(topo, n)?;
            let mut items: Vec<ObservedItem> = topo
                .graph
                .neighbors(corrupt_node)
                .into_iter()
                .map(|j| ObservedItem {
                    label: ObservedLabel::Gradient(j),
                    values: grads[j].values.clone(),
                })
                .collect();
            items.push(own());
            items
        }
        Mode::DflSa => {
            let topo = topology.ok_or(ProtocolError::MissingTopology(mode))?;
            check_topology(topo, n)?;
            let mut values = vec![0.0; d];
            for (j, g) in grads.iter().enumerate() {
                let a = topo.weights.get(corrupt_node, j);
                if a != 0.0 {
                    for (o, v) in values.iter_mut().zip(&g.values) {
                        *o += a * v;
                    }
                }
            }
            vec![
                ObservedItem {
                    label: ObservedLabel::WeightedAggregate,
                    values,
                },
                own(),
            ]
        }
    };
    Ok(Observation {
        mode,
        corrupt_node,
        items,
    })
}

fn check_topology(topo: &Topology, n: usize) -> Result<(), ProtocolError> {
    if topo.graph.node_count() != n || topo.weights.size() != n {
        return Err(ProtocolError::InvalidWeights(format!(
            "topology has {} nodes, round has {n}",
            topo.graph.node_count()
        )));
    }
    Ok(())
}

/// A model whose local gradient a node can compute from its private data.
pub trait LocalModel {
    type Data;

    fn dim(&self) -> usize;
    fn gradient(&self, params: &[f64], data: &Self::Data) -> Vec<f64>;
    fn loss(&self, params: &[f64], data: &Self::Data) -> f64;
}

/// `0.5 * sum_j c_j (w_j - t_j)^2` with per-node target `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticModel {
    pub curvature: Vec<f64>,
}

impl LocalModel for QuadraticModel {
    type Data = Vec<f64>;

    fn dim(&self) -> usize {
        self.curvature.len()
    }

    fn gradient(&self, params: &[f64], target: &Self::Data) -> Vec<f64> {
        params
            .iter()
            .zip(target)
            .zip(&self.curvature)
            .map(|((w, t), c)| c * (w - t))
            .collect()
    }

    fn loss(&self, params: &[f64], target: &Self::Data) -> f64 {
        params
            .iter()
            .zip(target)
            .zip(&self.curvature)
            .map(|((w, t), c)| 0.5 * c * (w - t).powi(2))
            .sum()
    }
}

/// How many gossip steps D-FedSGD runs per learning round.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GossipDepth {
    /// One multiplication by the mixing matrix.
    Single,
    /// Iterate until every node is within `tol` of the exact average.
    Converge { tol: f64, max_rounds: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolConfig {
    pub mode: Mode,
    pub corrupt_node: usize,
    pub rounds: usize,
    pub eta: f64,
    pub depth: GossipDepth,
}

/// Per-round node states (after the update) and the adversary's observation
/// of that round's gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub mode: Mode,
    pub initial: ModelState,
    pub states: Vec<Vec<ModelState>>,
    pub observations: Vec<Observation>,
}

impl Trace {
    pub fn final_states(&self) -> &[ModelState] {
        self.states.last().map_or(&[], Vec::as_slice)
    }

    /// `round,node,index,value` rows, round 0 being the initial model.
    pub fn states_csv(&self) -> String {
        let mut out = String::from("round,node,index,value\n");
        let nodes = self.states.first().map_or(0, Vec::len);
        for node in 0..nodes {
            for (idx, v) in self.initial.weights.iter().enumerate() {
                out.push_str(&format!("0,{node},{idx},{v}\n"));
            }
        }
        for (r, states) in self.states.iter().enumerate() {
            for (node, s) in states.iter().enumerate() {
                for (idx, v) in s.weights.iter().enumerate() {
                    out.push_str(&format!("{},{node},{idx},{v}\n", r + 1));
                }
            }
        }
        out
    }

    /// `round,mode,corrupt_node,item,index,value` rows.
    pub fn observations_csv(&self) -> String {
        let mut out = String::from("round,mode,corrupt_node,item,index,value\n");
        for (r, obs) in self.observations.iter().enumerate() {
            for item in &obs.items {
                for (idx, v) in item.values.iter().enumerate() {
                    out.push_str(&format!(
                        "{},{},{},{},{idx},{v}\n",
                        r + 1,
                        obs.mode,
                        obs.corrupt_node,
                        item.label
                    ));
                }
            }
        }
        out
    }
}

/// Runs `rounds` of FedSGD (centralized modes) or D-FedSGD (decentralized
/// modes) from `initial`, recording the corrupt node's view every round.
pub fn run_protocol<M: LocalModel>(
    config: &ProtocolConfig,
    model: &M,
    datasets: &[M::Data],
    initial: &ModelState,
    topology: Option<&Topology>,
) -> Result<Trace, ProtocolError> {
    let n = datasets.len();
    if n == 0 {
        return Err(ProtocolError::NoNodes);
    }
    if config.rounds == 0 {
        return Err(ProtocolError::NoRounds);
    }
    if !(config.eta > 0.0 && config.eta.is_finite()) {
        return Err(ProtocolError::InvalidStepSize(config.eta));
    }
    if initial.weights.len() != model.dim() {
        return Err(ProtocolError::DimensionMismatch {
            expected: model.dim(),
            actual: initial.weights.len(),
        });
    }
    let topology = if config.mode.is_decentralized() {
        let topo = topology.ok_or(ProtocolError::MissingTopology(config.mode))?;
        check_topology(topo, n)?;
        Some(topo)
    } else {
        None
    };

    let mut current = vec![initial.clone(); n];
    let mut states = Vec::with_capacity(config.rounds);
    let mut observations = Vec::with_capacity(config.rounds);
    for _ in 0..config.rounds {
        let grads: Vec<GradientVector> = current
            .iter()
            .zip(datasets)
            .enumerate()
            .map(|(i, (s, data))| GradientVector::new(i, model.gradient(&s.weights, data)))
            .collect();
        observations.push(extract_observation(config.mode, config.corrupt_node, &grads, topology)?);
        current = match topology {
            None => vec![fedsgd_round(&current, &grads, config.eta)?; n],
            Some(topo) => {
                let mixed = match config.depth {
                    GossipDepth::Single => gossip_round(&grads, &topo.weights)?,
                    GossipDepth::Converge { tol, max_rounds } => {
                        gossip_to_consensus(&grads, &topo.weights, tol, max_rounds)?.0
                    }
                };
                current
                    .iter()
                    .zip(&mixed)
                    .map(|(s, g)| ModelState {
                        weights: s
                            .weights
                            .iter()
                            .zip(&g.values)
                            .map(|(w, v)| w - config.eta * v)
                            .collect(),
                        iteration: s.iteration + 1,
                    })
                    .collect()
            }
        };
        states.push(current.clone());
    }
    Ok(Trace {
        mode: config.mode,
        initial: initial.clone(),
        states,
        observations,
    })
}
