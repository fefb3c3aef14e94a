//! Gradient inversion on a linear-softmax classifier over small synthetic
//! grayscale images, scored with SSIM.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use thiserror::Error;

use crate::protocol::{LocalModel, Mode, Topology};
use crate::seeds::derive_seed;
use crate::topology::{generate_graph, graph_density, metropolis_weights, TopologyError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("pixel {index} = {value} is outside [0, 1]")]
    PixelOutOfRange { index: usize, value: f64 },
    #[error("label {label} is outside 0..{classes}")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("gradient-matching loss became non-finite at iteration {iteration}")]
    NonFiniteLoss { iteration: usize },
    #[error("the attack needs at least 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("corrupt node {corrupt} is outside 0..{n}")]
    CorruptOutOfRange { corrupt: usize, n: usize },
    #[error("mode {0} needs a graph and weight matrix")]
    MissingTopology(Mode),
    #[error("topology has {actual} nodes, experiment has {expected}")]
    TopologySize { expected: usize, actual: usize },
}

/// Grayscale image with pixels in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<f64>,
    pub label: usize,
}

impl ToyImage {
    pub fn new(height: usize, width: usize, pixels: Vec<f64>, label: usize) -> Result<Self, AttackError> {
        if pixels.len() != height * width {
            return Err(AttackError::DimensionMismatch {
                expected: height * width,
                actual: pixels.len(),
            });
        }
        if let Some((index, &value)) = pixels.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(AttackError::PixelOutOfRange { index, value });
        }
        Ok(Self {
            height,
            width,
            pixels,
            label,
        })
    }

    /// Portable graymap, plain (P2) encoding with maxval 255.
    pub fn to_pgm(&self) -> String {
        let mut out = format!("P2\n{} {}\n255\n", self.width, self.height);
        for row in self.pixels.chunks(self.width) {
            let line: Vec<String> = row.iter().map(|v| ((v * 255.0).round() as u8).to_string()).collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Linear-softmax classifier `p = softmax(W x + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    classes: usize,
    features: usize,
    /// `classes x features`, row-major.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl ToyModel {
    pub fn new(classes: usize, features: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self, AttackError> {
        if weights.len() != classes * features {
            return Err(AttackError::DimensionMismatch {
                expected: classes * features,
                actual: weights.len(),
            });
        }
        if bias.len() != classes {
            return Err(AttackError::DimensionMismatch {
                expected: classes,
                actual: bias.len(),
            });
        }
        Ok(Self {
            classes,
            features,
            weights,
            bias,
        })
    }

    /// Entries drawn from `N(0, scale^2)`.
    pub fn random(classes: usize, features: usize, scale: f64, rng: &mut impl Rng) -> Self {
        let mut draw =
            |len: usize| -> Vec<f64> { (0..len).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect() };
        let weights = draw(classes * features);
        let bias = draw(classes);
        Self {
            classes,
            features,
            weights,
            bias,
        }
    }

    /// Rebuilds a model from a flat parameter vector (`W` then `b`).
    pub fn from_parameters(classes: usize, features: usize, params: &[f64]) -> Result<Self, AttackError> {
        let split = classes * features;
        if params.len() != split + classes {
            return Err(AttackError::DimensionMismatch {
                expected: split + classes,
                actual: params.len(),
            });
        }
        Self::new(classes, features, params[..split].to_vec(), params[split..].to_vec())
    }

    pub fn parameters(&self) -> Vec<f64> {
        let mut p = self.weights.clone();
        p.extend_from_slice(&self.bias);
        p
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn features(&self) -> usize {
        self.features
    }

    pub fn parameter_count(&self) -> usize {
        self.classes * (self.features + 1)
    }

    pub fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let logits: Vec<f64> = (0..self.classes)
            .map(|c| {
                let row = &self.weights[c * self.features..(c + 1) * self.features];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c]
            })
            .collect();
        softmax(&logits)
    }

    /// Cross-entropy of the true label.
    pub fn loss(&self, x: &[f64], label: usize) -> f64 {
        -self.probabilities(x)[label].max(f64::MIN_POSITIVE).ln()
    }

    /// Exact gradient of the cross-entropy: `(p - e_y) x^T` then `p - e_y`.
    pub fn gradient(&self, x: &[f64], label: usize) -> Vec<f64> {
        let mut delta = self.probabilities(x);
        delta[label] -= 1.0;
        let mut grad = Vec::with_capacity(self.parameter_count());
        for &d in &delta {
            grad.extend(x.iter().map(|v| d * v));
        }
        grad.extend_from_slice(&delta);
        grad
    }

    fn check_image(&self, img: &ToyImage) -> Result<(), AttackError> {
        if img.pixels.len() != self.features {
            return Err(AttackError::DimensionMismatch {
                expected: self.features,
                actual: img.pixels.len(),
            });
        }
        if img.label >= self.classes {
            return Err(AttackError::LabelOutOfRange {
                label: img.label,
                classes: self.classes,
            });
        }
        Ok(())
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gradient of the cross-entropy loss at one image, flattened as `(dW, db)`.
pub fn toy_gradient(model: &ToyModel, img: &ToyImage) -> Result<Vec<f64>, AttackError> {
    model.check_image(img)?;
    Ok(model.gradient(&img.pixels, img.label))
}

/// Linear-softmax model trained on batches of images; parameters are `(W, b)` flattened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SoftmaxClassifier {
    pub classes: usize,
    pub features: usize,
}

impl LocalModel for SoftmaxClassifier {
    type Data = Vec<ToyImage>;

    fn dim(&self) -> usize {
        self.classes * (self.features + 1)
    }

    fn gradient(&self, params: &[f64], data: &Self::Data) -> Vec<f64> {
        let model = ToyModel::from_parameters(self.classes, self.features, params)
            .expect("parameter vector length checked by the protocol");
        let mut total = vec![0.0; self.dim()];
        for img in data {
            for (t, g) in total.iter_mut().zip(model.gradient(&img.pixels, img.label)) {
                *t += g;
            }
        }
        let scale = 1.0 / data.len().max(1) as f64;
        total.iter_mut().for_each(|t| *t *= scale);
        total
    }

    fn loss(&self, params: &[f64], data: &Self::Data) -> f64 {
        let model = ToyModel::from_parameters(self.classes, self.features, params)
            .expect("parameter vector length checked by the protocol");
        data.iter().map(|img| model.loss(&img.pixels, img.label)).sum::<f64>() / data.len().max(1) as f64
    }
}

/// Exact input recovery for this model class: any row `c` of `dW` with
/// `db_c != 0` equals `db_c * x`. Uses the row with the largest `|db_c|`.
pub fn closed_form_reconstruction(model: &ToyModel, observed: &[f64]) -> Option<Vec<f64>> {
    if observed.len() != model.parameter_count() {
        return None;
    }
    let d = model.features;
    let bias = &observed[model.classes * d..];
    let (c, &db) = bias.iter().enumerate().max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))?;
    if db == 0.0 {
        return None;
    }
    Some(observed[c * d..(c + 1) * d].iter().map(|v| v / db).collect())
}

/// `1 - cos(grad(x), observed)` and its gradient in `x`.
fn matching_loss(model: &ToyModel, x: &[f64], label: usize, observed: &[f64], observed_norm: f64) -> (f64, Vec<f64>) {
    let d = model.features;
    let c_count = model.classes;
    if observed_norm == 0.0 {
        return (1.0, vec![0.0; d]);
    }
    let p = model.probabilities(x);
    let mut delta = p.clone();
    delta[label] -= 1.0;
    let g = model.gradient(x, label);
    let g_norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    if g_norm == 0.0 {
        return (1.0, vec![0.0; d]);
    }
    let dot: f64 = g.iter().zip(observed).map(|(a, b)| a * b).sum();
    let cos = dot / (g_norm * observed_norm);

    // J^T v for v = (V, v_b): V^T delta + W^T J_softmax (V x + v_b)
    let pullback = |v: &[f64]| -> Vec<f64> {
        let (v_w, v_b) = v.split_at(c_count * d);
        let mut out = vec![0.0; d];
        let mut u = vec![0.0; c_count];
        for c in 0..c_count {
            let row = &v_w[c * d..(c + 1) * d];
            for (o, r) in out.iter_mut().zip(row) {
                *o += delta[c] * r;
            }
            u[c] = row.iter().zip(x).map(|(r, xv)| r * xv).sum::<f64>() + v_b[c];
        }
        let pu: f64 = p.iter().zip(&u).map(|(a, b)| a * b).sum();
        for c in 0..c_count {
            let s = p[c] * (u[c] - pu);
            let w_row = &model.weights[c * d..(c + 1) * d];
            for (o, w) in out.iter_mut().zip(w_row) {
                *o += s * w;
            }
        }
        out
    };
    let jo = pullback(observed);
    let jg = pullback(&g);
    let grad = jo
        .iter()
        .zip(&jg)
        .map(|(a, b)| -(a / g_norm - dot * b / g_norm.powi(3)) / observed_norm)
        .collect();
    (1.0 - cos, grad)
}

/// Optimizer settings for [`invert_gradient`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionConfig {
    pub iterations: usize,
    pub learning_rate: f64,
    /// Seed for the uniform dummy-input initialization.
    pub seed: u64,
}

impl Default for InversionConfig {
    fn default() -> Self {
        Self {
            iterations: 1000,
            learning_rate: 0.1,
            seed: 0,
        }
    }
}

/// Step size after the 3/8, 5/8 and 7/8 milestones, each dividing by ten.
fn scheduled_rate(base: f64, iteration: usize, total: usize) -> f64 {
    let passed = [3, 5, 7].iter().filter(|&&num| iteration * 8 >= num * total).count();
    base * 0.1f64.powi(passed as i32)
}

/// Reconstructs an input whose gradient matches `observed` in cosine
/// similarity. The label is taken as known. Signed-gradient steps with
/// projection onto `[0, 1]`.
pub fn invert_gradient(
    observed: &[f64],
    model: &ToyModel,
    label: usize,
    shape: (usize, usize),
    config: &InversionConfig,
) -> Result<ToyImage, AttackError> {
    if observed.len() != model.parameter_count() {
        return Err(AttackError::DimensionMismatch {
            expected: model.parameter_count(),
            actual: observed.len(),
        });
    }
    if shape.0 * shape.1 != model.features {
        return Err(AttackError::DimensionMismatch {
            expected: model.features,
            actual: shape.0 * shape.1,
        });
    }
    if label >= model.classes {
        return Err(AttackError::LabelOutOfRange {
            label,
            classes: model.classes,
        });
    }
    let observed_norm = observed.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !observed_norm.is_finite() {
        return Err(AttackError::NonFiniteLoss { iteration: 0 });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut x: Vec<f64> = (0..model.features).map(|_| rng.random::<f64>()).collect();
    for it in 0..config.iterations {
        let (loss, grad) = matching_loss(model, &x, label, observed, observed_norm);
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(AttackError::NonFiniteLoss { iteration: it });
        }
        let step = scheduled_rate(config.learning_rate, it, config.iterations);
        for (xi, gi) in x.iter_mut().zip(&grad) {
            let s = if *gi > 0.0 {
                1.0
            } else if *gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *xi = (*xi - step * s).clamp(0.0, 1.0);
        }
    }
    ToyImage::new(shape.0, shape.1, x, label)
}

const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;
const DYNAMIC_RANGE: f64 = 1.0;

/// Single-window SSIM over the whole image.
pub fn ssim(a: &ToyImage, b: &ToyImage) -> Result<f64, AttackError> {
    if a.height != b.height || a.width != b.width {
        return Err(AttackError::DimensionMismatch {
            expected: a.pixels.len(),
            actual: b.pixels.len(),
        });
    }
    Ok(ssim_slices(&a.pixels, &b.pixels))
}

fn ssim_slices(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let mu_a = a.iter().sum::<f64>() / n;
    let mu_b = b.iter().sum::<f64>() / n;
    let var_a = a.iter().map(|v| (v - mu_a).powi(2)).sum::<f64>() / n;
    let var_b = b.iter().map(|v| (v - mu_b).powi(2)).sum::<f64>() / n;
    let cov = a.iter().zip(b).map(|(x, y)| (x - mu_a) * (y - mu_b)).sum::<f64>() / n;
    let c1 = (SSIM_K1 * DYNAMIC_RANGE).powi(2);
    let c2 = (SSIM_K2 * DYNAMIC_RANGE).powi(2);
    ((2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)) / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2))
}

/// Shape of the synthetic task.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    pub nodes: usize,
    pub corrupt: usize,
    pub height: usize,
    pub width: usize,
    pub classes: usize,
    /// Standard deviation of the random model parameters.
    pub model_scale: f64,
    pub inversion: InversionConfig,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            nodes: 10,
            corrupt: 0,
            height: 8,
            width: 8,
            classes: 4,
            model_scale: 0.1,
            inversion: InversionConfig::default(),
        }
    }
}

/// One blurred blob per image; each class has its own blob anchor.
pub fn synthetic_image(height: usize, width: usize, classes: usize, label: usize, rng: &mut impl Rng) -> ToyImage {
    let angle = 2.0 * std::f64::consts::PI * label as f64 / classes as f64;
    let cy = (height as f64 - 1.0) / 2.0 + 0.28 * height as f64 * angle.sin();
    let cx = (width as f64 - 1.0) / 2.0 + 0.28 * width as f64 * angle.cos();
    let cy = cy + rng.random_range(-1.5..1.5);
    let cx = cx + rng.random_range(-1.5..1.5);
    let spread = rng.random_range(1.0..2.2);
    let amplitude = rng.random_range(0.7..1.0);
    let background = rng.random_range(0.0..0.25);
    let mut pixels = Vec::with_capacity(height * width);
    for r in 0..height {
        for c in 0..width {
            let d2 = (r as f64 - cy).powi(2) + (c as f64 - cx).powi(2);
            let blob = amplitude * (-d2 / (2.0 * spread * spread)).exp();
            let noise = 0.05 * rng.sample::<f64, _>(StandardNormal);
            pixels.push((background + blob + noise).clamp(0.0, 1.0));
        }
    }
    ToyImage::new(height, width, pixels, label).expect("pixels clamped to [0, 1]")
}

/// Per-node images and a shared model, reproducible from `seed`.
#[derive(Debug, Clone)]
pub struct AttackScenario {
    pub images: Vec<ToyImage>,
    pub model: ToyModel,
    pub gradients: Vec<Vec<f64>>,
}

impl AttackScenario {
    pub fn generate(config: &AttackConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0xa77a]));
        let model = ToyModel::random(
            config.classes,
            config.height * config.width,
            config.model_scale,
            &mut rng,
        );
        let images: Vec<ToyImage> = (0..config.nodes)
            .map(|_| {
                let label = rng.random_range(0..config.classes);
                synthetic_image(config.height, config.width, config.classes, label, &mut rng)
            })
            .collect();
        let gradients = images
            .iter()
            .map(|img| model.gradient(&img.pixels, img.label))
            .collect();
        Self {
            images,
            model,
            gradients,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetResult {
    pub node: usize,
    /// `Some(adjacent?)` in decentralized modes.
    pub neighbor: Option<bool>,
    pub truth: ToyImage,
    pub reconstructed: ToyImage,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackResult {
    pub mode: Mode,
    pub targets: Vec<TargetResult>,
}

impl AttackResult {
    pub fn mean_ssim(&self) -> f64 {
        self.targets.iter().map(|t| t.ssim).sum::<f64>() / self.targets.len() as f64
    }
}

fn mean_of(vectors: &[&[f64]]) -> Vec<f64> {
    let len = vectors.first().map_or(0, |v| v.len());
    let mut out = vec![0.0; len];
    for v in vectors {
        for (o, x) in out.iter_mut().zip(v.iter()) {
            *o += x;
        }
    }
    let scale = 1.0 / vectors.len().max(1) as f64;
    out.iter_mut().for_each(|o| *o *= scale);
    out
}

/// The gradient the adversary inverts for target `i`, and whether `i` is its
/// neighbor. The adversary's own gradient is known to it, so its share of
/// any aggregate is removed first.
///
/// * CFL: `g_i`.
/// * CFL with SA: the average of all honest gradients.
/// * DFL: `g_i` for neighbors; for non-neighbors the average over all non-neighbors.
/// * DFL with SA: `sum_{j != k} a_kj g_j` for neighbors; for non-neighbors
///   the average of all honest gradients.
pub fn attack_target_gradient(
    mode: Mode,
    corrupt: usize,
    target: usize,
    gradients: &[Vec<f64>],
    topology: Option<&Topology>,
) -> Result<(Vec<f64>, Option<bool>), AttackError> {
    let n = gradients.len();
    let honest: Vec<&[f64]> = (0..n)
        .filter(|&j| j != corrupt)
        .map(|j| gradients[j].as_slice())
        .collect();
    let need_topology = || topology.ok_or(AttackError::MissingTopology(mode));
    Ok(match mode {
        Mode::Cfl => (gradients[target].clone(), None),
        Mode::CflSa => (mean_of(&honest), None),
        Mode::Dfl => {
            let topo = need_topology()?;
            if topo.graph.is_adjacent(corrupt, target) {
                (gradients[target].clone(), Some(true))
            } else {
                let outside: Vec<&[f64]> = (0..n)
                    .filter(|&j| j != corrupt && !topo.graph.is_adjacent(corrupt, j))
                    .map(|j| gradients[j].as_slice())
                    .collect();
                (mean_of(&outside), Some(false))
            }
        }
        Mode::DflSa => {
            let topo = need_topology()?;
            if topo.graph.is_adjacent(corrupt, target) {
                let mut agg = vec![0.0; gradients[0].len()];
                for j in (0..n).filter(|&j| j != corrupt) {
                    let a = topo.weights.get(corrupt, j);
                    if a != 0.0 {
                        for (o, g) in agg.iter_mut().zip(&gradients[j]) {
                            *o += a * g;
                        }
                    }
                }
                (agg, Some(true))
            } else {
                (mean_of(&honest), Some(false))
            }
        }
    })
}

/// Inverts the adversary's view of every honest node and scores each
/// reconstruction against the true image.
pub fn attack_experiment(
    mode: Mode,
    config: &AttackConfig,
    topology: Option<&Topology>,
    seed: u64,
) -> Result<AttackResult, AttackError> {
    let n = config.nodes;
    if n < 3 {
        return Err(AttackError::TooFewNodes(n));
    }
    if config.corrupt >= n {
        return Err(AttackError::CorruptOutOfRange {
            corrupt: config.corrupt,
            n,
        });
    }
    if mode.is_decentralized() {
        let topo = topology.ok_or(AttackError::MissingTopology(mode))?;
        if topo.graph.node_count() != n {
            return Err(AttackError::TopologySize {
                expected: n,
                actual: topo.graph.node_count(),
            });
        }
    }
    let scenario = AttackScenario::generate(config, seed);
    let mut targets = Vec::with_capacity(n - 1);
    for node in (0..n).filter(|&j| j != config.corrupt) {
        let (observed, neighbor) = attack_target_gradient(mode, config.corrupt, node, &scenario.gradients, topology)?;
        let truth = scenario.images[node].clone();
        let inversion = InversionConfig {
            seed: derive_seed(seed, &[0x1a17, node as u64]),
            ..config.inversion
        };
        let reconstructed = invert_gradient(
            &observed,
            &scenario.model,
            truth.label,
            (config.height, config.width),
            &inversion,
        )?;
        let score = ssim(&reconstructed, &truth)?;
        targets.push(TargetResult {
            node,
            neighbor,
            truth,
            reconstructed,
            ssim: score,
        });
    }
    Ok(AttackResult { mode, targets })
}

/// Where decentralized modes get their graphs in [`attack_sweep`].
#[derive(Debug, Clone, PartialEq)]
pub enum AttackTopologies {
    /// Only centralized modes may run.
    None,
    /// A fresh graph with Metropolis weights per run and density.
    Densities(Vec<f64>),
    /// The same topology for every run.
    Fixed(Topology),
}

/// One `attack_experiment` call of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub mode: Mode,
    /// Requested density, realized density for a fixed graph, `None` for
    /// centralized modes.
    pub density: Option<f64>,
    pub run: usize,
    pub result: AttackResult,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSweep {
    pub cells: Vec<SweepCell>,
    /// Graphs used, keyed by `(run, density)`.
    pub graphs: Vec<(usize, f64, Topology)>,
}

impl AttackSweep {
    /// Mean SSIM over runs and targets; `density` is ignored for centralized modes.
    pub fn mean_ssim(&self, mode: Mode, density: Option<f64>) -> Option<f64> {
        let picked: Vec<f64> = self
            .cells
            .iter()
            .filter(|c| c.mode == mode && (!mode.is_decentralized() || c.density == density))
            .map(|c| c.result.mean_ssim())
            .collect();
        (!picked.is_empty()).then(|| picked.iter().sum::<f64>() / picked.len() as f64)
    }
}

/// Scenario seed of run `run`; shared by every mode and density.
pub fn attack_run_seed(seed: u64, run: usize) -> u64 {
    derive_seed(seed, &[0x5c3e, run as u64])
}

/// Graph seed of `(run, density)`.
pub fn attack_graph_seed(seed: u64, run: usize, density: f64) -> u64 {
    derive_seed(seed, &[0x9a, run as u64, density.to_bits()])
}

/// Runs every mode over `runs` independent scenarios. Centralized modes run
/// once per scenario; decentralized ones once per scenario and topology.
pub fn attack_sweep(
    modes: &[Mode],
    topologies: &AttackTopologies,
    runs: usize,
    config: &AttackConfig,
    seed: u64,
) -> Result<AttackSweep, AttackSweepError> {
    let mut graphs = Vec::new();
    for run in 0..runs {
        match topologies {
            AttackTopologies::Densities(ds) => {
                for &d in ds {
                    let graph = generate_graph(config.nodes, d, attack_graph_seed(seed, run, d))?;
                    let weights = metropolis_weights(&graph)?;
                    graphs.push((run, d, Topology { graph, weights }));
                }
            }
            AttackTopologies::Fixed(t) => graphs.push((run, graph_density(&t.graph), t.clone())),
            AttackTopologies::None => {}
        }
    }
    let mut jobs: Vec<(Mode, usize, Option<(f64, &Topology)>)> = Vec::new();
    for run in 0..runs {
        for &mode in modes {
            if mode.is_decentralized() {
                let mut any = false;
                for (r, d, t) in graphs.iter().filter(|(r, _, _)| *r == run) {
                    jobs.push((mode, *r, Some((*d, t))));
                    any = true;
                }
                if !any {
                    return Err(AttackError::MissingTopology(mode).into());
                }
            } else {
                jobs.push((mode, run, None));
            }
        }
    }
    let cells = jobs
        .par_iter()
        .map(|&(mode, run, topo)| {
            let result = attack_experiment(mode, config, topo.map(|(_, t)| t), attack_run_seed(seed, run))?;
            Ok(SweepCell {
                mode,
                density: topo.map(|(d, _)| d),
                run,
                result,
            })
        })
        .collect::<Result<Vec<_>, AttackError>>()?;
    Ok(AttackSweep { cells, graphs })
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackSweepError {
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Topology(#[from] TopologyError),
}
