//! Mutual information, in nats: Gaussian closed forms and kNN estimates.

mod digamma;
mod ksg;

use thiserror::Error;

use crate::topology::WeightMatrix;

pub use digamma::digamma;
pub use ksg::{ksg_cmi, ksg_cmi_dense, ksg_mi, ksg_mi_dense, DistanceMatrix};

/// Neighbor count used by default, as in NPEET.
pub const DEFAULT_K: usize = 3;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimatorError {
    #[error("k = {k} is invalid for {samples} samples (need 1 <= k < samples)")]
    InvalidNeighborCount { k: usize, samples: usize },
    #[error("degenerate sample: a variable is constant across all rows")]
    Degenerate,
    #[error("sample columns have different lengths")]
    Misaligned,
    #[error("sample contains a non-finite value")]
    NonFinite,
    #[error("a variable must have at least one column")]
    EmptyVariable,
    #[error("variance must be positive, got {0}")]
    NonPositiveVariance(f64),
    #[error("the closed form needs n >= 3 nodes, got {0}")]
    TooFewNodes(usize),
    #[error("target node must differ from the corrupt node ({0})")]
    TargetIsCorrupt(usize),
}

/// Monte-Carlo draws, one column per scalar variable.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMatrix {
    rows: usize,
    columns: Vec<Vec<f64>>,
    labels: Vec<String>,
}

impl SampleMatrix {
    pub fn from_columns(labels: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, EstimatorError> {
        if columns.is_empty() || labels.len() != columns.len() {
            return Err(EstimatorError::EmptyVariable);
        }
        let rows = columns[0].len();
        if columns.iter().any(|c| c.len() != rows) {
            return Err(EstimatorError::Misaligned);
        }
        if columns.iter().flatten().any(|v| !v.is_finite()) {
            return Err(EstimatorError::NonFinite);
        }
        Ok(Self { rows, columns, labels })
    }

    pub fn single(label: impl Into<String>, column: Vec<f64>) -> Result<Self, EstimatorError> {
        Self::from_columns(vec![label.into()], vec![column])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, j: usize) -> &[f64] {
        &self.columns[j]
    }

    pub fn label(&self, j: usize) -> &str {
        &self.labels[j]
    }

    pub fn column_slices(&self) -> Vec<&[f64]> {
        self.columns.iter().map(Vec::as_slice).collect()
    }

    /// Sub-matrix with the given columns, in order.
    pub fn select(&self, indices: &[usize]) -> SampleMatrix {
        SampleMatrix {
            rows: self.rows,
            columns: indices.iter().map(|&j| self.columns[j].clone()).collect(),
            labels: indices.iter().map(|&j| self.labels[j].clone()).collect(),
        }
    }

    /// Row-permuted copy; `perm[r]` is the source row of output row `r`.
    pub fn permute_rows(&self, perm: &[usize]) -> SampleMatrix {
        SampleMatrix {
            rows: self.rows,
            columns: self
                .columns
                .iter()
                .map(|c| perm.iter().map(|&r| c[r]).collect())
                .collect(),
            labels: self.labels.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    ClosedForm,
    Knn { k: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MIEstimate {
    /// Nats. kNN values may be slightly negative.
    pub value: f64,
    pub estimator: Estimator,
}

/// KSG estimate of `I(X; Y)`.
pub fn knn_mi(x: &SampleMatrix, y: &SampleMatrix, k: usize) -> Result<MIEstimate, EstimatorError> {
    let value = ksg_mi(&x.column_slices(), &y.column_slices(), k)?;
    Ok(MIEstimate {
        value,
        estimator: Estimator::Knn { k },
    })
}

/// Frenzel-Pompe conditional KSG estimate of `I(X; Y | Z)`.
pub fn knn_cmi(x: &SampleMatrix, y: &SampleMatrix, z: &SampleMatrix, k: usize) -> Result<MIEstimate, EstimatorError> {
    let value = ksg_cmi(&x.column_slices(), &y.column_slices(), &z.column_slices(), k)?;
    Ok(MIEstimate {
        value,
        estimator: Estimator::Knn { k },
    })
}

/// Differential entropy of `N(0, variance)`: `0.5 ln(2 pi e variance)`.
pub fn gaussian_entropy(variance: f64) -> Result<f64, EstimatorError> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(EstimatorError::NonPositiveVariance(variance));
    }
    Ok(0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E * variance).ln())
}

/// `I(sum of n-1 iid N(0,1); one summand) = 0.5 ln((n-1)/(n-2))`, computed as
/// the entropy difference `h(S) - h(S - G_i)`.
pub fn analytic_mi_cfl_sa(n: usize) -> Result<f64, EstimatorError> {
    if n < 3 {
        return Err(EstimatorError::TooFewNodes(n));
    }
    let whole = gaussian_entropy((n - 1) as f64)?;
    let rest = gaussian_entropy((n - 2) as f64)?;
    Ok(whole - rest)
}

/// Information that node `k`'s weighted aggregate `sum_j a_kj G_j` carries
/// about `G_i` once `k` strips its own term:
/// `0.5 ln(S / (S - a_ki^2))` with `S = sum_{j != k} a_kj^2`.
///
/// Zero when `a_ki = 0`; `f64::INFINITY` when `a_ki` carries all of the
/// non-self weight (the aggregate then pins `G_i` down exactly).
pub fn analytic_mi_dfl_sa(w: &WeightMatrix, k: usize, i: usize) -> Result<f64, EstimatorError> {
    if i == k {
        return Err(EstimatorError::TargetIsCorrupt(k));
    }
    let a_ki = w.get(k, i);
    if a_ki == 0.0 {
        return Ok(0.0);
    }
    let off_diagonal: f64 = (0..w.size()).filter(|&j| j != k).map(|j| w.get(k, j).powi(2)).sum();
    let residual = off_diagonal - a_ki * a_ki;
    if residual <= off_diagonal * 1e-12 {
        return Ok(f64::INFINITY);
    }
    Ok(0.5 * (off_diagonal / residual).ln())
}

/// Average of [`analytic_mi_dfl_sa`] over all ordered pairs `k != i`.
pub fn analytic_mi_dfl_sa_average(w: &WeightMatrix) -> f64 {
    let n = w.size();
    let mut total = 0.0;
    for k in 0..n {
        for i in (0..n).filter(|&i| i != k) {
            total += analytic_mi_dfl_sa(w, k, i).expect("i != k");
        }
    }
    total / (n * (n - 1)) as f64
}
