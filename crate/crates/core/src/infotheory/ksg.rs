//! Kraskov-Stoegbauer-Grassberger estimators (algorithm 1) under the max-norm.
//!
//! Neighbor search is exact. Each space is a product of blocks: plain sample
//! columns or a precomputed pairwise distance matrix. A space with a dense
//! block visits candidates in order of that block's distance; otherwise
//! samples are kept sorted along the first column. Either way the k-th
//! neighbor sweep and the ball counts stop once the ordering key alone rules
//! out the rest, and every candidate is checked with the exact distance, so
//! results are identical to a full O(N^2) scan.

use rayon::prelude::*;

use super::digamma::digamma;
use super::EstimatorError;

/// Pairwise max-norm distances of a group of columns, row-major `N x N`,
/// with each row's sample indices sorted by distance.
#[derive(Debug, Clone)]
pub struct DistanceMatrix {
    n: usize,
    data: Vec<f64>,
    order: Vec<u32>,
}

impl DistanceMatrix {
    pub fn max_norm(columns: &[&[f64]]) -> Self {
        let n = columns.first().map_or(0, |c| c.len());
        let mut data = vec![0.0; n * n];
        for col in columns {
            assert_eq!(col.len(), n, "columns must share the sample count");
            for a in 0..n {
                let va = col[a];
                let row = &mut data[a * n..(a + 1) * n];
                for (b, slot) in row.iter_mut().enumerate() {
                    let d = (va - col[b]).abs();
                    if d > *slot {
                        *slot = d;
                    }
                }
            }
        }
        assert!(n <= u32::MAX as usize, "too many samples for a dense block");
        let mut order = vec![0u32; n * n];
        if n > 0 {
            order.par_chunks_mut(n).enumerate().for_each(|(a, idx)| {
                let row = &data[a * n..(a + 1) * n];
                for (b, slot) in idx.iter_mut().enumerate() {
                    *slot = b as u32;
                }
                idx.sort_unstable_by(|&p, &q| row[p as usize].total_cmp(&row[q as usize]).then(p.cmp(&q)));
            });
        }
        Self { n, data, order }
    }

    pub fn samples(&self) -> usize {
        self.n
    }

    #[inline]
    fn get(&self, a: usize, b: usize) -> f64 {
        self.data[a * self.n + b]
    }

    #[inline]
    fn row_order(&self, a: usize) -> &[u32] {
        &self.order[a * self.n..(a + 1) * self.n]
    }

    /// Leading entries of row `a`'s order whose distance is strictly below `eps`.
    fn closer_than(&self, a: usize, eps: f64) -> &[u32] {
        let order = self.row_order(a);
        let end = order.partition_point(|&b| self.get(a, b as usize) < eps);
        &order[..end]
    }
}

#[derive(Clone, Copy)]
pub(crate) enum Block<'a> {
    Columns(&'a [&'a [f64]]),
    Dense(&'a DistanceMatrix),
}

impl Block<'_> {
    #[inline]
    fn dist(&self, a: usize, b: usize) -> f64 {
        match self {
            Block::Columns(cols) => cols.iter().map(|c| (c[a] - c[b]).abs()).fold(0.0, f64::max),
            Block::Dense(m) => m.get(a, b),
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Block::Columns(cols) => cols.iter().all(|c| c.iter().all(|&v| v == c[0])),
            Block::Dense(m) => m.data.iter().all(|&d| d == 0.0),
        }
    }
}

/// Samples ordered along one column.
struct Axis<'a> {
    column: &'a [f64],
    sorted: Vec<f64>,
    order: Vec<usize>,
    rank: Vec<usize>,
}

impl<'a> Axis<'a> {
    fn new(column: &'a [f64]) -> Self {
        let mut order: Vec<usize> = (0..column.len()).collect();
        order.sort_by(|&a, &b| column[a].total_cmp(&column[b]).then(a.cmp(&b)));
        let sorted: Vec<f64> = order.iter().map(|&i| column[i]).collect();
        let mut rank = vec![0; column.len()];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos;
        }
        Self {
            column,
            sorted,
            order,
            rank,
        }
    }

    /// Positions `lo..hi` whose axis distance to sample `a` is strictly below `eps`.
    fn window(&self, a: usize, eps: f64) -> (usize, usize) {
        let x = self.column[a];
        let slack = eps * 1e-9 + f64::EPSILON * x.abs();
        let mut lo = self.sorted.partition_point(|&v| v < x - eps - slack);
        let mut hi = self.sorted.partition_point(|&v| v <= x + eps + slack);
        while lo < hi && (self.sorted[lo] - x).abs() >= eps {
            lo += 1;
        }
        while hi > lo && (self.sorted[hi - 1] - x).abs() >= eps {
            hi -= 1;
        }
        (lo, hi)
    }
}

/// Product space of blocks under the max-norm.
pub(crate) struct Space<'a> {
    blocks: Vec<Block<'a>>,
    /// First dense block; its row orders drive the searches when present.
    dense: Option<&'a DistanceMatrix>,
    axis: Option<Axis<'a>>,
    /// True when the space is exactly the single axis column.
    axis_only: bool,
    n: usize,
}

impl<'a> Space<'a> {
    pub(crate) fn new(blocks: Vec<Block<'a>>, n: usize) -> Self {
        let dense = blocks.iter().find_map(|b| match b {
            Block::Dense(m) => Some(*m),
            Block::Columns(_) => None,
        });
        let axis_col = blocks.iter().find_map(|b| match b {
            Block::Columns(cols) => cols.first().copied(),
            Block::Dense(_) => None,
        });
        let axis_only = matches!(blocks.as_slice(), [Block::Columns(cols)] if cols.len() == 1);
        Self {
            axis: if dense.is_none() { axis_col.map(Axis::new) } else { None },
            dense,
            blocks,
            axis_only,
            n,
        }
    }

    #[inline]
    fn dist(&self, a: usize, b: usize) -> f64 {
        self.blocks.iter().map(|blk| blk.dist(a, b)).fold(0.0, f64::max)
    }

    fn is_constant(&self) -> bool {
        self.blocks.iter().all(Block::is_constant)
    }

    /// Distance from sample `a` to its k-th nearest other sample.
    fn kth_distance(&self, a: usize, k: usize, best: &mut Vec<f64>) -> f64 {
        best.clear();
        let offer = |d: f64, best: &mut Vec<f64>| {
            if best.len() < k {
                let pos = best.partition_point(|&v| v <= d);
                best.insert(pos, d);
            } else if d < best[k - 1] {
                best.pop();
                let pos = best.partition_point(|&v| v <= d);
                best.insert(pos, d);
            }
        };
        if let Some(m) = self.dense {
            for &b in m.row_order(a) {
                let b = b as usize;
                if b == a {
                    continue;
                }
                if best.len() == k && m.get(a, b) >= best[k - 1] {
                    break;
                }
                offer(self.dist(a, b), best);
            }
            return best[k - 1];
        }
        match &self.axis {
            Some(axis) => {
                let x = axis.column[a];
                let pos = axis.rank[a];
                let mut left = pos;
                let mut right = pos + 1;
                loop {
                    let gap_left = (left > 0).then(|| (x - axis.sorted[left - 1]).abs());
                    let gap_right = (right < self.n).then(|| (axis.sorted[right] - x).abs());
                    let (gap, go_left) = match (gap_left, gap_right) {
                        (None, None) => break,
                        (Some(l), None) => (l, true),
                        (None, Some(r)) => (r, false),
                        (Some(l), Some(r)) => {
                            if l <= r {
                                (l, true)
                            } else {
                                (r, false)
                            }
                        }
                    };
                    if best.len() == k && gap >= best[k - 1] {
                        break;
                    }
                    let b = if go_left {
                        left -= 1;
                        axis.order[left]
                    } else {
                        right += 1;
                        axis.order[right - 1]
                    };
                    offer(self.dist(a, b), best);
                }
            }
            None => {
                for b in (0..self.n).filter(|&b| b != a) {
                    offer(self.dist(a, b), best);
                }
            }
        }
        best[k - 1]
    }

    /// Number of samples other than `a` strictly closer than `eps`.
    fn count_within(&self, a: usize, eps: f64) -> usize {
        if let Some(m) = self.dense {
            let candidates = m.closer_than(a, eps);
            if self.blocks.len() == 1 {
                return candidates.len() - usize::from(eps > 0.0);
            }
            return candidates
                .iter()
                .filter(|&&b| b as usize != a && self.dist(a, b as usize) < eps)
                .count();
        }
        match &self.axis {
            Some(axis) => {
                let (lo, hi) = axis.window(a, eps);
                if self.axis_only {
                    let self_inside = eps > 0.0;
                    return hi - lo - usize::from(self_inside);
                }
                axis.order[lo..hi]
                    .iter()
                    .filter(|&&b| b != a && self.dist(a, b) < eps)
                    .count()
            }
            None => (0..self.n).filter(|&b| b != a && self.dist(a, b) < eps).count(),
        }
    }
}

fn check_inputs(n: usize, k: usize) -> Result<(), EstimatorError> {
    if k == 0 {
        return Err(EstimatorError::InvalidNeighborCount { k, samples: n });
    }
    if k >= n {
        return Err(EstimatorError::InvalidNeighborCount { k, samples: n });
    }
    Ok(())
}

fn sum_in_order(values: Vec<f64>) -> f64 {
    values.into_iter().sum()
}

/// `psi(k) + psi(N) - <psi(n_x + 1) + psi(n_y + 1)>`.
pub(crate) fn mi_from_blocks(x: &[Block<'_>], y: &[Block<'_>], n: usize, k: usize) -> Result<f64, EstimatorError> {
    check_inputs(n, k)?;
    let joint = Space::new(x.iter().chain(y).copied().collect(), n);
    let xs = Space::new(x.to_vec(), n);
    let ys = Space::new(y.to_vec(), n);
    if xs.is_constant() || ys.is_constant() {
        return Err(EstimatorError::Degenerate);
    }
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |best, a| {
            let eps = joint.kth_distance(a, k, best);
            let nx = xs.count_within(a, eps);
            let ny = ys.count_within(a, eps);
            digamma((nx + 1) as f64) + digamma((ny + 1) as f64)
        })
        .collect();
    Ok(digamma(k as f64) + digamma(n as f64) - sum_in_order(terms) / n as f64)
}

/// `psi(k) - <psi(n_xz + 1) + psi(n_yz + 1) - psi(n_z + 1)>`.
///
/// `xz` must describe the product of the x and z blocks (it may be a single
/// precomputed dense block).
pub(crate) fn cmi_from_blocks(
    xz: &[Block<'_>],
    y: &[Block<'_>],
    z: &[Block<'_>],
    n: usize,
    k: usize,
    x_is_constant: bool,
) -> Result<f64, EstimatorError> {
    check_inputs(n, k)?;
    let joint = Space::new(xz.iter().chain(y).copied().collect(), n);
    let xzs = Space::new(xz.to_vec(), n);
    let yzs = Space::new(y.iter().chain(z).copied().collect(), n);
    let zs = Space::new(z.to_vec(), n);
    if x_is_constant || Space::new(y.to_vec(), n).is_constant() {
        return Err(EstimatorError::Degenerate);
    }
    let terms: Vec<f64> = (0..n)
        .into_par_iter()
        .map_init(Vec::new, |best, a| {
            let eps = joint.kth_distance(a, k, best);
            let nxz = xzs.count_within(a, eps);
            let nyz = yzs.count_within(a, eps);
            let nz = zs.count_within(a, eps);
            digamma((nxz + 1) as f64) + digamma((nyz + 1) as f64) - digamma((nz + 1) as f64)
        })
        .collect();
    Ok(digamma(k as f64) - sum_in_order(terms) / n as f64)
}

/// KSG mutual information between two groups of aligned sample columns.
pub fn ksg_mi(x: &[&[f64]], y: &[&[f64]], k: usize) -> Result<f64, EstimatorError> {
    let n = aligned_len(&[x, y])?;
    mi_from_blocks(&[Block::Columns(x)], &[Block::Columns(y)], n, k)
}

/// Conditional KSG estimate of `I(X; Y | Z)`.
pub fn ksg_cmi(x: &[&[f64]], y: &[&[f64]], z: &[&[f64]], k: usize) -> Result<f64, EstimatorError> {
    let n = aligned_len(&[x, y, z])?;
    let x_constant = Block::Columns(x).is_constant();
    cmi_from_blocks(
        &[Block::Columns(x), Block::Columns(z)],
        &[Block::Columns(y)],
        &[Block::Columns(z)],
        n,
        k,
        x_constant,
    )
}

/// `ksg_mi` with the x distances precomputed.
pub fn ksg_mi_dense(x: &DistanceMatrix, y: &[&[f64]], k: usize) -> Result<f64, EstimatorError> {
    let n = aligned_len(&[y])?;
    if x.samples() != n {
        return Err(EstimatorError::Misaligned);
    }
    mi_from_blocks(&[Block::Dense(x)], &[Block::Columns(y)], n, k)
}

/// `ksg_cmi` with the joint (x, z) distances precomputed.
pub fn ksg_cmi_dense(
    xz: &DistanceMatrix,
    y: &[&[f64]],
    z: &[&[f64]],
    k: usize,
    x_is_constant: bool,
) -> Result<f64, EstimatorError> {
    let n = aligned_len(&[y, z])?;
    if xz.samples() != n {
        return Err(EstimatorError::Misaligned);
    }
    cmi_from_blocks(
        &[Block::Dense(xz)],
        &[Block::Columns(y)],
        &[Block::Columns(z)],
        n,
        k,
        x_is_constant,
    )
}

fn aligned_len(groups: &[&[&[f64]]]) -> Result<usize, EstimatorError> {
    let mut n = None;
    for group in groups {
        if group.is_empty() {
            return Err(EstimatorError::EmptyVariable);
        }
        for col in group.iter() {
            if col.iter().any(|v| !v.is_finite()) {
                return Err(EstimatorError::NonFinite);
            }
            match n {
                None => n = Some(col.len()),
                Some(len) if len != col.len() => return Err(EstimatorError::Misaligned),
                _ => {}
            }
        }
    }
    Ok(n.unwrap_or(0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Straight O(N^2) KSG #1 with no sorting or windows.
    fn brute_mi(x: &[&[f64]], y: &[&[f64]], k: usize) -> f64 {
        let n = x[0].len();
        let d = |cols: &[&[f64]], a: usize, b: usize| cols.iter().map(|c| (c[a] - c[b]).abs()).fold(0.0, f64::max);
        let mut acc = 0.0;
        for a in 0..n {
            let mut ds: Vec<f64> = (0..n).filter(|&b| b != a).map(|b| d(x, a, b).max(d(y, a, b))).collect();
            ds.sort_by(f64::total_cmp);
            let eps = ds[k - 1];
            let nx = (0..n).filter(|&b| b != a && d(x, a, b) < eps).count();
            let ny = (0..n).filter(|&b| b != a && d(y, a, b) < eps).count();
            acc += digamma((nx + 1) as f64) + digamma((ny + 1) as f64);
        }
        digamma(k as f64) + digamma(n as f64) - acc / n as f64
    }

    fn brute_cmi(x: &[&[f64]], y: &[&[f64]], z: &[&[f64]], k: usize) -> f64 {
        let n = x[0].len();
        let d = |cols: &[&[f64]], a: usize, b: usize| cols.iter().map(|c| (c[a] - c[b]).abs()).fold(0.0, f64::max);
        let mut acc = 0.0;
        for a in 0..n {
            let mut ds: Vec<f64> = (0..n)
                .filter(|&b| b != a)
                .map(|b| d(x, a, b).max(d(y, a, b)).max(d(z, a, b)))
                .collect();
            ds.sort_by(f64::total_cmp);
            let eps = ds[k - 1];
            let nxz = (0..n).filter(|&b| b != a && d(x, a, b).max(d(z, a, b)) < eps).count();
            let nyz = (0..n).filter(|&b| b != a && d(y, a, b).max(d(z, a, b)) < eps).count();
            let nz = (0..n).filter(|&b| b != a && d(z, a, b) < eps).count();
            acc += digamma((nxz + 1) as f64) + digamma((nyz + 1) as f64) - digamma((nz + 1) as f64);
        }
        digamma(k as f64) - acc / n as f64
    }

    fn columns(n: usize, count: usize, seed: u64, quantize: bool) -> Vec<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                (0..n)
                    .map(|_| {
                        let v: f64 = rng.random::<f64>() * 4.0 - 2.0;
                        if quantize {
                            (v * 4.0).round() / 4.0
                        } else {
                            v
                        }
                    })
                    .collect()
            })
            .collect()
    }

    #[test]
    fn windowed_search_matches_brute_force_exactly() {
        for (seed, quantize) in [(1, false), (2, true), (3, false), (4, true)] {
            let cols = columns(150, 4, seed, quantize);
            let mix: Vec<f64> = cols[0].iter().zip(&cols[1]).map(|(a, b)| a + 0.3 * b).collect();
            let x: Vec<&[f64]> = vec![&mix, &cols[2]];
            let y: Vec<&[f64]> = vec![&cols[0]];
            let z: Vec<&[f64]> = vec![&cols[3]];
            for k in [1, 3, 5] {
                assert_eq!(ksg_mi(&x, &y, k).unwrap(), brute_mi(&x, &y, k));
                assert_eq!(ksg_cmi(&x, &y, &z, k).unwrap(), brute_cmi(&x, &y, &z, k));
            }
        }
    }

    #[test]
    fn dense_path_matches_column_path() {
        for quantized in [false, true] {
            let cols = columns(200, 5, 9, quantized);
            let x: Vec<&[f64]> = vec![&cols[0], &cols[1], &cols[2]];
            let y: Vec<&[f64]> = vec![&cols[3]];
            let z: Vec<&[f64]> = vec![&cols[4]];
            let dx = DistanceMatrix::max_norm(&x);
            assert_eq!(ksg_mi_dense(&dx, &y, 3).unwrap(), ksg_mi(&x, &y, 3).unwrap());
            let xz: Vec<&[f64]> = vec![&cols[0], &cols[1], &cols[2], &cols[4]];
            let dxz = DistanceMatrix::max_norm(&xz);
            assert_eq!(
                ksg_cmi_dense(&dxz, &y, &z, 3, false).unwrap(),
                ksg_cmi(&x, &y, &z, 3).unwrap()
            );
        }
    }

    #[test]
    fn identical_columns_give_psi_n_minus_psi_k() {
        let cols = columns(500, 1, 5, false);
        let x: Vec<&[f64]> = vec![&cols[0]];
        let v = ksg_mi(&x, &x, 3).unwrap();
        assert!((v - (digamma(500.0) - digamma(3.0))).abs() < 1e-12);
    }

    #[test]
    fn input_errors() {
        let cols = columns(10, 2, 1, false);
        let x: Vec<&[f64]> = vec![&cols[0]];
        let y: Vec<&[f64]> = vec![&cols[1]];
        assert!(matches!(
            ksg_mi(&x, &y, 10),
            Err(EstimatorError::InvalidNeighborCount { k: 10, samples: 10 })
        ));
        assert!(matches!(
            ksg_mi(&x, &y, 0),
            Err(EstimatorError::InvalidNeighborCount { .. })
        ));
        let flat = vec![1.0; 10];
        let c: Vec<&[f64]> = vec![&flat];
        assert!(matches!(ksg_mi(&c, &c, 3), Err(EstimatorError::Degenerate)));
        let short = vec![0.0; 9];
        let s: Vec<&[f64]> = vec![&short];
        assert!(matches!(ksg_mi(&x, &s, 3), Err(EstimatorError::Misaligned)));
        let nan = vec![f64::NAN; 10];
        let bad: Vec<&[f64]> = vec![&nan];
        assert!(matches!(ksg_mi(&x, &bad, 3), Err(EstimatorError::NonFinite)));
    }
}
