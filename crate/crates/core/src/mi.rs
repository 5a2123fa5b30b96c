//! Kraskov–Stögbauer–Grassberger mutual information (estimator 1).
//!
//! For each sample `i`, `ε(i)` is the distance to its k-th nearest neighbor
//! in the joint space, where the joint distance is the larger of the two
//! marginal L∞ distances. `nₓ(i)` and `n_y(i)` count marginal neighbors
//! strictly closer than `ε(i)`, and
//!
//! ```text
//! I = ψ(k) + ψ(N) − ⟨ψ(nₓ + 1) + ψ(n_y + 1)⟩
//! ```
//!
//! The average is accumulated from integer histograms of the counts, so the
//! result does not depend on sample order and is symmetric in its arguments
//! bit-for-bit.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::numerics::{digamma, uniform_sample, Matrix, SeededRng};

/// One activation vector per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble(Matrix);

impl Ensemble {
    pub fn new(samples: Matrix) -> Result<Self> {
        if samples.rows() == 0 || samples.cols() == 0 {
            return Err(Error::Domain(format!(
                "ensemble needs at least one sample and one feature, got {:?}",
                samples.shape()
            )));
        }
        if !samples.is_finite() {
            return Err(Error::Domain("ensemble contains non-finite values".into()));
        }
        Ok(Self(samples))
    }

    pub fn samples(&self) -> &Matrix {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.0.rows() == 0
    }

    pub fn dims(&self) -> usize {
        self.0.cols()
    }

    pub fn into_inner(self) -> Matrix {
        self.0
    }
}

/// Mutual information between two ensembles.
///
/// `MI(X;Y) = H(X) − H(X|Y) = H(Y) − H(Y|X)`; the estimator targets this
/// quantity directly without estimating the entropies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub nats: f64,
    pub bits: f64,
    pub k: usize,
    pub n: usize,
}

impl MiEstimate {
    fn from_nats(nats: f64, k: usize, n: usize) -> Self {
        Self {
            nats,
            bits: nats / LN_2,
            k,
            n,
        }
    }
}

/// How much an inter-layer MI of `mi_bits` shrinks an `n_layers`-deep
/// configuration space: a factor of `2^(n_layers · mi_bits)`, held in log₂.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReductionReport {
    pub mi_bits: f64,
    pub n_layers: usize,
    pub log2_factor: f64,
}

impl ReductionReport {
    /// The factor itself; infinite once it exceeds the `f64` range.
    pub fn factor(&self) -> f64 {
        self.log2_factor.exp2()
    }
}

pub fn reduction_report(mi_bits: f64, n_layers: usize) -> Result<ReductionReport> {
    if n_layers == 0 {
        return Err(Error::Domain("n_layers must be at least 1".into()));
    }
    Ok(ReductionReport {
        mi_bits,
        n_layers,
        log2_factor: n_layers as f64 * mi_bits,
    })
}

/// L∞ distance between two equal-length slices.
#[inline]
pub fn chebyshev(a: &[f64], b: &[f64]) -> f64 {
    const LANES: usize = 8;
    let mut acc = [0.0f64; LANES];
    let chunks = a.len() / LANES * LANES;
    for (ca, cb) in a[..chunks].chunks_exact(LANES).zip(b[..chunks].chunks_exact(LANES)) {
        for l in 0..LANES {
            let d = (ca[l] - cb[l]).abs();
            acc[l] = if d > acc[l] { d } else { acc[l] };
        }
    }
    let mut m = 0.0f64;
    for v in acc {
        m = if v > m { v } else { m };
    }
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        let d = (x - y).abs();
        m = if d > m { d } else { m };
    }
    m
}

/// k nearest neighbors of one point.
#[derive(Debug, Clone, PartialEq)]
pub struct Neighbors {
    /// Distance to the k-th neighbor.
    pub distance: f64,
    /// Neighbor indices ordered by `(distance, index)`.
    pub indices: Vec<usize>,
}

/// Exact k-nearest neighbors of `points[query]` under L∞, by exhaustive scan.
///
/// The query itself is excluded; equal distances are ordered by lower index.
pub fn chebyshev_knn(points: &Matrix, query: usize, k: usize) -> Result<Neighbors> {
    check_knn_args(points, query, k)?;
    let q = points.row(query);
    let mut all: Vec<(f64, usize)> = (0..points.rows())
        .filter(|&j| j != query)
        .map(|j| (chebyshev(q, points.row(j)), j))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    all.truncate(k);
    Ok(Neighbors {
        distance: all[k - 1].0,
        indices: all.into_iter().map(|(_, j)| j).collect(),
    })
}

fn check_knn_args(points: &Matrix, query: usize, k: usize) -> Result<()> {
    if query >= points.rows() {
        return Err(Error::Domain(format!(
            "query index {query} out of range for {} points",
            points.rows()
        )));
    }
    if k == 0 || k >= points.rows() {
        return Err(Error::Domain(format!(
            "k = {k} needs 1 <= k < n = {}",
            points.rows()
        )));
    }
    Ok(())
}

const LEAF_SIZE: usize = 16;

enum KdNode {
    Leaf {
        start: usize,
        end: usize,
    },
    Split {
        dim: usize,
        value: f64,
        left: Box<KdNode>,
        right: Box<KdNode>,
    },
}

/// k-d tree over the rows of a matrix for L∞ queries.
pub struct KdTree<'a> {
    points: &'a Matrix,
    order: Vec<usize>,
    root: KdNode,
}

#[derive(Clone, Copy, PartialEq)]
struct Candidate(f64, usize);

impl Eq for Candidate {}

impl PartialOrd for Candidate {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Candidate {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
    }
}

impl<'a> KdTree<'a> {
    pub fn build(points: &'a Matrix) -> Self {
        let mut order: Vec<usize> = (0..points.rows()).collect();
        let root = Self::build_node(points, &mut order, 0);
        Self { points, order, root }
    }

    fn build_node(points: &Matrix, order: &mut [usize], offset: usize) -> KdNode {
        let len = order.len();
        if len <= LEAF_SIZE {
            return KdNode::Leaf {
                start: offset,
                end: offset + len,
            };
        }
        // split on the dimension of widest spread
        let dims = points.cols();
        let mut best = (0, -1.0);
        for d in 0..dims {
            let (lo, hi) = order.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                let v = points.get(i, d);
                (lo.min(v), hi.max(v))
            });
            if hi - lo > best.1 {
                best = (d, hi - lo);
            }
        }
        let dim = best.0;
        let mid = len / 2;
        order.select_nth_unstable_by(mid, |&a, &b| {
            points.get(a, dim).total_cmp(&points.get(b, dim)).then(a.cmp(&b))
        });
        let value = points.get(order[mid], dim);
        let (lo, hi) = order.split_at_mut(mid);
        KdNode::Split {
            dim,
            value,
            left: Box::new(Self::build_node(points, lo, offset)),
            right: Box::new(Self::build_node(points, hi, offset + mid)),
        }
    }

    /// Same contract as [`chebyshev_knn`].
    pub fn knn(&self, query: usize, k: usize) -> Result<Neighbors> {
        check_knn_args(self.points, query, k)?;
        let q = self.points.row(query);
        let mut heap = BinaryHeap::with_capacity(k + 1);
        self.knn_visit(&self.root, q, query, k, &mut heap);
        let mut found = heap.into_sorted_vec();
        found.truncate(k);
        Ok(Neighbors {
            distance: found[k - 1].0,
            indices: found.into_iter().map(|c| c.1).collect(),
        })
    }

    fn knn_visit(&self, node: &KdNode, q: &[f64], skip: usize, k: usize, heap: &mut BinaryHeap<Candidate>) {
        match node {
            KdNode::Leaf { start, end } => {
                for &j in &self.order[*start..*end] {
                    if j == skip {
                        continue;
                    }
                    let c = Candidate(chebyshev(q, self.points.row(j)), j);
                    if heap.len() < k {
                        heap.push(c);
                    } else if c < *heap.peek().expect("non-empty") {
                        heap.pop();
                        heap.push(c);
                    }
                }
            }
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                let (near, far) = if diff < 0.0 { (left, right) } else { (right, left) };
                self.knn_visit(near, q, skip, k, heap);
                // a point at exactly the current k-th distance may still win on index
                if heap.len() < k || diff.abs() <= heap.peek().expect("non-empty").0 {
                    self.knn_visit(far, q, skip, k, heap);
                }
            }
        }
    }

    /// Number of points other than `query` strictly within `radius` of it.
    pub fn count_within(&self, query: usize, radius: f64) -> usize {
        let q = self.points.row(query);
        self.count_visit(&self.root, q, query, radius)
    }

    fn count_visit(&self, node: &KdNode, q: &[f64], skip: usize, radius: f64) -> usize {
        match node {
            KdNode::Leaf { start, end } => self.order[*start..*end]
                .iter()
                .filter(|&&j| j != skip && chebyshev(q, self.points.row(j)) < radius)
                .count(),
            KdNode::Split {
                dim,
                value,
                left,
                right,
            } => {
                let diff = q[*dim] - value;
                // left holds coordinates <= value, right holds >= value
                let mut total = 0;
                if diff < radius {
                    total += self.count_visit(left, q, skip, radius);
                }
                if -diff < radius {
                    total += self.count_visit(right, q, skip, radius);
                }
                total
            }
        }
    }
}

/// Neighbor-search backend for [`ksg_mi_with`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum KnnBackend {
    /// Exhaustive scan; the reference implementation.
    #[default]
    BruteForce,
    /// k-d trees over the joint and marginal spaces; fast in low dimension.
    KdTree,
}

pub fn ksg_mi(x: &Ensemble, y: &Ensemble, k: usize) -> Result<MiEstimate> {
    ksg_mi_with(x, y, k, KnnBackend::BruteForce)
}

pub fn ksg_mi_with(x: &Ensemble, y: &Ensemble, k: usize, backend: KnnBackend) -> Result<MiEstimate> {
    let n = x.len();
    if y.len() != n {
        return Err(Error::Domain(format!(
            "ensembles differ in sample count: {n} vs {}",
            y.len()
        )));
    }
    if k == 0 || k >= n {
        return Err(Error::Domain(format!("k = {k} needs 1 <= k < n = {n}")));
    }
    let counts = match backend {
        KnnBackend::BruteForce => brute_force_counts(x.samples(), y.samples(), k),
        KnnBackend::KdTree => kd_tree_counts(x.samples(), y.samples(), k)?,
    };
    // histograms of the marginal counts, indexed by count
    let mut hist_x = vec![0usize; n];
    let mut hist_y = vec![0usize; n];
    for (nx, ny) in counts {
        hist_x[nx] += 1;
        hist_y[ny] += 1;
    }
    let weighted = |hist: &[usize]| -> Result<f64> {
        let mut total = 0.0;
        for (count, &times) in hist.iter().enumerate() {
            if times > 0 {
                total += times as f64 * digamma(count as f64 + 1.0)?;
            }
        }
        Ok(total)
    };
    let mean = (weighted(&hist_x)? + weighted(&hist_y)?) / n as f64;
    let nats = digamma(k as f64)? + digamma(n as f64)? - mean;
    Ok(MiEstimate::from_nats(nats, k, n))
}

/// `(nₓ(i), n_y(i))` for every sample by exhaustive scan.
fn brute_force_counts(x: &Matrix, y: &Matrix, k: usize) -> Vec<(usize, usize)> {
    let n = x.rows();
    let mut dx = vec![0.0; n];
    let mut dy = vec![0.0; n];
    let mut joint = Vec::with_capacity(n);
    (0..n)
        .map(|i| {
            let (xi, yi) = (x.row(i), y.row(i));
            joint.clear();
            for j in 0..n {
                dx[j] = chebyshev(xi, x.row(j));
                dy[j] = chebyshev(yi, y.row(j));
                if j != i {
                    joint.push(dx[j].max(dy[j]));
                }
            }
            let (_, eps, _) = joint.select_nth_unstable_by(k - 1, f64::total_cmp);
            let eps = *eps;
            let nx = dx.iter().enumerate().filter(|&(j, &d)| j != i && d < eps).count();
            let ny = dy.iter().enumerate().filter(|&(j, &d)| j != i && d < eps).count();
            (nx, ny)
        })
        .collect()
}

fn kd_tree_counts(x: &Matrix, y: &Matrix, k: usize) -> Result<Vec<(usize, usize)>> {
    let n = x.rows();
    let mut joint = Matrix::zeros(n, x.cols() + y.cols());
    for i in 0..n {
        let row = joint.row_mut(i);
        row[..x.cols()].copy_from_slice(x.row(i));
        row[x.cols()..].copy_from_slice(y.row(i));
    }
    let joint_tree = KdTree::build(&joint);
    let x_tree = KdTree::build(x);
    let y_tree = KdTree::build(y);
    (0..n)
        .map(|i| {
            let eps = joint_tree.knn(i, k)?.distance;
            Ok((x_tree.count_within(i, eps), y_tree.count_within(i, eps)))
        })
        .collect()
}

/// Adds i.i.d. `Uniform[−amplitude, amplitude]` noise to every entry, which
/// separates exact duplicates (e.g. saturated activations).
pub fn jitter(ensemble: &Ensemble, rng: &mut SeededRng, amplitude: f64) -> Result<Ensemble> {
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::Domain(format!("jitter amplitude must be >= 0, got {amplitude}")));
    }
    if amplitude == 0.0 {
        return Ok(ensemble.clone());
    }
    let (r, c) = ensemble.samples().shape();
    let noise = uniform_sample(rng, -amplitude, amplitude, r, c)?;
    Ensemble::new(ensemble.samples().add(&noise)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::normal_sample;

    fn column(values: &[f64]) -> Matrix {
        Matrix::from_vec(values.len(), 1, values.to_vec()).unwrap()
    }

    #[test]
    fn collinear_tie_breaks_low() {
        let pts = column(&[0.0, 1.0, 2.0, 3.0]);
        let nb = chebyshev_knn(&pts, 1, 1).unwrap();
        assert_eq!(nb.distance, 1.0);
        assert_eq!(nb.indices, vec![0]);
        let tree = KdTree::build(&pts);
        assert_eq!(tree.knn(1, 1).unwrap(), nb);
        assert_eq!(chebyshev_knn(&pts, 1, 2).unwrap().indices, vec![0, 2]);
    }

    #[test]
    fn duplicates_give_zero_distance() {
        let pts = column(&[5.0, 5.0, 5.0, 7.0]);
        let nb = chebyshev_knn(&pts, 2, 2).unwrap();
        assert_eq!(nb.distance, 0.0);
        assert_eq!(nb.indices, vec![0, 1]);
        assert_eq!(KdTree::build(&pts).count_within(2, 0.0), 0);
    }

    #[test]
    fn knn_argument_checks() {
        let pts = column(&[0.0, 1.0]);
        assert!(chebyshev_knn(&pts, 0, 2).is_err());
        assert!(chebyshev_knn(&pts, 0, 0).is_err());
        assert!(chebyshev_knn(&pts, 5, 1).is_err());
    }

    #[test]
    fn kd_tree_matches_brute_force() {
        let mut rng = SeededRng::new(21);
        for trial in 0..200 {
            let n = 20 + rng.below(120);
            let d = 1 + rng.below(4);
            let mut pts = normal_sample(&mut rng, 0.0, 1.0, n, d).unwrap();
            if trial % 3 == 0 {
                // coarse grid forces many exact ties
                pts = pts.map(|v| (v * 2.0).round());
            }
            let tree = KdTree::build(&pts);
            let k = 1 + rng.below(5.min(n - 1));
            for q in (0..n).step_by(7) {
                let brute = chebyshev_knn(&pts, q, k).unwrap();
                assert_eq!(tree.knn(q, k).unwrap(), brute, "trial {trial} query {q}");
                let r = brute.distance;
                let expected = (0..n).filter(|&j| j != q && chebyshev(pts.row(q), pts.row(j)) < r).count();
                assert_eq!(tree.count_within(q, r), expected);
            }
        }
    }

    #[test]
    fn chebyshev_handles_lane_remainders() {
        let a: Vec<f64> = (0..19).map(|i| i as f64).collect();
        let mut b = a.clone();
        b[17] += 3.5;
        b[3] -= 1.0;
        assert_eq!(chebyshev(&a, &b), 3.5);
        b[5] += 4.0;
        assert_eq!(chebyshev(&a, &b), 4.0);
    }

    #[test]
    fn ksg_rejects_bad_inputs() {
        let a = Ensemble::new(column(&[0.0, 1.0, 2.0])).unwrap();
        let b = Ensemble::new(column(&[0.0, 1.0])).unwrap();
        assert!(ksg_mi(&a, &b, 1).is_err());
        assert!(ksg_mi(&a, &a, 3).is_err());
        assert!(ksg_mi(&a, &a, 0).is_err());
        assert!(Ensemble::new(column(&[0.0, f64::NAN])).is_err());
    }

    #[test]
    fn independent_uniforms_near_zero() {
        let mut rng = SeededRng::new(31);
        let x = Ensemble::new(uniform_sample(&mut rng, 0.0, 1.0, 1000, 1).unwrap()).unwrap();
        let y = Ensemble::new(uniform_sample(&mut rng, 0.0, 1.0, 1000, 1).unwrap()).unwrap();
        let mi = ksg_mi(&x, &y, 3).unwrap();
        assert!(mi.nats.abs() <= 0.05, "{mi:?}");
        assert_eq!(mi.bits, mi.nats / LN_2);
        assert_eq!((mi.k, mi.n), (3, 1000));
    }

    #[test]
    fn backends_agree_exactly() {
        let mut rng = SeededRng::new(41);
        let x = Ensemble::new(normal_sample(&mut rng, 0.0, 1.0, 400, 2).unwrap()).unwrap();
        let y = Ensemble::new(normal_sample(&mut rng, 0.0, 1.0, 400, 3).unwrap()).unwrap();
        let a = ksg_mi_with(&x, &y, 4, KnnBackend::BruteForce).unwrap();
        let b = ksg_mi_with(&x, &y, 4, KnnBackend::KdTree).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn jitter_zero_is_identity_and_seeded() {
        let e = Ensemble::new(column(&[1.0, 2.0, 3.0])).unwrap();
        assert_eq!(jitter(&e, &mut SeededRng::new(1), 0.0).unwrap(), e);
        let a = jitter(&e, &mut SeededRng::new(2), 1e-3).unwrap();
        let b = jitter(&e, &mut SeededRng::new(2), 1e-3).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, e);
        assert!(a.samples().max_abs_diff(e.samples()) <= 1e-3);
        assert!(jitter(&e, &mut SeededRng::new(2), -1.0).is_err());
    }

    #[test]
    fn reduction_report_values() {
        let r = reduction_report(2.0, 5).unwrap();
        assert_eq!(r.factor(), 1024.0);
        assert_eq!(reduction_report(0.0, 7).unwrap().factor(), 1.0);
        let big = reduction_report(20.0, 100).unwrap();
        assert_eq!(big.log2_factor, 2000.0);
        assert!(big.factor().is_infinite());
        assert!(reduction_report(1.0, 0).is_err());
    }
}
