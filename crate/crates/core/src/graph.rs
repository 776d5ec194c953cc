//! Data-driven graph construction.
//!
//! Two tensor graphs are built from a windowed training tensor `x` of shape
//! `[samples, T, N, features]` (z-scored input is recommended so the kernel
//! bandwidth is scale-free):
//!
//! * the spatial graph, `N x N x T`, one node-to-node adjacency per time step;
//! * the temporal graph, `T x T x N`, one time-to-time adjacency per node.
//!
//! Edge weights come from a thresholded Gaussian kernel on mean absolute
//! differences: `w = exp(-d^2 / sigma2)` if that value reaches `epsilon`,
//! else 0. The spatial graph can additionally evolve from its first slice:
//! each step adds a softmax-normalized increment derived from a low-rank
//! embedding of the previous slice, so later slices accumulate structure
//! instead of being recomputed from data.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::svd::svd;
use crate::tensor::DenseTensor;

/// Thresholded-kernel parameters shared by both graphs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GraphParams {
    /// Kernel bandwidth, squared.
    pub sigma2: f64,
    /// Sparsification threshold; weights below it drop to zero.
    pub epsilon: f64,
}

impl Default for GraphParams {
    fn default() -> Self {
        Self {
            sigma2: 0.1,
            epsilon: 0.5,
        }
    }
}

/// How the spatial graph's time axis is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StgMode {
    /// Every slice from the kernel formula at its own time step.
    Kernel,
    /// Slice 0 from the kernel formula, later slices by additive evolution.
    Evolved,
}

/// Spatial graph: `weights[i, j, t]` connects nodes i and j at time t.
#[derive(Clone, Debug)]
pub struct SpatialTensorGraph {
    pub weights: DenseTensor,
    pub sigma2: f64,
    pub epsilon: f64,
    pub mode: StgMode,
}

impl SpatialTensorGraph {
    pub fn n_nodes(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn t_steps(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn slice(&self, t: usize) -> Matrix {
        self.weights.slice_last(t)
    }
}

/// Temporal graph: `weights[t1, t2, n]` connects time steps t1 and t2 at node n.
#[derive(Clone, Debug)]
pub struct TemporalTensorGraph {
    pub weights: DenseTensor,
    pub sigma2: f64,
    pub epsilon: f64,
}

impl TemporalTensorGraph {
    pub fn t_steps(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.shape()[2]
    }

    pub fn slice(&self, n: usize) -> Matrix {
        self.weights.slice_last(n)
    }
}

/// Thresholded Gaussian kernel weight for a non-negative distance.
///
/// Returns `exp(-d^2 / sigma2)` when that value is at least `epsilon`
/// (boundary inclusive), else 0. Callers zero the diagonal themselves.
pub fn kernel_weight(d: f64, sigma2: f64, epsilon: f64) -> Result<f64> {
    if !(d >= 0.0) {
        return Err(Error::InvalidArgument {
            op: "kernel_weight",
            message: format!("distance must be non-negative, got {d}"),
        });
    }
    if !(sigma2 > 0.0) {
        return Err(Error::InvalidArgument {
            op: "kernel_weight",
            message: format!("sigma2 must be positive, got {sigma2}"),
        });
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(Error::InvalidArgument {
            op: "kernel_weight",
            message: format!("epsilon must lie in (0, 1], got {epsilon}"),
        });
    }
    let w = (-d * d / sigma2).exp();
    Ok(if w >= epsilon { w } else { 0.0 })
}

fn check_data_tensor(op: &'static str, x: &DenseTensor) -> Result<(usize, usize, usize, usize)> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op,
            expected: vec![4],
            got: vec![x.rank()],
        });
    }
    let s = x.shape();
    let (b, t, n, d) = (s[0], s[1], s[2], s[3]);
    if b == 0 || t == 0 || n == 0 || d == 0 {
        return Err(Error::EmptyInput { op });
    }
    Ok((b, t, n, d))
}

/// Mean absolute difference between nodes `i` and `j` at time `t`, averaged
/// over samples and features.
pub fn spatial_distance(x: &DenseTensor, i: usize, j: usize, t: usize) -> Result<f64> {
    let (b, tt, n, d) = check_data_tensor("spatial_distance", x)?;
    if i >= n || j >= n || t >= tt {
        return Err(Error::InvalidArgument {
            op: "spatial_distance",
            message: format!("index (i={i}, j={j}, t={t}) outside extents (N={n}, T={tt})"),
        });
    }
    if i == j {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for bb in 0..b {
        for dd in 0..d {
            sum += (x.get(&[bb, t, i, dd]) - x.get(&[bb, t, j, dd])).abs();
        }
    }
    Ok(sum / (b * d) as f64)
}

/// Mean absolute difference between time steps `t1` and `t2` at node `n`,
/// averaged over samples and features.
pub fn temporal_distance(x: &DenseTensor, t1: usize, t2: usize, n: usize) -> Result<f64> {
    let (b, tt, nn, d) = check_data_tensor("temporal_distance", x)?;
    if t1 >= tt || t2 >= tt || n >= nn {
        return Err(Error::InvalidArgument {
            op: "temporal_distance",
            message: format!("index (t1={t1}, t2={t2}, n={n}) outside extents (T={tt}, N={nn})"),
        });
    }
    if t1 == t2 {
        return Ok(0.0);
    }
    let mut sum = 0.0;
    for bb in 0..b {
        for dd in 0..d {
            sum += (x.get(&[bb, t1, n, dd]) - x.get(&[bb, t2, n, dd])).abs();
        }
    }
    Ok(sum / (b * d) as f64)
}

/// Kernel adjacency over nodes at a single time step. Zero diagonal,
/// symmetric.
fn kernel_slice_at(x: &DenseTensor, t: usize, params: &GraphParams) -> Result<Matrix> {
    let (_, _, n, _) = check_data_tensor("build_initial_stg", x)?;
    let mut a = Matrix::zeros(n, n);
    for i in 0..n {
        for j in (i + 1)..n {
            let w = kernel_weight(spatial_distance(x, i, j, t)?, params.sigma2, params.epsilon)?;
            a.set(i, j, w);
            a.set(j, i, w);
        }
    }
    Ok(a)
}

/// The time-zero kernel adjacency, used to seed evolution.
pub fn build_initial_stg(x: &DenseTensor, params: &GraphParams) -> Result<Matrix> {
    kernel_slice_at(x, 0, params)
}

/// Columns of `m` scaled entrywise.
fn scale_cols(m: &Matrix, s: &[f64]) -> Matrix {
    Matrix::from_fn(m.rows(), m.cols(), |r, c| m.get(r, c) * s[c])
}

/// Grow a spatial graph from its first slice.
///
/// For each step, the previous slice is factored by SVD, the top `embed_rank`
/// singular triples form embeddings `E1 = U sqrt(S)` and `E2 = V sqrt(S)`, and
/// the increment `row_softmax(relu(E1 E2^T))` scaled by `step` is added. Every
/// increment row sums to `step`, so entries are non-decreasing in t.
pub fn evolve_stg(
    a0: &Matrix,
    t_steps: usize,
    embed_rank: usize,
    step: f64,
) -> Result<SpatialTensorGraph> {
    let n = a0.rows();
    if a0.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "evolve_stg",
            expected: vec![n, n],
            got: vec![a0.rows(), a0.cols()],
        });
    }
    a0.ensure_finite("evolve_stg")?;
    if embed_rank == 0 || embed_rank > n {
        return Err(Error::RankExceedsExtent {
            op: "evolve_stg",
            mode: 0,
            rank: embed_rank,
            extent: n,
        });
    }
    if !(step >= 0.0) {
        return Err(Error::InvalidArgument {
            op: "evolve_stg",
            message: format!("step must be non-negative, got {step}"),
        });
    }
    if t_steps == 0 {
        return Err(Error::EmptyInput { op: "evolve_stg" });
    }
    let mut weights = DenseTensor::zeros(&[n, n, t_steps]);
    weights.set_slice_last(0, a0);
    let mut prev = a0.clone();
    for t in 1..t_steps {
        let delta = evolution_increment(&prev, embed_rank).map_err(|e| e.at_step(t))?;
        prev = prev.add(&delta.scale(step));
        weights.set_slice_last(t, &prev);
    }
    // Kernel parameters describe the seed slice; callers that built a0
    // themselves get the defaults recorded here.
    let params = GraphParams::default();
    Ok(SpatialTensorGraph {
        weights,
        sigma2: params.sigma2,
        epsilon: params.epsilon,
        mode: StgMode::Evolved,
    })
}

/// `row_softmax(relu(E1 E2^T))` for the top-`k` embedding of `a`.
fn evolution_increment(a: &Matrix, k: usize) -> Result<Matrix> {
    let f = svd(a)?;
    let sqrt_s: Vec<f64> = f.s[..k].iter().map(|s| s.sqrt()).collect();
    let e1 = scale_cols(&f.u.take_cols(k), &sqrt_s);
    let e2 = scale_cols(&f.v.take_cols(k), &sqrt_s);
    Ok(e1.matmul(&e2.transpose()).relu().row_softmax())
}

/// Options for [`build_stg`].
#[derive(Clone, Copy, Debug)]
pub struct StgOptions {
    pub params: GraphParams,
    pub mode: StgMode,
    /// Embedding rank used by evolution; must not exceed N.
    pub embed_rank: usize,
    /// Evolution step size.
    pub alpha: f64,
}

impl Default for StgOptions {
    fn default() -> Self {
        Self {
            params: GraphParams::default(),
            mode: StgMode::Evolved,
            embed_rank: 10,
            alpha: 1.0,
        }
    }
}

/// Build the spatial graph for all T time steps of `x`.
pub fn build_stg(x: &DenseTensor, opts: &StgOptions) -> Result<SpatialTensorGraph> {
    let (_, t, n, _) = check_data_tensor("build_stg", x)?;
    match opts.mode {
        StgMode::Kernel => {
            let mut weights = DenseTensor::zeros(&[n, n, t]);
            for tt in 0..t {
                let a = kernel_slice_at(x, tt, &opts.params).map_err(|e| e.in_slice(tt))?;
                weights.set_slice_last(tt, &a);
            }
            Ok(SpatialTensorGraph {
                weights,
                sigma2: opts.params.sigma2,
                epsilon: opts.params.epsilon,
                mode: StgMode::Kernel,
            })
        }
        StgMode::Evolved => {
            let a0 = build_initial_stg(x, &opts.params)?;
            let mut g = evolve_stg(&a0, t, opts.embed_rank, opts.alpha)?;
            g.sigma2 = opts.params.sigma2;
            g.epsilon = opts.params.epsilon;
            Ok(g)
        }
    }
}

/// Build the temporal graph: one T x T kernel adjacency per node.
pub fn build_ttg(x: &DenseTensor, params: &GraphParams) -> Result<TemporalTensorGraph> {
    let (_, t, n, _) = check_data_tensor("build_ttg", x)?;
    if t < 2 {
        return Err(Error::InsufficientLength { needed: 2, got: t });
    }
    let mut weights = DenseTensor::zeros(&[t, t, n]);
    for nn in 0..n {
        let mut b = Matrix::zeros(t, t);
        for t1 in 0..t {
            for t2 in (t1 + 1)..t {
                let w = kernel_weight(
                    temporal_distance(x, t1, t2, nn)?,
                    params.sigma2,
                    params.epsilon,
                )
                .map_err(|e| e.in_slice(nn))?;
                b.set(t1, t2, w);
                b.set(t2, t1, w);
            }
        }
        weights.set_slice_last(nn, &b);
    }
    Ok(TemporalTensorGraph {
        weights,
        sigma2: params.sigma2,
        epsilon: params.epsilon,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> GraphParams {
        GraphParams::default()
    }

    #[test]
    fn kernel_weight_at_zero_distance_is_one() {
        assert_eq!(kernel_weight(0.0, 0.1, 0.5).unwrap(), 1.0);
    }

    #[test]
    fn kernel_weight_boundary_is_kept() {
        // exp(-d^2/sigma2) == epsilon exactly when d^2 = sigma2 * ln(1/epsilon).
        let d = (0.1 * 2.0_f64.ln()).sqrt();
        let w = kernel_weight(d, 0.1, 0.5).unwrap();
        assert!((w - 0.5).abs() < 1e-12, "boundary weight {w}");
    }

    #[test]
    fn kernel_weight_below_threshold_is_zero() {
        // exp(-10) ~ 4.5e-5 < 0.5.
        assert_eq!(kernel_weight(1.0, 0.1, 0.5).unwrap(), 0.0);
    }

    #[test]
    fn kernel_weight_rejects_negative_distance() {
        assert!(kernel_weight(-0.1, 0.1, 0.5).is_err());
    }

    #[test]
    fn kernel_weight_monotone_in_distance() {
        let mut prev = f64::INFINITY;
        for step in 0..50 {
            let w = kernel_weight(step as f64 * 0.02, 0.1, 0.5).unwrap();
            assert!(w <= prev);
            prev = w;
        }
    }

    /// x[b, t, i, d] with two samples, two nodes holding chosen values.
    fn two_node_data(v: &[[f64; 2]]) -> DenseTensor {
        let b = v.len();
        DenseTensor::from_fn(&[b, 1, 2, 1], |idx| v[idx[0]][idx[2]])
    }

    #[test]
    fn spatial_distance_examples() {
        let x = two_node_data(&[[5.0, 3.0]]);
        assert_eq!(spatial_distance(&x, 0, 0, 0).unwrap(), 0.0);
        assert_eq!(spatial_distance(&x, 0, 1, 0).unwrap(), 2.0);
        // Two samples with diffs 1 and 3 average to 2.
        let x = two_node_data(&[[1.0, 2.0], [0.0, 3.0]]);
        assert_eq!(spatial_distance(&x, 0, 1, 0).unwrap(), 2.0);
    }

    #[test]
    fn initial_stg_identical_stations_form_complete_graph() {
        let x = DenseTensor::from_fn(&[3, 2, 4, 2], |idx| 7.0 + idx[1] as f64);
        let a = build_initial_stg(&x, &defaults()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { 0.0 } else { 1.0 };
                assert_eq!(a.get(i, j), expect);
            }
        }
    }

    #[test]
    fn initial_stg_distant_stations_disconnect() {
        let x = two_node_data(&[[0.0, 1.0]]);
        let a = build_initial_stg(&x, &defaults()).unwrap();
        assert_eq!(a.get(0, 1), 0.0);
    }

    #[test]
    fn initial_stg_single_node_is_zero() {
        let x = DenseTensor::from_fn(&[2, 1, 1, 1], |_| 3.0);
        let a = build_initial_stg(&x, &defaults()).unwrap();
        assert_eq!((a.rows(), a.cols()), (1, 1));
        assert_eq!(a.get(0, 0), 0.0);
    }

    #[test]
    fn evolve_from_zero_gives_uniform_increments() {
        let n = 4;
        let g = evolve_stg(&Matrix::zeros(n, n), 3, 2, 1.0).unwrap();
        for t in 0..3 {
            let s = g.slice(t);
            for i in 0..n {
                for j in 0..n {
                    let expect = t as f64 / n as f64;
                    assert!((s.get(i, j) - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn evolve_with_zero_step_is_constant() {
        let a0 = Matrix::from_fn(3, 3, |r, c| if r == c { 0.0 } else { 0.8 });
        let g = evolve_stg(&a0, 5, 2, 0.0).unwrap();
        for t in 0..5 {
            assert!(g.slice(t).max_abs_diff(&a0) == 0.0);
        }
    }

    #[test]
    fn evolve_is_entrywise_monotone_with_unit_row_increments() {
        let a0 = Matrix::from_fn(5, 5, |r, c| {
            if r == c {
                0.0
            } else {
                ((r * 3 + c * 7) % 4) as f64 * 0.25
            }
        });
        let alpha = 0.7;
        let g = evolve_stg(&a0, 6, 3, alpha).unwrap();
        for t in 1..6 {
            let delta = g.slice(t).sub(&g.slice(t - 1));
            for i in 0..5 {
                let row_sum: f64 = delta.row(i).iter().sum();
                assert!((row_sum - alpha).abs() < 1e-10);
                assert!(delta.row(i).iter().all(|&d| d > 0.0));
            }
        }
    }

    #[test]
    fn evolve_rejects_oversized_rank() {
        assert!(matches!(
            evolve_stg(&Matrix::zeros(3, 3), 4, 5, 1.0),
            Err(Error::RankExceedsExtent { .. })
        ));
    }

    #[test]
    fn kernel_stg_slices_are_valid() {
        let x = DenseTensor::from_fn(&[4, 3, 5, 2], |idx| {
            ((idx[0] * 7 + idx[1] * 5 + idx[2] * 3 + idx[3]) % 11) as f64 * 0.05
        });
        let opts = StgOptions {
            mode: StgMode::Kernel,
            ..StgOptions::default()
        };
        let g = build_stg(&x, &opts).unwrap();
        for t in 0..3 {
            let s = g.slice(t);
            assert!(s.is_symmetric(0.0));
            for i in 0..5 {
                assert_eq!(s.get(i, i), 0.0);
                for j in 0..5 {
                    let w = s.get(i, j);
                    assert!(w == 0.0 || (0.5..=1.0).contains(&w), "weight {w}");
                }
            }
        }
    }

    #[test]
    fn ttg_constant_node_is_complete() {
        // Node 0 constant in time, node 1 strongly varying.
        let x = DenseTensor::from_fn(&[2, 4, 2, 1], |idx| {
            if idx[2] == 0 {
                2.5
            } else {
                idx[1] as f64 * 10.0
            }
        });
        let g = build_ttg(&x, &defaults()).unwrap();
        let s0 = g.slice(0);
        for t1 in 0..4 {
            for t2 in 0..4 {
                let expect = if t1 == t2 { 0.0 } else { 1.0 };
                assert_eq!(s0.get(t1, t2), expect);
            }
        }
        let s1 = g.slice(1);
        assert_eq!(s1.get(0, 3), 0.0);
        assert_eq!(s1.get(1, 1), 0.0);
    }
}
