//! Joint low-rank compression of the two tensor graphs.
//!
//! The spatial graph `A` (N x N x T) and temporal graph `B` (T x T x N) are
//! approximated together through one shared node factor U (N x r_N) and one
//! shared time factor V (T x r_T), both with orthonormal columns:
//!
//! ```text
//! A ~ core_a x_1 U x_2 U x_3 V        B ~ core_b x_1 V x_2 V x_3 U
//! ```
//!
//! The shared factors are the bonds coupling the pair: the same U that spans
//! node space in A spans the slice mode of B, so whatever node structure the
//! two graphs have in common is captured once. Fitting alternates closed-form
//! core updates (orthonormal projection) with orthonormal Procrustes factor
//! updates, each guarded so the joint objective never increases. Ignoring the
//! coupling (fitting each tensor alone) would reduce this to truncated HOSVD,
//! which is the baseline the shared version is measured against.

use crate::error::{Error, Result};
use crate::graph::{SpatialTensorGraph, TemporalTensorGraph};
use crate::matrix::Matrix;
use crate::svd::svd;
use crate::tensor::DenseTensor;

/// Fit controls for [`peps_fit`].
#[derive(Clone, Copy, Debug)]
pub struct PepsOptions {
    /// Node-factor rank, at most N.
    pub r_n: usize,
    /// Time-factor rank, at most T.
    pub r_t: usize,
    pub max_sweeps: usize,
    /// Relative objective-decrease threshold that ends the sweep loop.
    pub tol: f64,
}

impl PepsOptions {
    /// Default ranks for a given graph size: N/4 and T/2, rounded up.
    pub fn defaults_for(n: usize, t: usize) -> Self {
        Self {
            r_n: n.div_ceil(4),
            r_t: t.div_ceil(2),
            max_sweeps: 50,
            tol: 1e-6,
        }
    }
}

/// Fitted shared-factor pair.
#[derive(Clone, Debug)]
pub struct PepsPair {
    /// N x r_N, orthonormal columns.
    pub node_factor: Matrix,
    /// T x r_T, orthonormal columns.
    pub time_factor: Matrix,
    /// r_N x r_N x r_T.
    pub core_a: DenseTensor,
    /// r_T x r_T x r_N.
    pub core_b: DenseTensor,
    /// Final joint objective: sum of both squared Frobenius residuals.
    pub joint_error: f64,
    pub sweeps_used: usize,
    /// Objective after each completed sweep.
    pub history: Vec<f64>,
}

impl PepsPair {
    pub fn r_n(&self) -> usize {
        self.node_factor.cols()
    }

    pub fn r_t(&self) -> usize {
        self.time_factor.cols()
    }
}

/// Parameter count of the pair representation.
fn pair_param_count(n: usize, t: usize, r_n: usize, r_t: usize) -> usize {
    n * r_n + t * r_t + r_n * r_n * r_t + r_t * r_t * r_n
}

/// How many dense-graph parameters one pair parameter replaces:
/// `(N^2 T + T^2 N) / (N r_N + T r_T + r_N^2 r_T + r_T^2 r_N)`.
pub fn compression_ratio(p: &PepsPair, n: usize, t: usize) -> f64 {
    assert_eq!(p.node_factor.rows(), n, "node extent mismatch");
    assert_eq!(p.time_factor.rows(), t, "time extent mismatch");
    let dense = n * n * t + t * t * n;
    dense as f64 / pair_param_count(n, t, p.r_n(), p.r_t()) as f64
}

/// Orthonormal polar factor of a tall matrix (the Procrustes maximizer).
fn polar_factor(m: &Matrix) -> Result<Matrix> {
    let f = svd(m)?;
    Ok(f.u.matmul(&f.v.transpose()))
}

/// Leading left singular vectors of the two node-mode (or time-mode)
/// unfoldings, concatenated.
fn init_factor(x: &DenseTensor, rank: usize) -> Result<Matrix> {
    let joint = x.unfold(0)?.hcat(&x.unfold(1)?);
    Ok(svd(&joint)?.u.take_cols(rank))
}

fn core_a_update(a: &DenseTensor, u: &Matrix, v: &Matrix) -> Result<DenseTensor> {
    a.mode_n_product(&u.transpose(), 0)?
        .mode_n_product(&u.transpose(), 1)?
        .mode_n_product(&v.transpose(), 2)
}

fn core_b_update(b: &DenseTensor, u: &Matrix, v: &Matrix) -> Result<DenseTensor> {
    b.mode_n_product(&v.transpose(), 0)?
        .mode_n_product(&v.transpose(), 1)?
        .mode_n_product(&u.transpose(), 2)
}

fn reconstruct_a(core_a: &DenseTensor, u: &Matrix, v: &Matrix) -> Result<DenseTensor> {
    core_a
        .mode_n_product(u, 0)?
        .mode_n_product(u, 1)?
        .mode_n_product(v, 2)
}

fn reconstruct_b(core_b: &DenseTensor, u: &Matrix, v: &Matrix) -> Result<DenseTensor> {
    core_b
        .mode_n_product(v, 0)?
        .mode_n_product(v, 1)?
        .mode_n_product(u, 2)
}

fn joint_objective(
    a: &DenseTensor,
    b: &DenseTensor,
    core_a: &DenseTensor,
    core_b: &DenseTensor,
    u: &Matrix,
    v: &Matrix,
) -> Result<f64> {
    let ra = reconstruct_a(core_a, u, v)?.sub(a).frobenius_norm();
    let rb = reconstruct_b(core_b, u, v)?.sub(b).frobenius_norm();
    Ok(ra * ra + rb * rb)
}

/// Procrustes candidate for the node factor: the polar factor of the summed
/// cross terms from U's three slots (A modes 1 and 2, B mode 3), with the
/// current factors standing in for the slots not being solved.
fn node_factor_candidate(
    a: &DenseTensor,
    b: &DenseTensor,
    core_a: &DenseTensor,
    core_b: &DenseTensor,
    u: &Matrix,
    v: &Matrix,
) -> Result<Matrix> {
    let g1 = core_a
        .mode_n_product(u, 1)?
        .mode_n_product(v, 2)?
        .unfold(0)?;
    let m1 = a.unfold(0)?.matmul(&g1.transpose());
    let g2 = core_a
        .mode_n_product(u, 0)?
        .mode_n_product(v, 2)?
        .unfold(1)?;
    let m2 = a.unfold(1)?.matmul(&g2.transpose());
    let g3 = core_b
        .mode_n_product(v, 0)?
        .mode_n_product(v, 1)?
        .unfold(2)?;
    let m3 = b.unfold(2)?.matmul(&g3.transpose());
    polar_factor(&m1.add(&m2).add(&m3))
}

/// Mirror-image candidate for the time factor (B modes 1 and 2, A mode 3).
fn time_factor_candidate(
    a: &DenseTensor,
    b: &DenseTensor,
    core_a: &DenseTensor,
    core_b: &DenseTensor,
    u: &Matrix,
    v: &Matrix,
) -> Result<Matrix> {
    let g1 = core_b
        .mode_n_product(v, 1)?
        .mode_n_product(u, 2)?
        .unfold(0)?;
    let m1 = b.unfold(0)?.matmul(&g1.transpose());
    let g2 = core_b
        .mode_n_product(v, 0)?
        .mode_n_product(u, 2)?
        .unfold(1)?;
    let m2 = b.unfold(1)?.matmul(&g2.transpose());
    let g3 = core_a
        .mode_n_product(u, 0)?
        .mode_n_product(u, 1)?
        .unfold(2)?;
    let m3 = a.unfold(2)?.matmul(&g3.transpose());
    polar_factor(&m1.add(&m2).add(&m3))
}

/// Jointly fit both graphs with shared factors by guarded alternating least
/// squares. The objective is non-increasing across sweeps by construction:
/// core updates are exact projections and factor candidates are only accepted
/// when they lower the objective.
pub fn peps_fit(
    a: &SpatialTensorGraph,
    b: &TemporalTensorGraph,
    opts: &PepsOptions,
) -> Result<PepsPair> {
    let (n, t) = (a.n_nodes(), a.t_steps());
    if b.t_steps() != t || b.n_nodes() != n {
        return Err(Error::ShapeMismatch {
            op: "peps_fit",
            expected: vec![t, t, n],
            got: b.weights.shape().to_vec(),
        });
    }
    if opts.r_n == 0 || opts.r_n > n {
        return Err(Error::RankExceedsExtent {
            op: "peps_fit",
            mode: 0,
            rank: opts.r_n,
            extent: n,
        });
    }
    if opts.r_t == 0 || opts.r_t > t {
        return Err(Error::RankExceedsExtent {
            op: "peps_fit",
            mode: 2,
            rank: opts.r_t,
            extent: t,
        });
    }
    if opts.max_sweeps == 0 {
        return Err(Error::InvalidArgument {
            op: "peps_fit",
            message: "max_sweeps must be at least 1".into(),
        });
    }
    if !(opts.tol > 0.0) {
        return Err(Error::InvalidArgument {
            op: "peps_fit",
            message: format!("tol must be positive, got {}", opts.tol),
        });
    }
    let (wa, wb) = (&a.weights, &b.weights);
    wa.ensure_finite("peps_fit")?;
    wb.ensure_finite("peps_fit")?;

    let mut u = init_factor(wa, opts.r_n)?;
    let mut v = init_factor(wb, opts.r_t)?;
    let mut core_a = core_a_update(wa, &u, &v)?;
    let mut core_b = core_b_update(wb, &u, &v)?;
    let mut j = joint_objective(wa, wb, &core_a, &core_b, &u, &v)?;

    let mut history = Vec::new();
    for _sweep in 0..opts.max_sweeps {
        let j_before = j;

        let u_cand = node_factor_candidate(wa, wb, &core_a, &core_b, &u, &v)?;
        let ca = core_a_update(wa, &u_cand, &v)?;
        let cb = core_b_update(wb, &u_cand, &v)?;
        let j_cand = joint_objective(wa, wb, &ca, &cb, &u_cand, &v)?;
        if j_cand <= j {
            u = u_cand;
            core_a = ca;
            core_b = cb;
            j = j_cand;
        }

        let v_cand = time_factor_candidate(wa, wb, &core_a, &core_b, &u, &v)?;
        let ca = core_a_update(wa, &u, &v_cand)?;
        let cb = core_b_update(wb, &u, &v_cand)?;
        let j_cand = joint_objective(wa, wb, &ca, &cb, &u, &v_cand)?;
        if j_cand <= j {
            v = v_cand;
            core_a = ca;
            core_b = cb;
            j = j_cand;
        }

        history.push(j);
        if j_before - j <= opts.tol * j_before.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(PepsPair {
        node_factor: u,
        time_factor: v,
        core_a,
        core_b,
        joint_error: j,
        sweeps_used: history.len(),
        history,
    })
}

/// Expand a fitted pair back into full graph tensors.
pub fn peps_reconstruct(p: &PepsPair) -> Result<(DenseTensor, DenseTensor)> {
    let a = reconstruct_a(&p.core_a, &p.node_factor, &p.time_factor)?;
    let b = reconstruct_b(&p.core_b, &p.node_factor, &p.time_factor)?;
    Ok((a, b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{GraphParams, StgMode};

    fn graph_pair(wa: DenseTensor, wb: DenseTensor) -> (SpatialTensorGraph, TemporalTensorGraph) {
        let p = GraphParams::default();
        (
            SpatialTensorGraph {
                weights: wa,
                sigma2: p.sigma2,
                epsilon: p.epsilon,
                mode: StgMode::Kernel,
            },
            TemporalTensorGraph {
                weights: wb,
                sigma2: p.sigma2,
                epsilon: p.epsilon,
            },
        )
    }

    fn pseudo(shape: &[usize], seed: u64) -> DenseTensor {
        let mut state = seed.wrapping_mul(0x9E3779B97F4A7C15) | 1;
        DenseTensor::from_fn(shape, |_| {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            (state >> 11) as f64 / (1u64 << 53) as f64
        })
    }

    #[test]
    fn full_rank_fit_is_exact_after_one_sweep() {
        let (n, t) = (4, 3);
        let (a, b) = graph_pair(pseudo(&[n, n, t], 1), pseudo(&[t, t, n], 2));
        let opts = PepsOptions {
            r_n: n,
            r_t: t,
            max_sweeps: 1,
            tol: 1e-6,
        };
        let p = peps_fit(&a, &b, &opts).unwrap();
        assert!(p.joint_error < 1e-12, "J = {}", p.joint_error);
        let (ra, rb) = peps_reconstruct(&p).unwrap();
        assert!(ra.max_abs_diff(&a.weights) < 1e-8);
        assert!(rb.max_abs_diff(&b.weights) < 1e-8);
    }

    #[test]
    fn shared_rank_one_instance_recovers_exactly() {
        let (n, t) = (5, 4);
        let uvec: Vec<f64> = (0..n).map(|i| (i as f64 + 1.0) / 3.0).collect();
        let vvec: Vec<f64> = (0..t).map(|i| 1.0 - 0.2 * i as f64).collect();
        let wa = DenseTensor::from_fn(&[n, n, t], |idx| {
            2.0 * uvec[idx[0]] * uvec[idx[1]] * vvec[idx[2]]
        });
        let wb = DenseTensor::from_fn(&[t, t, n], |idx| {
            -0.5 * vvec[idx[0]] * vvec[idx[1]] * uvec[idx[2]]
        });
        let (a, b) = graph_pair(wa, wb);
        let opts = PepsOptions {
            r_n: 1,
            r_t: 1,
            max_sweeps: 10,
            tol: 1e-12,
        };
        let p = peps_fit(&a, &b, &opts).unwrap();
        assert!(p.joint_error < 1e-10, "J = {}", p.joint_error);
        let (ra, rb) = peps_reconstruct(&p).unwrap();
        assert!(ra.max_abs_diff(&a.weights) < 1e-10);
        assert!(rb.max_abs_diff(&b.weights) < 1e-10);
    }

    #[test]
    fn zero_graphs_reconstruct_to_zero() {
        let (a, b) = graph_pair(DenseTensor::zeros(&[3, 3, 2]), DenseTensor::zeros(&[2, 2, 3]));
        let p = peps_fit(&a, &b, &PepsOptions::defaults_for(3, 2)).unwrap();
        let (ra, rb) = peps_reconstruct(&p).unwrap();
        assert_eq!(ra.max_abs(), 0.0);
        assert_eq!(rb.max_abs(), 0.0);
        assert_eq!(p.joint_error, 0.0);
    }

    #[test]
    fn objective_never_increases_across_sweeps() {
        for seed in 0..6u64 {
            let (a, b) = graph_pair(pseudo(&[6, 6, 4], 10 + seed), pseudo(&[4, 4, 6], 50 + seed));
            let opts = PepsOptions {
                r_n: 2,
                r_t: 2,
                max_sweeps: 20,
                tol: 1e-14,
            };
            let p = peps_fit(&a, &b, &opts).unwrap();
            for w in p.history.windows(2) {
                assert!(w[1] <= w[0] + 1e-9, "seed {seed}: {} -> {}", w[0], w[1]);
            }
        }
    }

    #[test]
    fn orthonormal_factors() {
        let (a, b) = graph_pair(pseudo(&[6, 6, 4], 3), pseudo(&[4, 4, 6], 4));
        let opts = PepsOptions {
            r_n: 3,
            r_t: 2,
            max_sweeps: 15,
            tol: 1e-10,
        };
        let p = peps_fit(&a, &b, &opts).unwrap();
        let gu = p.node_factor.transpose().matmul(&p.node_factor);
        let gv = p.time_factor.transpose().matmul(&p.time_factor);
        assert!(gu.max_abs_diff(&Matrix::eye(3)) < 1e-8);
        assert!(gv.max_abs_diff(&Matrix::eye(2)) < 1e-8);
    }

    #[test]
    fn compression_ratio_examples() {
        let make = |n: usize, t: usize, r_n: usize, r_t: usize| PepsPair {
            node_factor: Matrix::zeros(n, r_n),
            time_factor: Matrix::zeros(t, r_t),
            core_a: DenseTensor::zeros(&[r_n, r_n, r_t]),
            core_b: DenseTensor::zeros(&[r_t, r_t, r_n]),
            joint_error: 0.0,
            sweeps_used: 0,
            history: Vec::new(),
        };
        let r = compression_ratio(&make(64, 12, 8, 4), 64, 12);
        assert!((r - 58368.0 / 944.0).abs() < 1e-12);
        // Full rank with N = T reports ratio below 1: no compression.
        let r = compression_ratio(&make(5, 5, 5, 5), 5, 5);
        assert!((r - 250.0 / 300.0).abs() < 1e-12);
        assert!(r < 1.0);
        let r = compression_ratio(&make(2, 2, 2, 2), 2, 2);
        assert!((r - 16.0 / 24.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_excess_ranks() {
        let (a, b) = graph_pair(pseudo(&[3, 3, 2], 7), pseudo(&[2, 2, 3], 8));
        let opts = PepsOptions {
            r_n: 4,
            r_t: 2,
            max_sweeps: 5,
            tol: 1e-6,
        };
        assert!(matches!(
            peps_fit(&a, &b, &opts),
            Err(Error::RankExceedsExtent { .. })
        ));
    }
}
