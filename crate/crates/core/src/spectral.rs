//! Laplacians, spectral scaling, and Chebyshev filter stacks.
//!
//! Each adjacency slice of a tensor graph becomes a stack of polynomial graph
//! filters: `L = I - D^{-1/2} A D^{-1/2}` is rescaled to `L_hat = 2L/lambda_max - I`
//! (spectrum in [-1, 1]), then the Chebyshev recursion
//! `T_0 = I, T_1 = L_hat, T_k = 2 L_hat T_{k-1} - T_{k-2}` produces K filter
//! matrices. Lifting applies this per slice, growing an `n x n x S` graph into
//! the `n x n x K x S` tensor the convolution layers consume.

use crate::error::{Error, Result};
use crate::graph::{SpatialTensorGraph, TemporalTensorGraph};
use crate::matrix::Matrix;
use crate::tensor::DenseTensor;

/// Shift added before power iteration so the dominant eigenvalue of the
/// shifted operator is the largest Laplacian eigenvalue plus the shift.
const POWER_SHIFT: f64 = 2.0;
const POWER_TOL: f64 = 1e-6;
const POWER_CAP: usize = 1000;

/// Symmetric normalized Laplacian `I - D^{-1/2} A D^{-1/2}`.
///
/// Isolated nodes (zero degree) keep `D^{-1/2} = 0`, leaving a bare 1 on the
/// diagonal. For symmetric input the spectrum lies in [0, 2].
pub fn normalized_laplacian(a: &Matrix) -> Result<Matrix> {
    let n = a.rows();
    if a.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "normalized_laplacian",
            expected: vec![n, n],
            got: vec![a.rows(), a.cols()],
        });
    }
    a.ensure_finite("normalized_laplacian")?;
    if a.data().iter().any(|&v| v < 0.0) {
        return Err(Error::InvalidArgument {
            op: "normalized_laplacian",
            message: "adjacency entries must be non-negative".into(),
        });
    }
    let inv_sqrt_deg: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = a.row(i).iter().sum();
            if d > 0.0 {
                1.0 / d.sqrt()
            } else {
                0.0
            }
        })
        .collect();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt_deg[i] * a.get(i, j) * inv_sqrt_deg[j]
    }))
}

/// Largest-eigenvalue estimate with a fallback marker.
#[derive(Clone, Copy, Debug)]
pub struct LambdaMax {
    pub value: f64,
    /// True when power iteration hit its cap and the value fell back to 2.
    pub warned: bool,
}

/// Largest eigenvalue of a symmetric Laplacian via shifted power iteration.
///
/// The iteration runs on `l + 2I`, whose dominant eigenvalue is
/// `lambda_max + 2` (the Laplacian spectrum sits in [0, 2], so shifting makes
/// the target eigenvalue the largest in magnitude). If the relative change
/// fails to settle below 1e-6 within 1000 iterations the result falls back to
/// 2 with `warned` set. The value is clamped to [1e-6, 2 + 1e-6].
pub fn estimate_lambda_max(l: &Matrix) -> Result<LambdaMax> {
    let n = l.rows();
    if l.cols() != n || n == 0 {
        return Err(Error::ShapeMismatch {
            op: "estimate_lambda_max",
            expected: vec![n.max(1), n.max(1)],
            got: vec![l.rows(), l.cols()],
        });
    }
    if !l.is_symmetric(1e-8) {
        return Err(Error::InvalidArgument {
            op: "estimate_lambda_max",
            message: "matrix must be symmetric to 1e-8".into(),
        });
    }
    let m = Matrix::from_fn(n, n, |i, j| {
        l.get(i, j) + if i == j { POWER_SHIFT } else { 0.0 }
    });
    // Deterministic start with a gradient: an all-equal vector can be exactly
    // orthogonal to the dominant eigenvector (the 2-node path is).
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
    let norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    x.iter_mut().for_each(|v| *v /= norm);

    let mut estimate = f64::NAN;
    for _ in 0..POWER_CAP {
        let mut y = vec![0.0; n];
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = m.row(i).iter().zip(&x).map(|(a, b)| a * b).sum();
        }
        let rayleigh: f64 = x.iter().zip(&y).map(|(a, b)| a * b).sum();
        let ynorm = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ynorm == 0.0 {
            // l + 2I annihilated the start vector; only possible off-spec.
            break;
        }
        y.iter_mut().for_each(|v| *v /= ynorm);
        x = y;
        if estimate.is_finite() && (rayleigh - estimate).abs() <= POWER_TOL * rayleigh.abs().max(1.0)
        {
            let lam = (rayleigh - POWER_SHIFT).clamp(1e-6, 2.0 + 1e-6);
            return Ok(LambdaMax {
                value: lam,
                warned: false,
            });
        }
        estimate = rayleigh;
    }
    Ok(LambdaMax {
        value: 2.0,
        warned: true,
    })
}

/// Chebyshev polynomial filters of one Laplacian.
#[derive(Clone, Debug)]
pub struct ChebyshevStack {
    /// `n x n x K`; slice k holds `T_k(L_hat)`.
    pub filters: DenseTensor,
    /// The spectral scaling constant used to form `L_hat`.
    pub lambda_max: f64,
}

/// Build `T_0 .. T_{K-1}` evaluated at `L_hat = 2 l / lambda_max - I`.
pub fn chebyshev_stack(l: &Matrix, lambda_max: f64, k: usize) -> Result<ChebyshevStack> {
    let n = l.rows();
    if l.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "chebyshev_stack",
            expected: vec![n, n],
            got: vec![l.rows(), l.cols()],
        });
    }
    if k < 1 {
        return Err(Error::InvalidArgument {
            op: "chebyshev_stack",
            message: "filter count K must be at least 1".into(),
        });
    }
    if !(lambda_max > 0.0) {
        return Err(Error::InvalidArgument {
            op: "chebyshev_stack",
            message: format!("lambda_max must be positive, got {lambda_max}"),
        });
    }
    let scaled = Matrix::from_fn(n, n, |i, j| {
        2.0 * l.get(i, j) / lambda_max - if i == j { 1.0 } else { 0.0 }
    });
    let mut filters = DenseTensor::zeros(&[n, n, k]);
    let mut prev2 = Matrix::eye(n);
    filters.set_slice_last(0, &prev2);
    if k == 1 {
        return Ok(ChebyshevStack {
            filters,
            lambda_max,
        });
    }
    let mut prev1 = scaled.clone();
    filters.set_slice_last(1, &prev1);
    for kk in 2..k {
        let next = scaled.matmul(&prev1).scale(2.0).sub(&prev2);
        filters.set_slice_last(kk, &next);
        prev2 = prev1;
        prev1 = next;
    }
    Ok(ChebyshevStack {
        filters,
        lambda_max,
    })
}

/// Which graph a lifted filter tensor came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Spatial,
    Temporal,
}

/// Per-slice Chebyshev stacks of a whole tensor graph.
#[derive(Clone, Debug)]
pub struct LiftedGraph {
    /// `n x n x K x S`.
    pub filters: DenseTensor,
    pub provenance: Provenance,
    /// Spectral constant used for each slice.
    pub lambda_max: Vec<f64>,
    /// True when any slice's power iteration fell back to the default.
    pub warned: bool,
}

impl LiftedGraph {
    pub fn n(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn k(&self) -> usize {
        self.filters.shape()[2]
    }

    pub fn slices(&self) -> usize {
        self.filters.shape()[3]
    }

    /// Filter matrix `T_k` of slice `s`.
    pub fn filter(&self, k: usize, s: usize) -> Matrix {
        let n = self.n();
        Matrix::from_fn(n, n, |i, j| self.filters.get(&[i, j, k, s]))
    }

    /// A graph whose every slice is the single identity filter (K = 1).
    /// Convolving with it reduces the layer to a pure channel map, which is
    /// how a graph is ablated away.
    pub fn identity(n: usize, slices: usize, provenance: Provenance) -> LiftedGraph {
        let mut filters = DenseTensor::zeros(&[n, n, 1, slices]);
        for s in 0..slices {
            for i in 0..n {
                filters.set(&[i, i, 0, s], 1.0);
            }
        }
        LiftedGraph {
            filters,
            provenance,
            lambda_max: vec![1.0; slices],
            warned: false,
        }
    }
}

/// Per-slice preprocessing applied before the Laplacian.
#[derive(Clone, Copy, Debug)]
pub struct LiftOptions {
    /// Number of Chebyshev filters per slice.
    pub k: usize,
    /// Replace each slice by its symmetric part. Evolution makes spatial
    /// slices asymmetric, and the spectral machinery needs symmetry.
    pub symmetrize: bool,
    /// Zero out negative entries first (low-rank reconstructions may dip
    /// below zero).
    pub clamp_negative: bool,
}

impl Default for LiftOptions {
    fn default() -> Self {
        Self {
            k: 3,
            symmetrize: true,
            clamp_negative: true,
        }
    }
}

/// Lift every slice of an `n x n x S` adjacency stack to a Chebyshev stack.
pub fn lift_slices(
    weights: &DenseTensor,
    opts: &LiftOptions,
    provenance: Provenance,
) -> Result<LiftedGraph> {
    if weights.rank() != 3 || weights.shape()[0] != weights.shape()[1] {
        return Err(Error::ShapeMismatch {
            op: "lift_slices",
            expected: vec![weights.shape()[0], weights.shape()[0], 0],
            got: weights.shape().to_vec(),
        });
    }
    let n = weights.shape()[0];
    let s_count = weights.shape()[2];
    let mut filters = DenseTensor::zeros(&[n, n, opts.k, s_count]);
    let mut lambdas = Vec::with_capacity(s_count);
    let mut warned = false;
    for s in 0..s_count {
        let mut a = weights.slice_last(s);
        if opts.clamp_negative {
            a = a.relu();
        }
        if opts.symmetrize {
            a = a.symmetrized();
        }
        let stack = (|| {
            let l = normalized_laplacian(&a)?;
            let lam = estimate_lambda_max(&l)?;
            let st = chebyshev_stack(&l, lam.value, opts.k)?;
            Ok::<_, Error>((st, lam.warned))
        })()
        .map_err(|e| e.in_slice(s))?;
        warned |= stack.1;
        lambdas.push(stack.0.lambda_max);
        for k in 0..opts.k {
            for i in 0..n {
                for j in 0..n {
                    filters.set(&[i, j, k, s], stack.0.filters.get(&[i, j, k]));
                }
            }
        }
    }
    Ok(LiftedGraph {
        filters,
        provenance,
        lambda_max: lambdas,
        warned,
    })
}

/// Lift a spatial graph to `N x N x K x T`.
pub fn lift_stg(g: &SpatialTensorGraph, opts: &LiftOptions) -> Result<LiftedGraph> {
    lift_slices(&g.weights, opts, Provenance::Spatial)
}

/// Lift a temporal graph to `T x T x K x N`.
pub fn lift_ttg(g: &TemporalTensorGraph, opts: &LiftOptions) -> Result<LiftedGraph> {
    lift_slices(&g.weights, opts, Provenance::Temporal)
}
