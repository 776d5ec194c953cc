//! Independent reference implementations used to cross-check the main
//! engine in integration tests.
//!
//! Everything here is written as directly as possible — plain index loops,
//! a textbook Jacobi eigensolver, central finite differences — and shares
//! no code path with the production routines it validates. Speed is not a
//! goal; being obviously correct is.

use stgf_core::{DenseTensor, Matrix};

/// Mode-`mode` tensor-matrix product computed by direct index loops.
///
/// For every multi-index `i` of the result,
/// `out[i] = sum_j m[i_mode, j] * x[i with i_mode := j]`.
/// No unfolding, no stride tricks — each element is summed independently.
pub fn naive_mode_n_product(x: &DenseTensor, m: &Matrix, mode: usize) -> DenseTensor {
    assert!(mode < x.rank(), "mode out of range");
    assert_eq!(m.cols(), x.shape()[mode], "matrix cols must match mode extent");
    let mut out_shape = x.shape().to_vec();
    out_shape[mode] = m.rows();
    DenseTensor::from_fn(&out_shape, |idx| {
        let mut src = idx.to_vec();
        let mut acc = 0.0;
        for j in 0..x.shape()[mode] {
            src[mode] = j;
            acc += m.get(idx[mode], j) * x.get(&src);
        }
        acc
    })
}

/// Eigendecomposition of a symmetric matrix by the cyclic Jacobi method.
///
/// Returns `(eigenvalues, eigenvectors)` with eigenvalues ascending and the
/// k-th column of the eigenvector matrix paired with the k-th eigenvalue.
/// Panics if `a` is not square. Symmetry is assumed, not checked; feed it
/// `0.5 * (A + A^T)` if in doubt.
pub fn eig_sym(a: &Matrix) -> (Vec<f64>, Matrix) {
    let n = a.rows();
    assert_eq!(n, a.cols(), "eig_sym needs a square matrix");
    let mut m = a.clone();
    let mut v = Matrix::eye(n);
    if n <= 1 {
        let vals = (0..n).map(|i| m.get(i, i)).collect();
        return (vals, v);
    }
    let tol = 1e-14 * a.frobenius_norm().max(1.0);
    for _sweep in 0..100 {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m.get(p, q).abs();
            }
        }
        if off < tol {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m.get(p, p);
                let aqq = m.get(q, q);
                let theta = (aqq - app) / (2.0 * apq);
                // Smaller-magnitude root keeps the rotation angle <= pi/4.
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m.get(k, p);
                    let mkq = m.get(k, q);
                    m.set(k, p, c * mkp - s * mkq);
                    m.set(k, q, s * mkp + c * mkq);
                }
                for k in 0..n {
                    let mpk = m.get(p, k);
                    let mqk = m.get(q, k);
                    m.set(p, k, c * mpk - s * mqk);
                    m.set(q, k, s * mpk + c * mqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m.get(i, i).partial_cmp(&m.get(j, j)).unwrap());
    let vals: Vec<f64> = order.iter().map(|&i| m.get(i, i)).collect();
    let vecs = Matrix::from_fn(n, n, |r, c| v.get(r, order[c]));
    (vals, vecs)
}

/// Eigenvalues of a symmetric matrix, ascending.
pub fn sym_eigenvalues(a: &Matrix) -> Vec<f64> {
    eig_sym(a).0
}

/// Singular values of an arbitrary matrix, descending, computed from the
/// eigenvalues of the Gram matrix `A^T A` (or `A A^T`, whichever is smaller).
pub fn gram_singular_values(a: &Matrix) -> Vec<f64> {
    let (r, c) = (a.rows(), a.cols());
    let gram = if c <= r {
        a.transpose().matmul(a)
    } else {
        a.matmul(&a.transpose())
    };
    let mut vals: Vec<f64> = sym_eigenvalues(&gram)
        .into_iter()
        .map(|l| l.max(0.0).sqrt())
        .collect();
    vals.reverse();
    vals
}

/// Spatial graph-convolution layer computed with seven nested loops.
///
/// * `x` — `[batch, time, node, c_in]`
/// * `filters` — `[node, node, k, time]` polynomial filter stack
/// * `w` — `[k * c_in, c_out, time]`, k-major rows
///
/// `out[b,t,n,co] = sum_{k,j,ci} filters[n,j,k,t] * x[b,t,j,ci] * w[k*c_in+ci, co, t]`
pub fn naive_sgcl(x: &DenseTensor, filters: &DenseTensor, w: &DenseTensor) -> DenseTensor {
    let (b_n, t_n, n_n, ci_n) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k_n = filters.shape()[2];
    let co_n = w.shape()[1];
    assert_eq!(filters.shape(), &[n_n, n_n, k_n, t_n]);
    assert_eq!(w.shape(), &[k_n * ci_n, co_n, t_n]);
    DenseTensor::from_fn(&[b_n, t_n, n_n, co_n], |idx| {
        let (b, t, n, co) = (idx[0], idx[1], idx[2], idx[3]);
        let mut acc = 0.0;
        for k in 0..k_n {
            for j in 0..n_n {
                for ci in 0..ci_n {
                    acc += filters.get(&[n, j, k, t])
                        * x.get(&[b, t, j, ci])
                        * w.get(&[k * ci_n + ci, co, t]);
                }
            }
        }
        acc
    })
}

/// Temporal graph-convolution layer computed with seven nested loops.
///
/// * `x` — `[batch, time, node, c_in]`
/// * `filters` — `[time, time, k, node]` polynomial filter stack
/// * `w` — `[k * c_in, c_out, node]`, k-major rows
///
/// `out[b,t,n,co] = sum_{k,s,ci} filters[t,s,k,n] * x[b,s,n,ci] * w[k*c_in+ci, co, n]`
pub fn naive_tgcl(x: &DenseTensor, filters: &DenseTensor, w: &DenseTensor) -> DenseTensor {
    let (b_n, t_n, n_n, ci_n) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let k_n = filters.shape()[2];
    let co_n = w.shape()[1];
    assert_eq!(filters.shape(), &[t_n, t_n, k_n, n_n]);
    assert_eq!(w.shape(), &[k_n * ci_n, co_n, n_n]);
    DenseTensor::from_fn(&[b_n, t_n, n_n, co_n], |idx| {
        let (b, t, n, co) = (idx[0], idx[1], idx[2], idx[3]);
        let mut acc = 0.0;
        for k in 0..k_n {
            for s in 0..t_n {
                for ci in 0..ci_n {
                    acc += filters.get(&[t, s, k, n])
                        * x.get(&[b, s, n, ci])
                        * w.get(&[k * ci_n + ci, co, n]);
                }
            }
        }
        acc
    })
}

/// Central finite difference of a scalar function at `x0` with step `h`.
pub fn central_diff(mut f: impl FnMut(f64) -> f64, x0: f64, h: f64) -> f64 {
    (f(x0 + h) - f(x0 - h)) / (2.0 * h)
}

/// Relative gap `|a - b| / max(|a|, |b|, floor)` used by tolerance checks.
pub fn relative_gap(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

/// Deterministic pseudo-random stream (SplitMix64) independent of the RNGs
/// used by the engine itself.
pub struct TestRng(u64);

impl TestRng {
    pub fn new(seed: u64) -> Self {
        Self(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform in [-1, 1).
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0
    }

    /// Uniform integer in `[0, bound)`.
    pub fn below(&mut self, bound: usize) -> usize {
        (self.next_u64() % bound as u64) as usize
    }
}

/// Random tensor with entries in [-1, 1), deterministic per seed.
pub fn seeded_tensor(shape: &[usize], seed: u64) -> DenseTensor {
    let mut rng = TestRng::new(seed);
    DenseTensor::from_fn(shape, |_| rng.unit())
}

/// Random matrix with entries in [-1, 1), deterministic per seed.
pub fn seeded_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
    let mut rng = TestRng::new(seed);
    Matrix::from_fn(rows, cols, |_, _| rng.unit())
}
