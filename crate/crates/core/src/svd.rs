//! Thin singular value decomposition via one-sided (Hestenes) Jacobi
//! rotations.
//!
//! The factorization is deterministic: sweep order is fixed, singular values
//! are sorted in descending order with a stable tie-break, and each left
//! singular vector is oriented so its entry of largest magnitude (first index
//! on ties) is non-negative. Determinism matters because downstream artifacts
//! are required to be byte-reproducible across runs.

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Relative threshold below which a column pair counts as orthogonal.
const ORTH_TOL: f64 = 1e-14;
/// Sweep budget; small dense problems converge in well under ten sweeps.
const MAX_SWEEPS: usize = 64;

/// Thin SVD `a = u * diag(s) * v^T` with `k = min(rows, cols)` columns.
#[derive(Clone, Debug)]
pub struct Svd {
    /// rows x k, orthonormal columns.
    pub u: Matrix,
    /// Singular values, descending.
    pub s: Vec<f64>,
    /// cols x k, orthonormal columns.
    pub v: Matrix,
}

impl Svd {
    /// `u * diag(s) * v^T`.
    pub fn reconstruct(&self) -> Matrix {
        let k = self.s.len();
        let mut us = self.u.clone();
        for c in 0..k {
            for r in 0..us.rows() {
                us[(r, c)] *= self.s[c];
            }
        }
        us.matmul(&self.v.transpose())
    }
}

/// Thin SVD of a dense matrix.
pub fn svd(a: &Matrix) -> Result<Svd> {
    let out = if a.rows() >= a.cols() {
        svd_tall(a)?
    } else {
        // a = (a^T)^T = v' s u'^T, so the factors swap roles.
        let t = svd_tall(&a.transpose())?;
        Svd {
            u: t.v,
            s: t.s,
            v: t.u,
        }
    };
    Ok(normalize_signs(out))
}

/// One-sided Jacobi on a matrix with rows >= cols.
fn svd_tall(a: &Matrix) -> Result<Svd> {
    let (m, n) = (a.rows(), a.cols());
    debug_assert!(m >= n);
    if n == 0 {
        return Ok(Svd {
            u: Matrix::zeros(m, 0),
            s: Vec::new(),
            v: Matrix::zeros(0, 0),
        });
    }
    // Column-major working copies keep the rotated pairs contiguous.
    let mut cols: Vec<Vec<f64>> = (0..n).map(|c| (0..m).map(|r| a.get(r, c)).collect()).collect();
    let mut vcols: Vec<Vec<f64>> = (0..n)
        .map(|c| {
            let mut e = vec![0.0; n];
            e[c] = 1.0;
            e
        })
        .collect();

    // Columns whose norm falls to roundoff scale carry no usable direction;
    // rotating against them cycles forever on noise, so they are skipped.
    let fro: f64 = cols
        .iter()
        .flat_map(|c| c.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    let negligible = (fro * 1e-15).powi(2);

    let mut converged = false;
    for _sweep in 0..MAX_SWEEPS {
        converged = true;
        for p in 0..n {
            for q in (p + 1)..n {
                let (mut alpha, mut beta, mut gamma) = (0.0, 0.0, 0.0);
                for r in 0..m {
                    alpha += cols[p][r] * cols[p][r];
                    beta += cols[q][r] * cols[q][r];
                    gamma += cols[p][r] * cols[q][r];
                }
                if alpha <= negligible || beta <= negligible {
                    continue;
                }
                if gamma.abs() <= ORTH_TOL * (alpha * beta).sqrt() {
                    continue;
                }
                converged = false;
                // Rotation angle that zeroes the off-diagonal of the 2x2 Gram block.
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                for r in 0..m {
                    let (xp, xq) = (cols[p][r], cols[q][r]);
                    cols[p][r] = c * xp - s * xq;
                    cols[q][r] = s * xp + c * xq;
                }
                for r in 0..n {
                    let (xp, xq) = (vcols[p][r], vcols[q][r]);
                    vcols[p][r] = c * xp - s * xq;
                    vcols[q][r] = s * xp + c * xq;
                }
            }
        }
        if converged {
            break;
        }
    }
    if !converged {
        return Err(Error::SvdNonConvergence { rows: m, cols: n });
    }

    // Singular values are the column norms; sort descending (stable on ties).
    let mut order: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = cols
        .iter()
        .map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt())
        .collect();
    order.sort_by(|&i, &j| norms[j].partial_cmp(&norms[i]).unwrap());

    let s: Vec<f64> = order.iter().map(|&i| norms[i]).collect();
    let s_max = s.first().copied().unwrap_or(0.0);
    let zero_tol = s_max * 1e-13;

    let mut u = Matrix::zeros(m, n);
    let mut v = Matrix::zeros(n, n);
    let mut degenerate = Vec::new();
    for (j, &src) in order.iter().enumerate() {
        if s[j] > zero_tol && s[j] > 0.0 {
            for r in 0..m {
                u.set(r, j, cols[src][r] / s[j]);
            }
        } else {
            degenerate.push(j);
        }
        for r in 0..n {
            v.set(r, j, vcols[src][r]);
        }
    }
    // Numerically vanished columns carry no direction; complete them to an
    // orthonormal basis so u always has exactly n orthonormal columns.
    if !degenerate.is_empty() {
        u = complete_columns(u, &degenerate);
    }
    Ok(Svd { u, s, v })
}

/// Replace the listed columns with standard-basis vectors orthonormalized
/// against every other column.
fn complete_columns(mut u: Matrix, missing: &[usize]) -> Matrix {
    let (m, n) = (u.rows(), u.cols());
    let mut filled: Vec<bool> = (0..n).map(|j| !missing.contains(&j)).collect();
    for &j in missing {
        'candidate: for e in 0..m {
            let mut v = vec![0.0; m];
            v[e] = 1.0;
            for _pass in 0..2 {
                for i in 0..n {
                    if !filled[i] {
                        continue;
                    }
                    let dot: f64 = (0..m).map(|r| u.get(r, i) * v[r]).sum();
                    for (r, vr) in v.iter_mut().enumerate() {
                        *vr -= dot * u.get(r, i);
                    }
                }
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.5 {
                for (r, &vr) in v.iter().enumerate() {
                    u.set(r, j, vr / norm);
                }
                filled[j] = true;
                break 'candidate;
            }
        }
    }
    u
}

/// Orient each left singular vector so its largest-magnitude entry (first
/// index on ties) is non-negative, flipping the matching right vector.
fn normalize_signs(mut f: Svd) -> Svd {
    let k = f.s.len();
    for j in 0..k {
        let mut best = 0usize;
        let mut best_abs = f.u.get(0, j).abs();
        for r in 1..f.u.rows() {
            let a = f.u.get(r, j).abs();
            if a > best_abs {
                best_abs = a;
                best = r;
            }
        }
        if f.u.get(best, j) < 0.0 {
            for r in 0..f.u.rows() {
                let x = f.u.get(r, j);
                f.u.set(r, j, -x);
            }
            for r in 0..f.v.rows() {
                let x = f.v.get(r, j);
                f.v.set(r, j, -x);
            }
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;

    fn assert_orthonormal(m: &Matrix, tol: f64) {
        let g = m.transpose().matmul(m);
        let diff = g.max_abs_diff(&Matrix::eye(m.cols()));
        assert!(diff < tol, "gram deviation {diff}");
    }

    #[test]
    fn reconstructs_tall_matrix() {
        let a = Matrix::from_fn(6, 4, |r, c| ((r * 5 + c * 11) % 7) as f64 - 3.0);
        let f = svd(&a).unwrap();
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-12);
        assert_orthonormal(&f.u, 1e-12);
        assert_orthonormal(&f.v, 1e-12);
    }

    #[test]
    fn reconstructs_wide_matrix() {
        let a = Matrix::from_fn(3, 7, |r, c| (r as f64 + 1.0) * (c as f64 - 2.5));
        let f = svd(&a).unwrap();
        assert_eq!(f.s.len(), 3);
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-12);
        assert_orthonormal(&f.u, 1e-12);
        assert_orthonormal(&f.v, 1e-12);
    }

    #[test]
    fn diagonal_singular_values() {
        let a = Matrix::from_vec(2, 2, vec![3.0, 0.0, 0.0, -2.0]).unwrap();
        let f = svd(&a).unwrap();
        assert!((f.s[0] - 3.0).abs() < 1e-14);
        assert!((f.s[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn shear_singular_values_are_golden_ratio() {
        // A = [[1,1],[0,1]] has singular values phi and 1/phi.
        let a = Matrix::from_vec(2, 2, vec![1.0, 1.0, 0.0, 1.0]).unwrap();
        let f = svd(&a).unwrap();
        let phi = (1.0 + 5.0_f64.sqrt()) / 2.0;
        assert!((f.s[0] - phi).abs() < 1e-14);
        assert!((f.s[1] - 1.0 / phi).abs() < 1e-14);
    }

    #[test]
    fn rank_deficient_keeps_orthonormal_factors() {
        // Second and third columns are multiples of the first.
        let a = Matrix::from_fn(5, 3, |r, c| (r + 1) as f64 * (c + 1) as f64);
        let f = svd(&a).unwrap();
        assert!(f.s[1].abs() < 1e-12 && f.s[2].abs() < 1e-12);
        assert_orthonormal(&f.u, 1e-12);
        assert!(f.reconstruct().max_abs_diff(&a) < 1e-12);
    }

    #[test]
    fn sign_convention_is_applied() {
        let a = Matrix::from_fn(4, 3, |r, c| ((r * 7 + c * 13) % 11) as f64 - 5.0);
        let f = svd(&a).unwrap();
        for j in 0..f.s.len() {
            let mut best = 0;
            for r in 1..f.u.rows() {
                if f.u.get(r, j).abs() > f.u.get(best, j).abs() {
                    best = r;
                }
            }
            assert!(f.u.get(best, j) >= 0.0);
        }
    }

    #[test]
    fn zero_matrix_completes_identity_basis() {
        let a = Matrix::zeros(4, 2);
        let f = svd(&a).unwrap();
        assert_eq!(f.s, vec![0.0, 0.0]);
        assert_orthonormal(&f.u, 1e-14);
    }
}
