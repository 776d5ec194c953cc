//! Truncated higher-order SVD.
//!
//! Each mode's factor holds the leading left singular vectors of that mode's
//! unfolding; the core is the input contracted against the transposed factors.
//! With full ranks the factorization is exact, and truncation error is bounded
//! by the discarded singular values of the unfoldings.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::svd::svd;
use crate::tensor::DenseTensor;

/// Tucker-form factorization `x ~ core x_1 factors[0] x_2 factors[1] ...`.
#[derive(Clone, Debug)]
pub struct HosvdFactorization {
    pub core: DenseTensor,
    /// One `extent_n x rank_n` factor per mode, orthonormal columns.
    pub factors: Vec<Matrix>,
}

impl HosvdFactorization {
    pub fn reconstruct(&self) -> Result<DenseTensor> {
        let mut t = self.core.clone();
        for (mode, f) in self.factors.iter().enumerate() {
            t = t.mode_n_product(f, mode)?;
        }
        Ok(t)
    }
}

/// Truncated HOSVD with per-mode target ranks.
pub fn truncated_hosvd(x: &DenseTensor, ranks: &[usize]) -> Result<HosvdFactorization> {
    if ranks.len() != x.rank() {
        return Err(Error::ShapeMismatch {
            op: "truncated_hosvd",
            expected: vec![x.rank()],
            got: vec![ranks.len()],
        });
    }
    for (mode, (&r, &e)) in ranks.iter().zip(x.shape()).enumerate() {
        if r == 0 {
            return Err(Error::InvalidArgument {
                op: "truncated_hosvd",
                message: format!("rank for mode {mode} must be at least 1"),
            });
        }
        if r > e {
            return Err(Error::RankExceedsExtent {
                op: "truncated_hosvd",
                mode,
                rank: r,
                extent: e,
            });
        }
    }
    let mut factors = Vec::with_capacity(ranks.len());
    for (mode, &r) in ranks.iter().enumerate() {
        let f = svd(&x.unfold(mode)?)?;
        factors.push(f.u.take_cols(r));
    }
    let mut core = x.clone();
    for (mode, f) in factors.iter().enumerate() {
        core = core.mode_n_product(&f.transpose(), mode)?;
    }
    Ok(HosvdFactorization { core, factors })
}
