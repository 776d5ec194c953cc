//! Graph convolution layers.
//!
//! All layers act on data tensors of shape `[batch, T, N, channels]`.
//!
//! * The spatial layer contracts the node mode: for each time step t,
//!   `out[b,t,n,co] = sum_{j,k,ci} a4[n,j,k,t] * x[b,t,j,ci] * w_a[k*Ci+ci, co, t]`.
//! * The temporal layer is its mirror image, contracting the time mode with a
//!   per-node filter stack and weight slice.
//! * The combined layer composes or sums the two, and the fused variant
//!   pre-contracts each slice's filters with its weight matrix into one
//!   effective map per slice before touching the data, which reproduces the
//!   temporal-then-spatial composition exactly.
//!
//! Weight tensors merge the filter index k and the input channel index ci
//! into their first mode in k-major order: row `k * Ci + ci`. The
//! serialization format records this order; mixing it up would silently
//! permute weights.

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::spectral::LiftedGraph;
use crate::tensor::DenseTensor;

/// Weights for the spatial layer: `(Ci * K_A) x Co x T`.
#[derive(Clone, Debug)]
pub struct SpatialKernel {
    pub w: DenseTensor,
}

/// Weights for the temporal layer: `(Ci * K_B) x Co x N`.
#[derive(Clone, Debug)]
pub struct TemporalKernel {
    pub w: DenseTensor,
}

/// `w[0*c + ci, ci, s] = 1`: passes channels through untouched when the
/// slice's first filter is the identity.
fn identity_weights(c: usize, k: usize, slices: usize) -> DenseTensor {
    let mut w = DenseTensor::zeros(&[c * k, c, slices]);
    for s in 0..slices {
        for ci in 0..c {
            w.set(&[ci, ci, s], 1.0);
        }
    }
    w
}

impl SpatialKernel {
    pub fn new(w: DenseTensor) -> Result<Self> {
        if w.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "SpatialKernel::new",
                expected: vec![3],
                got: vec![w.rank()],
            });
        }
        Ok(Self { w })
    }

    pub fn identity(c: usize, k: usize, t: usize) -> Self {
        Self {
            w: identity_weights(c, k, t),
        }
    }
}

impl TemporalKernel {
    pub fn new(w: DenseTensor) -> Result<Self> {
        if w.rank() != 3 {
            return Err(Error::ShapeMismatch {
                op: "TemporalKernel::new",
                expected: vec![3],
                got: vec![w.rank()],
            });
        }
        Ok(Self { w })
    }

    pub fn identity(c: usize, k: usize, n: usize) -> Self {
        Self {
            w: identity_weights(c, k, n),
        }
    }
}

/// How the spatial and temporal layers combine.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Composition {
    /// Temporal then spatial.
    Sequential,
    /// Temporal, spatial, then a second temporal with its own weights.
    Sandwich,
    /// Sum of spatial and two independent temporal terms.
    Additive,
}

/// Elementwise nonlinearity applied after a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    None,
    Relu,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerConfig {
    pub composition: Composition,
    pub activation: Activation,
}

impl Default for LayerConfig {
    fn default() -> Self {
        Self {
            composition: Composition::Sequential,
            activation: Activation::None,
        }
    }
}

/// Validated extents of a spatial-layer application.
pub(crate) struct SgclDims {
    pub(crate) b: usize,
    pub(crate) t: usize,
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) ci: usize,
    pub(crate) co: usize,
}

pub(crate) fn validate_sgcl(x: &DenseTensor, a4: &LiftedGraph, w: &SpatialKernel) -> Result<SgclDims> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "sgcl_forward",
            expected: vec![4],
            got: vec![x.rank()],
        });
    }
    let (b, t, n, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if a4.n() != n {
        return Err(Error::ModeMismatch {
            op: "sgcl_forward (node extent)",
            mode: 2,
            expected: n,
            got: a4.n(),
        });
    }
    if a4.slices() != t {
        return Err(Error::ModeMismatch {
            op: "sgcl_forward (time extent)",
            mode: 1,
            expected: t,
            got: a4.slices(),
        });
    }
    let k = a4.k();
    if w.w.shape()[0] != k * ci {
        return Err(Error::ModeMismatch {
            op: "sgcl_forward (merged filter-channel extent)",
            mode: 0,
            expected: k * ci,
            got: w.w.shape()[0],
        });
    }
    if w.w.shape()[2] != t {
        return Err(Error::ModeMismatch {
            op: "sgcl_forward (weight time extent)",
            mode: 2,
            expected: t,
            got: w.w.shape()[2],
        });
    }
    Ok(SgclDims {
        b,
        t,
        n,
        k,
        ci,
        co: w.w.shape()[1],
    })
}

/// Weight slice `w[k*Ci .. (k+1)*Ci, :, s]` as a contiguous `Ci x Co` matrix.
pub(crate) fn weight_slice(w: &DenseTensor, k: usize, ci: usize, s: usize) -> Matrix {
    Matrix::from_fn(ci, w.shape()[1], |r, c| w.get(&[k * ci + r, c, s]))
}

/// Spatial graph convolution: per time step, diffuse node values through each
/// Chebyshev filter and mix the stacked results across channels.
pub fn sgcl_forward(x: &DenseTensor, a4: &LiftedGraph, w: &SpatialKernel) -> Result<DenseTensor> {
    let d = validate_sgcl(x, a4, w)?;
    let mut out = DenseTensor::zeros(&[d.b, d.t, d.n, d.co]);
    let mut z = vec![0.0; d.n * d.ci];
    for t in 0..d.t {
        for k in 0..d.k {
            let g = a4.filter(k, t);
            let wkt = weight_slice(&w.w, k, d.ci, t);
            for b in 0..d.b {
                let x_bt = &x.data()[((b * d.t + t) * d.n) * d.ci..((b * d.t + t) * d.n + d.n) * d.ci];
                // z = G * X, accumulated row-wise so inner loops stay contiguous.
                z.iter_mut().for_each(|v| *v = 0.0);
                for n in 0..d.n {
                    for j in 0..d.n {
                        let gw = g.get(n, j);
                        if gw == 0.0 {
                            continue;
                        }
                        let src = &x_bt[j * d.ci..(j + 1) * d.ci];
                        let dst = &mut z[n * d.ci..(n + 1) * d.ci];
                        for (zv, xv) in dst.iter_mut().zip(src) {
                            *zv += gw * xv;
                        }
                    }
                }
                // out += z * W.
                let out_bt =
                    &mut out.data_mut()[((b * d.t + t) * d.n) * d.co..((b * d.t + t) * d.n + d.n) * d.co];
                for n in 0..d.n {
                    for ci in 0..d.ci {
                        let zv = z[n * d.ci + ci];
                        if zv == 0.0 {
                            continue;
                        }
                        let wrow = wkt.row(ci);
                        let dst = &mut out_bt[n * d.co..(n + 1) * d.co];
                        for (ov, wv) in dst.iter_mut().zip(wrow) {
                            *ov += zv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

pub(crate) struct TgclDims {
    pub(crate) b: usize,
    pub(crate) t: usize,
    pub(crate) n: usize,
    pub(crate) k: usize,
    pub(crate) ci: usize,
    pub(crate) co: usize,
}

pub(crate) fn validate_tgcl(x: &DenseTensor, b4: &LiftedGraph, w: &TemporalKernel) -> Result<TgclDims> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "tgcl_forward",
            expected: vec![4],
            got: vec![x.rank()],
        });
    }
    let (b, t, n, ci) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if b4.n() != t {
        return Err(Error::ModeMismatch {
            op: "tgcl_forward (time extent)",
            mode: 1,
            expected: t,
            got: b4.n(),
        });
    }
    if b4.slices() != n {
        return Err(Error::ModeMismatch {
            op: "tgcl_forward (node extent)",
            mode: 2,
            expected: n,
            got: b4.slices(),
        });
    }
    let k = b4.k();
    if w.w.shape()[0] != k * ci {
        return Err(Error::ModeMismatch {
            op: "tgcl_forward (merged filter-channel extent)",
            mode: 0,
            expected: k * ci,
            got: w.w.shape()[0],
        });
    }
    if w.w.shape()[2] != n {
        return Err(Error::ModeMismatch {
            op: "tgcl_forward (weight node extent)",
            mode: 2,
            expected: n,
            got: w.w.shape()[2],
        });
    }
    Ok(TgclDims {
        b,
        t,
        n,
        k,
        ci,
        co: w.w.shape()[1],
    })
}

/// Temporal graph convolution: per node, diffuse values along the time graph
/// through each filter and mix the stacked results across channels.
pub fn tgcl_forward(x: &DenseTensor, b4: &LiftedGraph, w: &TemporalKernel) -> Result<DenseTensor> {
    let d = validate_tgcl(x, b4, w)?;
    let mut out = DenseTensor::zeros(&[d.b, d.t, d.n, d.co]);
    let mut xg = vec![0.0; d.t * d.ci];
    let mut z = vec![0.0; d.t * d.ci];
    for n in 0..d.n {
        for k in 0..d.k {
            let g = b4.filter(k, n);
            let wkn = weight_slice(&w.w, k, d.ci, n);
            for b in 0..d.b {
                // Gather the node's time series; the time mode is strided.
                for t in 0..d.t {
                    let src = ((b * d.t + t) * d.n + n) * d.ci;
                    xg[t * d.ci..(t + 1) * d.ci]
                        .copy_from_slice(&x.data()[src..src + d.ci]);
                }
                z.iter_mut().for_each(|v| *v = 0.0);
                for t1 in 0..d.t {
                    for t2 in 0..d.t {
                        let gw = g.get(t1, t2);
                        if gw == 0.0 {
                            continue;
                        }
                        let src = &xg[t2 * d.ci..(t2 + 1) * d.ci];
                        let dst = &mut z[t1 * d.ci..(t1 + 1) * d.ci];
                        for (zv, xv) in dst.iter_mut().zip(src) {
                            *zv += gw * xv;
                        }
                    }
                }
                for t in 0..d.t {
                    let dst_off = ((b * d.t + t) * d.n + n) * d.co;
                    let dst = &mut out.data_mut()[dst_off..dst_off + d.co];
                    for ci in 0..d.ci {
                        let zv = z[t * d.ci + ci];
                        if zv == 0.0 {
                            continue;
                        }
                        for (ov, wv) in dst.iter_mut().zip(wkn.row(ci)) {
                            *ov += zv * wv;
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Combined layer: compose or sum the temporal and spatial convolutions.
pub fn stgcl_forward(
    x: &DenseTensor,
    a4: &LiftedGraph,
    b4: &LiftedGraph,
    w_a: &SpatialKernel,
    w_b: &TemporalKernel,
    w_b2: Option<&TemporalKernel>,
    cfg: &LayerConfig,
) -> Result<DenseTensor> {
    let out = match cfg.composition {
        Composition::Sequential => sgcl_forward(&tgcl_forward(x, b4, w_b)?, a4, w_a)?,
        Composition::Sandwich => {
            let w_b2 = w_b2.ok_or(Error::InvalidArgument {
                op: "stgcl_forward",
                message: "sandwich composition needs a second temporal kernel".into(),
            })?;
            tgcl_forward(
                &sgcl_forward(&tgcl_forward(x, b4, w_b)?, a4, w_a)?,
                b4,
                w_b2,
            )?
        }
        Composition::Additive => {
            let w_b2 = w_b2.ok_or(Error::InvalidArgument {
                op: "stgcl_forward",
                message: "additive composition needs a second temporal kernel".into(),
            })?;
            let spatial = sgcl_forward(x, a4, w_a)?;
            let temporal1 = tgcl_forward(x, b4, w_b)?;
            let temporal2 = tgcl_forward(x, b4, w_b2)?;
            if spatial.shape() != temporal1.shape() || spatial.shape() != temporal2.shape() {
                return Err(Error::ShapeMismatch {
                    op: "stgcl_forward (additive outputs)",
                    expected: spatial.shape().to_vec(),
                    got: temporal1.shape().to_vec(),
                });
            }
            temporal1.add(&spatial).add(&temporal2)
        }
    };
    Ok(match cfg.activation {
        Activation::None => out,
        Activation::Relu => out.relu(),
    })
}

/// Fused layer: pre-contract each slice's filter stack with its weight matrix
/// into a single effective map, then apply the temporal maps followed by the
/// spatial maps. Equal to the Sequential composition up to contraction-order
/// rounding.
pub fn tucker_fused_forward(
    x: &DenseTensor,
    a4: &LiftedGraph,
    b4: &LiftedGraph,
    w_a: &SpatialKernel,
    w_b: &TemporalKernel,
) -> Result<DenseTensor> {
    let dt = validate_tgcl(x, b4, w_b)?;
    let mid = DenseTensor::zeros(&[dt.b, dt.t, dt.n, dt.co]);
    let ds = validate_sgcl(&mid, a4, w_a)?;
    let mut mid = mid;

    // Temporal pass: eff[t1, t2, ci, co] = sum_k b4[t1,t2,k,n] * w_b[k*Ci+ci, co, n].
    let mut eff = vec![0.0; dt.t * dt.t * dt.ci * dt.co];
    for n in 0..dt.n {
        eff.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..dt.k {
            let g = b4.filter(k, n);
            let wkn = weight_slice(&w_b.w, k, dt.ci, n);
            for t1 in 0..dt.t {
                for t2 in 0..dt.t {
                    let gw = g.get(t1, t2);
                    if gw == 0.0 {
                        continue;
                    }
                    let base = (t1 * dt.t + t2) * dt.ci * dt.co;
                    for ci in 0..dt.ci {
                        for co in 0..dt.co {
                            eff[base + ci * dt.co + co] += gw * wkn.get(ci, co);
                        }
                    }
                }
            }
        }
        for b in 0..dt.b {
            for t1 in 0..dt.t {
                for t2 in 0..dt.t {
                    let base = (t1 * dt.t + t2) * dt.ci * dt.co;
                    let src = ((b * dt.t + t2) * dt.n + n) * dt.ci;
                    let dst = ((b * dt.t + t1) * dt.n + n) * dt.co;
                    for ci in 0..dt.ci {
                        let xv = x.data()[src + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        for co in 0..dt.co {
                            mid.data_mut()[dst + co] += xv * eff[base + ci * dt.co + co];
                        }
                    }
                }
            }
        }
    }

    // Spatial pass: eff[n, j, ci, co] = sum_k a4[n,j,k,t] * w_a[k*Ci+ci, co, t].
    let mut out = DenseTensor::zeros(&[ds.b, ds.t, ds.n, ds.co]);
    let mut eff = vec![0.0; ds.n * ds.n * ds.ci * ds.co];
    for t in 0..ds.t {
        eff.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..ds.k {
            let g = a4.filter(k, t);
            let wkt = weight_slice(&w_a.w, k, ds.ci, t);
            for n in 0..ds.n {
                for j in 0..ds.n {
                    let gw = g.get(n, j);
                    if gw == 0.0 {
                        continue;
                    }
                    let base = (n * ds.n + j) * ds.ci * ds.co;
                    for ci in 0..ds.ci {
                        for co in 0..ds.co {
                            eff[base + ci * ds.co + co] += gw * wkt.get(ci, co);
                        }
                    }
                }
            }
        }
        for b in 0..ds.b {
            for n in 0..ds.n {
                for j in 0..ds.n {
                    let base = (n * ds.n + j) * ds.ci * ds.co;
                    let src = ((b * ds.t + t) * ds.n + j) * ds.ci;
                    let dst = ((b * ds.t + t) * ds.n + n) * ds.co;
                    for ci in 0..ds.ci {
                        let xv = mid.data()[src + ci];
                        if xv == 0.0 {
                            continue;
                        }
                        for co in 0..ds.co {
                            out.data_mut()[dst + co] += xv * eff[base + ci * ds.co + co];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}
