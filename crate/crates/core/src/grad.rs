//! Analytic reverse-mode gradients for the forecasting model.
//!
//! Every backward pass here is derived by hand from the corresponding
//! forward contraction and validated against central finite differences in
//! the tests. The layer backwards recompute their cheap intermediates
//! (diffused values) instead of caching them, trading a little arithmetic
//! for a much smaller training-memory footprint.

use crate::error::{Error, Result};
use crate::layers::{validate_sgcl, validate_tgcl, weight_slice, Composition, SpatialKernel, TemporalKernel};
use crate::matrix::Matrix;
use crate::model::{
    loss_gradient, model_forward_cached, BlockTrace, LossKind, ModelParams,
};
use crate::spectral::LiftedGraph;
use crate::tensor::DenseTensor;

/// Gradients produced by one layer's backward pass.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    /// Gradient in the layer input, same shape as the input.
    pub x: DenseTensor,
    /// Gradient in the kernel tensor, same shape as the kernel.
    pub w: DenseTensor,
    /// Gradient in the filter stack, present only when requested.
    pub filters: Option<DenseTensor>,
}

/// Backward pass of [`sgcl_forward`](crate::layers::sgcl_forward).
///
/// With `out[b,t,n,co] = sum_{k,j,ci} a[n,j,k,t] x[b,t,j,ci] w[k*Ci+ci,co,t]`
/// and upstream gradient `g`:
///   dX[b,t,j,ci]  = sum_{k} A_kt^T (G_bt W_kt^T)
///   dW_kt         = sum_{b} (A_kt X_bt)^T G_bt
///   dA_kt[n,j]    = sum_{b} (G_bt W_kt^T) X_bt^T
pub fn sgcl_backward(
    x: &DenseTensor,
    a4: &LiftedGraph,
    w: &SpatialKernel,
    g_out: &DenseTensor,
    want_filters: bool,
) -> Result<LayerGrads> {
    let d = validate_sgcl(x, a4, w)?;
    let expected = [d.b, d.t, d.n, d.co];
    if g_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "sgcl_backward",
            expected: expected.to_vec(),
            got: g_out.shape().to_vec(),
        });
    }
    let mut gx = DenseTensor::zeros(x.shape());
    let mut gw = DenseTensor::zeros(w.w.shape());
    let mut ga = want_filters.then(|| DenseTensor::zeros(&[d.n, d.n, d.k, d.t]));
    let mut u = vec![0.0; d.n * d.ci];
    let mut z = vec![0.0; d.n * d.ci];
    for t in 0..d.t {
        for k in 0..d.k {
            let g = a4.filter(k, t);
            let wkt = weight_slice(&w.w, k, d.ci, t);
            for b in 0..d.b {
                let base = ((b * d.t + t) * d.n) * d.ci;
                let x_bt = &x.data()[base..base + d.n * d.ci];
                let go_base = ((b * d.t + t) * d.n) * d.co;
                let go_bt = &g_out.data()[go_base..go_base + d.n * d.co];

                // U = G_out W^T, rows over nodes.
                for i in 0..d.n {
                    let grow = &go_bt[i * d.co..(i + 1) * d.co];
                    let dst = &mut u[i * d.ci..(i + 1) * d.ci];
                    for (ci, uv) in dst.iter_mut().enumerate() {
                        let wrow = wkt.row(ci);
                        let mut acc = 0.0;
                        for (gv, wv) in grow.iter().zip(wrow) {
                            acc += gv * wv;
                        }
                        *uv = acc;
                    }
                }
                // dX += A^T U: row i of A scatters into row j of dX.
                let gx_bt = &mut gx.data_mut()[base..base + d.n * d.ci];
                for i in 0..d.n {
                    for j in 0..d.n {
                        let a_ij = g.get(i, j);
                        if a_ij == 0.0 {
                            continue;
                        }
                        let src = &u[i * d.ci..(i + 1) * d.ci];
                        let dst = &mut gx_bt[j * d.ci..(j + 1) * d.ci];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += a_ij * sv;
                        }
                    }
                }
                // Z = A X, recomputed exactly as the forward does.
                z.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d.n {
                    for j in 0..d.n {
                        let a_ij = g.get(i, j);
                        if a_ij == 0.0 {
                            continue;
                        }
                        let src = &x_bt[j * d.ci..(j + 1) * d.ci];
                        let dst = &mut z[i * d.ci..(i + 1) * d.ci];
                        for (zv, xv) in dst.iter_mut().zip(src) {
                            *zv += a_ij * xv;
                        }
                    }
                }
                // dW_kt += Z^T G_out.
                for ci in 0..d.ci {
                    for co in 0..d.co {
                        let mut acc = 0.0;
                        for i in 0..d.n {
                            acc += z[i * d.ci + ci] * go_bt[i * d.co + co];
                        }
                        let off = gw.offset(&[k * d.ci + ci, co, t]);
                        gw.data_mut()[off] += acc;
                    }
                }
                // dA_kt += U X^T.
                if let Some(ga) = ga.as_mut() {
                    for i in 0..d.n {
                        let urow = &u[i * d.ci..(i + 1) * d.ci];
                        for j in 0..d.n {
                            let xrow = &x_bt[j * d.ci..(j + 1) * d.ci];
                            let mut acc = 0.0;
                            for (uv, xv) in urow.iter().zip(xrow) {
                                acc += uv * xv;
                            }
                            let off = ga.offset(&[i, j, k, t]);
                            ga.data_mut()[off] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        x: gx,
        w: gw,
        filters: ga,
    })
}

/// Backward pass of [`tgcl_forward`](crate::layers::tgcl_forward); the exact
/// time-axis mirror of [`sgcl_backward`], with per-(sample, node) gathers
/// because the time mode is strided.
pub fn tgcl_backward(
    x: &DenseTensor,
    b4: &LiftedGraph,
    w: &TemporalKernel,
    g_out: &DenseTensor,
    want_filters: bool,
) -> Result<LayerGrads> {
    let d = validate_tgcl(x, b4, w)?;
    let expected = [d.b, d.t, d.n, d.co];
    if g_out.shape() != expected {
        return Err(Error::ShapeMismatch {
            op: "tgcl_backward",
            expected: expected.to_vec(),
            got: g_out.shape().to_vec(),
        });
    }
    let mut gx = DenseTensor::zeros(x.shape());
    let mut gw = DenseTensor::zeros(w.w.shape());
    let mut gb = want_filters.then(|| DenseTensor::zeros(&[d.t, d.t, d.k, d.n]));
    let mut xg = vec![0.0; d.t * d.ci];
    let mut gg = vec![0.0; d.t * d.co];
    let mut u = vec![0.0; d.t * d.ci];
    let mut z = vec![0.0; d.t * d.ci];
    for n in 0..d.n {
        for k in 0..d.k {
            let g = b4.filter(k, n);
            let wkn = weight_slice(&w.w, k, d.ci, n);
            for b in 0..d.b {
                // Gather this node's input trace and upstream gradient.
                for s in 0..d.t {
                    let xo = ((b * d.t + s) * d.n + n) * d.ci;
                    xg[s * d.ci..(s + 1) * d.ci].copy_from_slice(&x.data()[xo..xo + d.ci]);
                    let go = ((b * d.t + s) * d.n + n) * d.co;
                    gg[s * d.co..(s + 1) * d.co].copy_from_slice(&g_out.data()[go..go + d.co]);
                }
                // U = G_out W^T over time rows.
                for t in 0..d.t {
                    let grow = &gg[t * d.co..(t + 1) * d.co];
                    let dst = &mut u[t * d.ci..(t + 1) * d.ci];
                    for (ci, uv) in dst.iter_mut().enumerate() {
                        let wrow = wkn.row(ci);
                        let mut acc = 0.0;
                        for (gv, wv) in grow.iter().zip(wrow) {
                            acc += gv * wv;
                        }
                        *uv = acc;
                    }
                }
                // dX += B^T U, scattered back through the time stride.
                for t in 0..d.t {
                    for s in 0..d.t {
                        let b_ts = g.get(t, s);
                        if b_ts == 0.0 {
                            continue;
                        }
                        let src = &u[t * d.ci..(t + 1) * d.ci];
                        let xo = ((b * d.t + s) * d.n + n) * d.ci;
                        let dst = &mut gx.data_mut()[xo..xo + d.ci];
                        for (dv, sv) in dst.iter_mut().zip(src) {
                            *dv += b_ts * sv;
                        }
                    }
                }
                // Z = B X on the gathered trace.
                z.iter_mut().for_each(|v| *v = 0.0);
                for t in 0..d.t {
                    for s in 0..d.t {
                        let b_ts = g.get(t, s);
                        if b_ts == 0.0 {
                            continue;
                        }
                        let src = &xg[s * d.ci..(s + 1) * d.ci];
                        let dst = &mut z[t * d.ci..(t + 1) * d.ci];
                        for (zv, xv) in dst.iter_mut().zip(src) {
                            *zv += b_ts * xv;
                        }
                    }
                }
                // dW_kn += Z^T G_out.
                for ci in 0..d.ci {
                    for co in 0..d.co {
                        let mut acc = 0.0;
                        for t in 0..d.t {
                            acc += z[t * d.ci + ci] * gg[t * d.co + co];
                        }
                        let off = gw.offset(&[k * d.ci + ci, co, n]);
                        gw.data_mut()[off] += acc;
                    }
                }
                // dB_kn += U X^T over the gathered trace.
                if let Some(gb) = gb.as_mut() {
                    for t in 0..d.t {
                        let urow = &u[t * d.ci..(t + 1) * d.ci];
                        for s in 0..d.t {
                            let xrow = &xg[s * d.ci..(s + 1) * d.ci];
                            let mut acc = 0.0;
                            for (uv, xv) in urow.iter().zip(xrow) {
                                acc += uv * xv;
                            }
                            let off = gb.offset(&[t, s, k, n]);
                            gb.data_mut()[off] += acc;
                        }
                    }
                }
            }
        }
    }
    Ok(LayerGrads {
        x: gx,
        w: gw,
        filters: gb,
    })
}

/// Mask `g` by the ReLU active set of `pre` (strict: the kink at zero takes
/// the zero branch).
pub fn relu_backward(pre: &DenseTensor, g: &DenseTensor) -> Result<DenseTensor> {
    if pre.shape() != g.shape() {
        return Err(Error::ShapeMismatch {
            op: "relu_backward",
            expected: pre.shape().to_vec(),
            got: g.shape().to_vec(),
        });
    }
    let mut out = g.clone();
    for (ov, pv) in out.data_mut().iter_mut().zip(pre.data()) {
        if *pv <= 0.0 {
            *ov = 0.0;
        }
    }
    Ok(out)
}

/// Gradients of one block's kernels.
#[derive(Clone, Debug)]
pub struct BlockGrads {
    pub w_a: DenseTensor,
    pub w_b: DenseTensor,
    pub w_b2: Option<DenseTensor>,
}

/// Gradient container congruent with [`ModelParams`]; see
/// [`ModelParams::tensors_mut`] for the shared enumeration order.
#[derive(Clone, Debug)]
pub struct ParamGrads {
    pub input_proj: Matrix,
    pub blocks: Vec<BlockGrads>,
    pub output_head: Matrix,
    pub a4: Option<DenseTensor>,
    pub b4: Option<DenseTensor>,
}

impl ParamGrads {
    pub fn zeros_like(params: &ModelParams, train_graphs: bool) -> ParamGrads {
        ParamGrads {
            input_proj: Matrix::zeros(params.input_proj.rows(), params.input_proj.cols()),
            blocks: params
                .blocks
                .iter()
                .map(|b| BlockGrads {
                    w_a: DenseTensor::zeros(b.w_a.w.shape()),
                    w_b: DenseTensor::zeros(b.w_b.w.shape()),
                    w_b2: b.w_b2.as_ref().map(|w| DenseTensor::zeros(w.w.shape())),
                })
                .collect(),
            output_head: Matrix::zeros(params.output_head.rows(), params.output_head.cols()),
            a4: train_graphs.then(|| DenseTensor::zeros(params.a4.filters.shape())),
            b4: train_graphs.then(|| DenseTensor::zeros(params.b4.filters.shape())),
        }
    }

    /// Flat views in [`ModelParams::tensors_mut`] order.
    pub fn tensors(&self) -> Vec<&[f64]> {
        let mut out = vec![self.input_proj.data()];
        for b in &self.blocks {
            out.push(b.w_a.data());
            out.push(b.w_b.data());
            if let Some(w2) = &b.w_b2 {
                out.push(w2.data());
            }
        }
        out.push(self.output_head.data());
        if let Some(a) = &self.a4 {
            out.push(a.data());
        }
        if let Some(b) = &self.b4 {
            out.push(b.data());
        }
        out
    }

    /// Mutable flat views in the same order.
    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let ParamGrads {
            input_proj,
            blocks,
            output_head,
            a4,
            b4,
        } = self;
        let mut out = vec![input_proj.data_mut()];
        for b in blocks {
            out.push(b.w_a.data_mut());
            out.push(b.w_b.data_mut());
            if let Some(w2) = &mut b.w_b2 {
                out.push(w2.data_mut());
            }
        }
        out.push(output_head.data_mut());
        if let Some(a) = a4 {
            out.push(a.data_mut());
        }
        if let Some(b) = b4 {
            out.push(b.data_mut());
        }
        out
    }

    /// `self += other`, elementwise across the whole container.
    pub fn accumulate(&mut self, other: &ParamGrads) {
        let mut views = self.tensors_mut();
        let theirs = other.tensors();
        assert_eq!(views.len(), theirs.len());
        for (mine, their) in views.iter_mut().zip(theirs) {
            assert_eq!(mine.len(), their.len());
            for (m, t) in mine.iter_mut().zip(their) {
                *m += t;
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for view in self.tensors_mut() {
            for v in view {
                *v *= s;
            }
        }
    }

    /// Euclidean norm over every gradient entry.
    pub fn norm(&self) -> f64 {
        let mut acc = 0.0;
        for view in self.tensors() {
            for v in view {
                acc += v * v;
            }
        }
        acc.sqrt()
    }
}

/// Controls for [`gradients`].
#[derive(Clone, Copy, Debug)]
pub struct GradOptions {
    pub loss: LossKind,
    /// Also differentiate the filter stacks.
    pub train_graphs: bool,
}

impl Default for GradOptions {
    fn default() -> Self {
        Self {
            loss: LossKind::Mean,
            train_graphs: false,
        }
    }
}

struct BlockBackward {
    g_in: DenseTensor,
    grads: BlockGrads,
    /// Accumulated filter-stack gradients when requested.
    ga: Option<DenseTensor>,
    gb: Option<DenseTensor>,
}

fn add_assign(acc: &mut Option<DenseTensor>, inc: Option<DenseTensor>) {
    match (acc.as_mut(), inc) {
        (Some(a), Some(i)) => *a = a.add(&i),
        (None, Some(i)) => *acc = Some(i),
        _ => {}
    }
}

fn block_backward(
    params: &ModelParams,
    blk_idx: usize,
    trace: &BlockTrace,
    g_out: &DenseTensor,
    want_filters: bool,
) -> Result<BlockBackward> {
    let blk = &params.blocks[blk_idx];
    let (a4, b4) = (&params.a4, &params.b4);
    let mut ga = want_filters.then(|| DenseTensor::zeros(a4.filters.shape()));
    let mut gb = want_filters.then(|| DenseTensor::zeros(b4.filters.shape()));
    let need_w2 = || -> Result<&TemporalKernel> {
        blk.w_b2.as_ref().ok_or(Error::InvalidArgument {
            op: "block_backward",
            message: "composition needs a second temporal kernel".into(),
        })
    };
    match params.composition {
        Composition::Sequential => {
            // out = sgcl(tgcl(x)).
            let s = sgcl_backward(&trace.mids[0], a4, &blk.w_a, g_out, want_filters)?;
            add_assign(&mut ga, s.filters);
            let t = tgcl_backward(&trace.input, b4, &blk.w_b, &s.x, want_filters)?;
            add_assign(&mut gb, t.filters);
            Ok(BlockBackward {
                g_in: t.x,
                grads: BlockGrads {
                    w_a: s.w,
                    w_b: t.w,
                    w_b2: None,
                },
                ga,
                gb,
            })
        }
        Composition::Sandwich => {
            // out = tgcl(sgcl(tgcl(x)), w_b2).
            let t2 = tgcl_backward(&trace.mids[1], b4, need_w2()?, g_out, want_filters)?;
            add_assign(&mut gb, t2.filters);
            let s = sgcl_backward(&trace.mids[0], a4, &blk.w_a, &t2.x, want_filters)?;
            add_assign(&mut ga, s.filters);
            let t1 = tgcl_backward(&trace.input, b4, &blk.w_b, &s.x, want_filters)?;
            add_assign(&mut gb, t1.filters);
            Ok(BlockBackward {
                g_in: t1.x,
                grads: BlockGrads {
                    w_a: s.w,
                    w_b: t1.w,
                    w_b2: Some(t2.w),
                },
                ga,
                gb,
            })
        }
        Composition::Additive => {
            // out = tgcl(x) + sgcl(x) + tgcl(x, w_b2); the input gradient is
            // the sum of the three branch gradients.
            let t1 = tgcl_backward(&trace.input, b4, &blk.w_b, g_out, want_filters)?;
            add_assign(&mut gb, t1.filters);
            let s = sgcl_backward(&trace.input, a4, &blk.w_a, g_out, want_filters)?;
            add_assign(&mut ga, s.filters);
            let t2 = tgcl_backward(&trace.input, b4, need_w2()?, g_out, want_filters)?;
            add_assign(&mut gb, t2.filters);
            Ok(BlockBackward {
                g_in: t1.x.add(&s.x).add(&t2.x),
                grads: BlockGrads {
                    w_a: s.w,
                    w_b: t1.w,
                    w_b2: Some(t2.w),
                },
                ga,
                gb,
            })
        }
    }
}

/// Full loss-and-gradient evaluation over one batch.
///
/// Returns the loss value together with gradients for every trainable
/// parameter (and, when `opts.train_graphs`, for both filter stacks; those
/// accumulate across blocks because all blocks share the stacks).
pub fn gradients(
    params: &ModelParams,
    x: &DenseTensor,
    y: &DenseTensor,
    opts: &GradOptions,
) -> Result<(f64, ParamGrads)> {
    let (prediction, cache) = model_forward_cached(params, x)?;
    let (loss_value, g_pred) = loss_gradient(&prediction, y, opts.loss)?;
    let (b, n, d) = (x.shape()[0], x.shape()[2], x.shape()[3]);
    let (l, c) = (params.task.window, params.c_hidden);

    // Head: prediction_f = head_input * H. Gather g_pred back to (B*N) rows.
    let g_yf = flatten_prediction(&g_pred, params.task.horizon);
    let g_head = matmul_at_b(&cache.head_input, &g_yf);
    let g_xf = g_yf.matmul(&params.output_head.transpose());
    // Unflatten (B*N) x (l*C) back to [B, l, N, C].
    let mut g_h = DenseTensor::zeros(&[b, l, n, c]);
    for bi in 0..b {
        for t in 0..l {
            for j in 0..n {
                for ch in 0..c {
                    g_h.set(&[bi, t, j, ch], g_xf.get(bi * n + j, t * c + ch));
                }
            }
        }
    }

    let mut grads = ParamGrads::zeros_like(params, opts.train_graphs);
    grads.output_head = g_head;

    let mut g = g_h;
    for i in (0..params.blocks.len()).rev() {
        let trace = &cache.blocks[i];
        if let Some(pre) = &trace.pre_relu {
            g = relu_backward(pre, &g)?;
        }
        let bw = block_backward(params, i, trace, &g, opts.train_graphs)?;
        grads.blocks[i] = bw.grads;
        if let Some(acc) = grads.a4.as_mut() {
            *acc = acc.add(&bw.ga.unwrap());
        }
        if let Some(acc) = grads.b4.as_mut() {
            *acc = acc.add(&bw.gb.unwrap());
        }
        g = bw.g_in;
    }

    // Input projection: h0 = x (last-mode) P, so dP = X_flat^T G_flat.
    let lead = x.len() / d;
    let x_flat = Matrix::from_vec(lead, d, x.data().to_vec()).unwrap();
    let g_flat = Matrix::from_vec(lead, c, g.data().to_vec()).unwrap();
    grads.input_proj = matmul_at_b(&x_flat, &g_flat);

    Ok((loss_value, grads))
}

/// `A^T B` without materializing the transpose.
fn matmul_at_b(a: &Matrix, b: &Matrix) -> Matrix {
    a.transpose().matmul(b)
}

/// Gather a `[B, T', N, D]` gradient into the head's `(B*N) x (T'*D)` output
/// layout (inverse of [`scatter_head_output`]).
fn flatten_prediction(g: &DenseTensor, horizon: usize) -> Matrix {
    let (b, n, d) = (g.shape()[0], g.shape()[2], g.shape()[3]);
    let mut out = Matrix::zeros(b * n, horizon * d);
    for bi in 0..b {
        for t in 0..horizon {
            for j in 0..n {
                for f in 0..d {
                    out.set(bi * n + j, t * d + f, g.get(&[bi, t, j, f]));
                }
            }
        }
    }
    out
}

/// Central-difference gradient of the loss in every trainable parameter,
/// using per-parameter steps `h = scale * max(1, |theta|)`.
pub fn finite_difference_gradients(
    params: &mut ModelParams,
    x: &DenseTensor,
    y: &DenseTensor,
    opts: &GradOptions,
    scale: f64,
) -> Result<Vec<Vec<f64>>> {
    let n_views = params.tensors_mut(opts.train_graphs).len();
    let mut out = Vec::with_capacity(n_views);
    for vi in 0..n_views {
        let len = params.tensors_mut(opts.train_graphs)[vi].len();
        let mut view_grad = vec![0.0; len];
        for i in 0..len {
            let orig = params.tensors_mut(opts.train_graphs)[vi][i];
            let h = scale * orig.abs().max(1.0);
            params.tensors_mut(opts.train_graphs)[vi][i] = orig + h;
            let up = loss_at(params, x, y, opts.loss)?;
            params.tensors_mut(opts.train_graphs)[vi][i] = orig - h;
            let dn = loss_at(params, x, y, opts.loss)?;
            params.tensors_mut(opts.train_graphs)[vi][i] = orig;
            view_grad[i] = (up - dn) / (2.0 * h);
        }
        out.push(view_grad);
    }
    Ok(out)
}

fn loss_at(params: &ModelParams, x: &DenseTensor, y: &DenseTensor, kind: LossKind) -> Result<f64> {
    let pred = crate::model::model_forward(params, x)?;
    crate::model::loss(&pred, y, kind)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_stg, build_ttg, GraphParams, StgMode, StgOptions};
    use crate::layers::{sgcl_forward, tgcl_forward, Activation};
    use crate::model::{ForecastTask, GraphSource, ModelConfig};
    use crate::spectral::{lift_stg, lift_ttg, LiftOptions, Provenance};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn seeded(shape: &[usize], seed: u64) -> DenseTensor {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        DenseTensor::from_fn(shape, |_| 2.0 * rng.random::<f64>() - 1.0)
    }

    /// Real (non-identity) lifted stacks from a small synthetic series.
    fn lifted_pair(n: usize, l: usize, seed: u64) -> (LiftedGraph, LiftedGraph) {
        let data = seeded(&[2, l, n, 1], seed);
        let opts = StgOptions {
            params: GraphParams {
                sigma2: 0.5,
                epsilon: 0.1,
            },
            mode: StgMode::Kernel,
            ..StgOptions::default()
        };
        let stg = build_stg(&data, &opts).unwrap();
        let ttg = build_ttg(&data, &opts.params).unwrap();
        let lift = LiftOptions {
            k: 2,
            ..LiftOptions::default()
        };
        (lift_stg(&stg, &lift).unwrap(), lift_ttg(&ttg, &lift).unwrap())
    }

    /// Directional check of a layer backward: for a fixed random G,
    /// phi(x) = <layer(x), G> must differentiate to backward(x, G).
    #[test]
    fn sgcl_backward_matches_finite_differences() {
        let (a4, _) = lifted_pair(3, 4, 1);
        let mut x = seeded(&[2, 4, 3, 2], 2);
        let w = SpatialKernel::new(seeded(&[2 * 2, 2, 4], 3)).unwrap();
        let g = seeded(&[2, 4, 3, 2], 4);
        let back = sgcl_backward(&x, &a4, &w, &g, true).unwrap();
        let phi = |x: &DenseTensor, w: &SpatialKernel, a4: &LiftedGraph| {
            let out = sgcl_forward(x, a4, w).unwrap();
            out.data().iter().zip(g.data()).map(|(o, gv)| o * gv).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = phi(&x, &w, &a4);
            x.data_mut()[i] = orig - h;
            let dn = phi(&x, &w, &a4);
            x.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!(
                (fd - back.x.data()[i]).abs() < 1e-6,
                "x[{i}] analytic {} vs fd {}",
                back.x.data()[i],
                fd
            );
        }
        let mut wt = w.clone();
        for i in 0..wt.w.len() {
            let orig = wt.w.data()[i];
            wt.w.data_mut()[i] = orig + h;
            let up = phi(&x, &wt, &a4);
            wt.w.data_mut()[i] = orig - h;
            let dn = phi(&x, &wt, &a4);
            wt.w.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - back.w.data()[i]).abs() < 1e-6, "w[{i}]");
        }
        let mut at = a4.clone();
        let ga = back.filters.unwrap();
        for i in 0..at.filters.len() {
            let orig = at.filters.data()[i];
            at.filters.data_mut()[i] = orig + h;
            let up = phi(&x, &w, &at);
            at.filters.data_mut()[i] = orig - h;
            let dn = phi(&x, &w, &at);
            at.filters.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - ga.data()[i]).abs() < 1e-6, "a4[{i}]");
        }
    }

    #[test]
    fn tgcl_backward_matches_finite_differences() {
        let (_, b4) = lifted_pair(3, 4, 5);
        let mut x = seeded(&[2, 4, 3, 2], 6);
        let w = TemporalKernel::new(seeded(&[2 * 2, 2, 3], 7)).unwrap();
        let g = seeded(&[2, 4, 3, 2], 8);
        let back = tgcl_backward(&x, &b4, &w, &g, true).unwrap();
        let phi = |x: &DenseTensor, w: &TemporalKernel, b4: &LiftedGraph| {
            let out = tgcl_forward(x, b4, w).unwrap();
            out.data().iter().zip(g.data()).map(|(o, gv)| o * gv).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..x.len() {
            let orig = x.data()[i];
            x.data_mut()[i] = orig + h;
            let up = phi(&x, &w, &b4);
            x.data_mut()[i] = orig - h;
            let dn = phi(&x, &w, &b4);
            x.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - back.x.data()[i]).abs() < 1e-6, "x[{i}]");
        }
        let mut bt = b4.clone();
        let gb = back.filters.unwrap();
        for i in 0..bt.filters.len() {
            let orig = bt.filters.data()[i];
            bt.filters.data_mut()[i] = orig + h;
            let up = phi(&x, &w, &bt);
            bt.filters.data_mut()[i] = orig - h;
            let dn = phi(&x, &w, &bt);
            bt.filters.data_mut()[i] = orig;
            let fd = (up - dn) / (2.0 * h);
            assert!((fd - gb.data()[i]).abs() < 1e-6, "b4[{i}]");
        }
    }

    /// Guarded relative error: the floor keeps near-zero entries (where the
    /// central difference itself carries ~1e-10 roundoff) from dominating.
    fn relative_error(analytic: f64, fd: f64) -> f64 {
        let denom = analytic.abs().max(fd.abs()).max(1e-6);
        (analytic - fd).abs() / denom
    }

    fn check_model_gradients(composition: Composition, train_graphs: bool, seed: u64) {
        let (a4, b4) = lifted_pair(3, 4, seed);
        let task = ForecastTask {
            window: 4,
            horizon: 2,
        };
        let cfg = ModelConfig {
            c_hidden: 3,
            n_blocks: 2,
            composition,
            activation: Activation::Relu,
        };
        let mut params =
            ModelParams::init(task, 1, &cfg, a4, b4, GraphSource::Lifted, seed + 1).unwrap();
        let x = seeded(&[2, 4, 3, 1], seed + 2);
        let y = seeded(&[2, 2, 3, 1], seed + 3);
        let opts = GradOptions {
            loss: LossKind::Mean,
            train_graphs,
        };
        let (_, analytic) = gradients(&params, &x, &y, &opts).unwrap();
        let fd = finite_difference_gradients(&mut params, &x, &y, &opts, 1e-6).unwrap();
        let views = analytic.tensors();
        assert_eq!(views.len(), fd.len());
        for (vi, (a_view, f_view)) in views.iter().zip(&fd).enumerate() {
            for (i, (a, f)) in a_view.iter().zip(f_view).enumerate() {
                let rel = relative_error(*a, *f);
                assert!(
                    rel < 1e-4,
                    "{composition:?} view {vi} entry {i}: analytic {a} fd {f} rel {rel}"
                );
            }
        }
    }

    #[test]
    fn model_gradients_match_finite_differences_sequential() {
        check_model_gradients(Composition::Sequential, false, 10);
    }

    #[test]
    fn model_gradients_match_finite_differences_sandwich() {
        check_model_gradients(Composition::Sandwich, false, 20);
    }

    #[test]
    fn model_gradients_match_finite_differences_additive() {
        check_model_gradients(Composition::Additive, false, 30);
    }

    #[test]
    fn model_gradients_cover_filter_stacks_when_enabled() {
        check_model_gradients(Composition::Sequential, true, 40);
    }

    #[test]
    fn sum_loss_gradient_is_count_times_mean() {
        let (a4, b4) = lifted_pair(3, 4, 50);
        let task = ForecastTask {
            window: 4,
            horizon: 2,
        };
        let params = ModelParams::init(
            task,
            1,
            &ModelConfig {
                c_hidden: 3,
                n_blocks: 1,
                composition: Composition::Sequential,
            activation: Activation::Relu,
            },
            a4,
            b4,
            GraphSource::Lifted,
            51,
        )
        .unwrap();
        let x = seeded(&[2, 4, 3, 1], 52);
        let y = seeded(&[2, 2, 3, 1], 53);
        let (lm, gm) = gradients(
            &params,
            &x,
            &y,
            &GradOptions {
                loss: LossKind::Mean,
                train_graphs: false,
            },
        )
        .unwrap();
        let (ls, gs) = gradients(
            &params,
            &x,
            &y,
            &GradOptions {
                loss: LossKind::Sum,
                train_graphs: false,
            },
        )
        .unwrap();
        let count = y.len() as f64;
        assert!((ls - lm * count).abs() < 1e-9 * ls.abs().max(1.0));
        for (ms, mm) in gs.tensors().iter().zip(gm.tensors()) {
            for (s, m) in ms.iter().zip(mm) {
                assert!((s - m * count).abs() < 1e-9 * s.abs().max(1.0));
            }
        }
    }

    #[test]
    fn identity_graph_gradients_flow() {
        // With identity stacks the model is a stack of per-step dense maps;
        // gradients must still be nonzero end to end.
        let task = ForecastTask {
            window: 3,
            horizon: 1,
        };
        let a4 = LiftedGraph::identity(2, 3, Provenance::Spatial);
        let b4 = LiftedGraph::identity(3, 2, Provenance::Temporal);
        let params = ModelParams::init(
            task,
            1,
            &ModelConfig {
                c_hidden: 2,
                n_blocks: 2,
                composition: Composition::Sequential,
            activation: Activation::Relu,
            },
            a4,
            b4,
            GraphSource::Lifted,
            60,
        )
        .unwrap();
        let x = seeded(&[2, 3, 2, 1], 61);
        let y = seeded(&[2, 1, 2, 1], 62);
        let (_, g) = gradients(&params, &x, &y, &GradOptions::default()).unwrap();
        assert!(g.norm() > 0.0);
        assert!(g.input_proj.data().iter().any(|v| *v != 0.0));
        for b in &g.blocks {
            assert!(b.w_a.data().iter().any(|v| *v != 0.0));
            assert!(b.w_b.data().iter().any(|v| *v != 0.0));
        }
    }

    #[test]
    fn accumulate_and_scale_are_elementwise() {
        let (a4, b4) = lifted_pair(3, 4, 70);
        let task = ForecastTask {
            window: 4,
            horizon: 2,
        };
        let params = ModelParams::init(
            task,
            1,
            &ModelConfig {
                c_hidden: 2,
                n_blocks: 1,
                composition: Composition::Sequential,
            activation: Activation::Relu,
            },
            a4,
            b4,
            GraphSource::Lifted,
            71,
        )
        .unwrap();
        let x = seeded(&[1, 4, 3, 1], 72);
        let y = seeded(&[1, 2, 3, 1], 73);
        let (_, g1) = gradients(&params, &x, &y, &GradOptions::default()).unwrap();
        let mut acc = ParamGrads::zeros_like(&params, false);
        acc.accumulate(&g1);
        acc.accumulate(&g1);
        acc.scale(0.5);
        for (a, b) in acc.tensors().iter().zip(g1.tensors()) {
            for (av, bv) in a.iter().zip(b) {
                assert!((av - bv).abs() < 1e-15);
            }
        }
    }
}
