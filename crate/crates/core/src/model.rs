//! Forecasting model assembled from graph-convolution blocks.
//!
//! The network maps a `[B, l, N, D]` input window to a `[B, T', N, D]`
//! forecast in three stages: a channel projection lifting D raw features to
//! C hidden channels, a stack of spatio-temporal graph-convolution blocks
//! (ReLU between consecutive blocks, none after the last), and a read-out
//! head that flattens each node's `l x C` feature trace and maps it linearly
//! to its `T' x D` forecast. The graph filter stacks are shared by every
//! block and are ordinarily frozen; training them is opt-in.

use crate::error::{Error, Result};
use crate::layers::{
    sgcl_forward, tgcl_forward, Activation, Composition, SpatialKernel, TemporalKernel,
};
use crate::matrix::Matrix;
use crate::spectral::LiftedGraph;
use crate::tensor::DenseTensor;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// Input window length and forecast horizon, both in steps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForecastTask {
    pub window: usize,
    pub horizon: usize,
}

/// Where the model's filter stacks came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphSource {
    /// Lifted directly from the constructed graphs.
    Lifted,
    /// Lifted from compressed-reconstruction graphs.
    Compressed,
}

/// Learnable kernels of one graph-convolution block.
#[derive(Clone, Debug)]
pub struct BlockParams {
    pub w_a: SpatialKernel,
    pub w_b: TemporalKernel,
    /// Second temporal kernel; present iff the composition needs one.
    pub w_b2: Option<TemporalKernel>,
}

/// Width and depth choices for [`ModelParams::init`].
#[derive(Clone, Copy, Debug)]
pub struct ModelConfig {
    pub c_hidden: usize,
    pub n_blocks: usize,
    pub composition: Composition,
    /// Applied between consecutive blocks, never after the last. With
    /// `Activation::None` the whole network is linear in its input.
    pub activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            c_hidden: 32,
            n_blocks: 2,
            composition: Composition::Sequential,
            activation: Activation::Relu,
        }
    }
}

/// Every learnable quantity plus the frozen filter stacks.
#[derive(Clone, Debug)]
pub struct ModelParams {
    /// `D x C` channel projection (input index as rows).
    pub input_proj: Matrix,
    pub blocks: Vec<BlockParams>,
    /// `(l*C) x (T'*D)` per-node read-out; rows flatten (t, c) with c
    /// fastest, columns flatten (t', d) with d fastest.
    pub output_head: Matrix,
    /// Spatial filter stack, `N x N x K_A x l`.
    pub a4: LiftedGraph,
    /// Temporal filter stack, `l x l x K_B x N`.
    pub b4: LiftedGraph,
    pub composition: Composition,
    /// Inter-block activation; the final block's output is never activated.
    pub activation: Activation,
    pub task: ForecastTask,
    pub d_in: usize,
    pub c_hidden: usize,
    pub graph_source: GraphSource,
}

/// Glorot-uniform fill: scale by fan-in and fan-out of the linear map.
fn glorot(rng: &mut ChaCha20Rng, data: &mut [f64], fan_in: usize, fan_out: usize) {
    let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in data.iter_mut() {
        *v = (2.0 * rng.random::<f64>() - 1.0) * s;
    }
}

impl ModelParams {
    /// Seeded initialization. The filter stacks must agree with the task
    /// shape: `a4` carries one `N x N` stack per window step and `b4` one
    /// `l x l` stack per node.
    pub fn init(
        task: ForecastTask,
        d_in: usize,
        cfg: &ModelConfig,
        a4: LiftedGraph,
        b4: LiftedGraph,
        graph_source: GraphSource,
        seed: u64,
    ) -> Result<ModelParams> {
        if task.window == 0 || task.horizon == 0 {
            return Err(Error::InvalidArgument {
                op: "ModelParams::init",
                message: "window and horizon must be positive".into(),
            });
        }
        if d_in == 0 || cfg.c_hidden == 0 || cfg.n_blocks == 0 {
            return Err(Error::InvalidArgument {
                op: "ModelParams::init",
                message: "d_in, c_hidden, and n_blocks must be positive".into(),
            });
        }
        if a4.slices() != task.window {
            return Err(Error::ModeMismatch {
                op: "ModelParams::init (spatial stack per-step slices)",
                mode: 3,
                expected: task.window,
                got: a4.slices(),
            });
        }
        if b4.n() != task.window {
            return Err(Error::ModeMismatch {
                op: "ModelParams::init (temporal stack extent)",
                mode: 0,
                expected: task.window,
                got: b4.n(),
            });
        }
        if b4.slices() != a4.n() {
            return Err(Error::ModeMismatch {
                op: "ModelParams::init (temporal stack per-node slices)",
                mode: 3,
                expected: a4.n(),
                got: b4.slices(),
            });
        }
        let (n, l, c) = (a4.n(), task.window, cfg.c_hidden);
        let mut rng = ChaCha20Rng::seed_from_u64(seed);

        let mut input_proj = Matrix::zeros(d_in, c);
        glorot(&mut rng, input_proj.data_mut(), d_in, c);

        let mut blocks = Vec::with_capacity(cfg.n_blocks);
        for _ in 0..cfg.n_blocks {
            let mut wa = DenseTensor::zeros(&[c * a4.k(), c, l]);
            glorot(&mut rng, wa.data_mut(), c * a4.k(), c);
            let mut wb = DenseTensor::zeros(&[c * b4.k(), c, n]);
            glorot(&mut rng, wb.data_mut(), c * b4.k(), c);
            let w_b2 = match cfg.composition {
                Composition::Sequential => None,
                _ => {
                    let mut w2 = DenseTensor::zeros(&[c * b4.k(), c, n]);
                    glorot(&mut rng, w2.data_mut(), c * b4.k(), c);
                    Some(TemporalKernel::new(w2)?)
                }
            };
            blocks.push(BlockParams {
                w_a: SpatialKernel::new(wa)?,
                w_b: TemporalKernel::new(wb)?,
                w_b2,
            });
        }

        let mut output_head = Matrix::zeros(l * c, task.horizon * d_in);
        glorot(&mut rng, output_head.data_mut(), l * c, task.horizon * d_in);

        Ok(ModelParams {
            input_proj,
            blocks,
            output_head,
            a4,
            b4,
            composition: cfg.composition,
            activation: cfg.activation,
            task,
            d_in,
            c_hidden: cfg.c_hidden,
            graph_source,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.a4.n()
    }

    /// Flat views of every trainable buffer, in a fixed documented order:
    /// input projection, then per block `w_a`, `w_b`, (`w_b2`), then the
    /// output head, then (opt-in) the spatial and temporal filter stacks.
    /// Gradient containers enumerate in the same order.
    pub fn tensors_mut(&mut self, train_graphs: bool) -> Vec<&mut [f64]> {
        let ModelParams {
            input_proj,
            blocks,
            output_head,
            a4,
            b4,
            ..
        } = self;
        let mut out = vec![input_proj.data_mut()];
        for b in blocks {
            out.push(b.w_a.w.data_mut());
            out.push(b.w_b.w.data_mut());
            if let Some(w2) = &mut b.w_b2 {
                out.push(w2.w.data_mut());
            }
        }
        out.push(output_head.data_mut());
        if train_graphs {
            out.push(a4.filters.data_mut());
            out.push(b4.filters.data_mut());
        }
        out
    }

    fn check_input(&self, x: &DenseTensor) -> Result<(usize, usize, usize, usize)> {
        if x.rank() != 4 {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                expected: vec![4],
                got: vec![x.rank()],
            });
        }
        let (b, l, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        if l != self.task.window || n != self.n_nodes() || d != self.d_in {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                expected: vec![b, self.task.window, self.n_nodes(), self.d_in],
                got: vec![b, l, n, d],
            });
        }
        Ok((b, l, n, d))
    }
}

/// Contract the last mode of `x` with `m` (`x[..., i] * m[i, j]`).
/// The last mode is fastest-varying, so this is one dense matrix product.
pub(crate) fn last_mode_matmul(x: &DenseTensor, m: &Matrix) -> DenseTensor {
    let rank = x.rank();
    let inner = x.shape()[rank - 1];
    assert_eq!(inner, m.rows());
    let lead = x.len() / inner.max(1);
    let xm = Matrix::from_vec(lead, inner, x.data().to_vec()).unwrap();
    let ym = xm.matmul(m);
    let mut shape = x.shape().to_vec();
    shape[rank - 1] = m.cols();
    DenseTensor::from_vec(&shape, ym.data().to_vec()).unwrap()
}

/// Per-(sample, node) feature traces flattened to `(B*N) x (l*C)` with the
/// (t, c) pair flattened c-fastest. Row index is `b * N + n`.
pub(crate) fn flatten_head_input(h: &DenseTensor) -> Matrix {
    let (b, l, n, c) = (h.shape()[0], h.shape()[1], h.shape()[2], h.shape()[3]);
    let mut xf = Matrix::zeros(b * n, l * c);
    for bi in 0..b {
        for t in 0..l {
            for j in 0..n {
                for ch in 0..c {
                    xf.set(bi * n + j, t * c + ch, h.get(&[bi, t, j, ch]));
                }
            }
        }
    }
    xf
}

/// Inverse of the scatter in [`flatten_head_input`]'s output space: spread a
/// `(B*N) x (T'*D)` matrix into a `[B, T', N, D]` tensor.
pub(crate) fn scatter_head_output(yf: &Matrix, b: usize, horizon: usize, n: usize, d: usize) -> DenseTensor {
    let mut out = DenseTensor::zeros(&[b, horizon, n, d]);
    for bi in 0..b {
        for j in 0..n {
            for t in 0..horizon {
                for f in 0..d {
                    out.set(&[bi, t, j, f], yf.get(bi * n + j, t * d + f));
                }
            }
        }
    }
    out
}

/// Everything the backward pass needs from one block's forward evaluation.
#[derive(Clone, Debug)]
pub struct BlockTrace {
    /// The block's input.
    pub input: DenseTensor,
    /// Sub-layer outputs that feed later sub-layers, in evaluation order.
    pub mids: Vec<DenseTensor>,
    /// Block output before the inter-block ReLU; absent on the last block.
    pub pre_relu: Option<DenseTensor>,
}

/// Intermediate values of a full forward evaluation.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub blocks: Vec<BlockTrace>,
    /// Flattened features entering the head, `(B*N) x (l*C)`.
    pub head_input: Matrix,
    pub prediction: DenseTensor,
}

fn block_forward(
    x: &DenseTensor,
    blk: &BlockParams,
    a4: &LiftedGraph,
    b4: &LiftedGraph,
    composition: Composition,
) -> Result<(DenseTensor, Vec<DenseTensor>)> {
    fn need_w2(w: &Option<TemporalKernel>) -> Result<&TemporalKernel> {
        w.as_ref().ok_or(Error::InvalidArgument {
            op: "block_forward",
            message: "composition needs a second temporal kernel".into(),
        })
    }
    match composition {
        Composition::Sequential => {
            let mid = tgcl_forward(x, b4, &blk.w_b)?;
            let out = sgcl_forward(&mid, a4, &blk.w_a)?;
            Ok((out, vec![mid]))
        }
        Composition::Sandwich => {
            let t1 = tgcl_forward(x, b4, &blk.w_b)?;
            let s = sgcl_forward(&t1, a4, &blk.w_a)?;
            let out = tgcl_forward(&s, b4, need_w2(&blk.w_b2)?)?;
            Ok((out, vec![t1, s]))
        }
        Composition::Additive => {
            let t1 = tgcl_forward(x, b4, &blk.w_b)?;
            let s = sgcl_forward(x, a4, &blk.w_a)?;
            let t2 = tgcl_forward(x, b4, need_w2(&blk.w_b2)?)?;
            Ok((t1.add(&s).add(&t2), Vec::new()))
        }
    }
}

/// Forward evaluation that records per-block intermediates for the backward
/// pass. `model_forward` is this with the cache discarded, so both paths are
/// numerically identical by construction.
pub fn model_forward_cached(
    params: &ModelParams,
    x: &DenseTensor,
) -> Result<(DenseTensor, ForwardCache)> {
    let (b, _, n, d) = params.check_input(x)?;
    let mut h = last_mode_matmul(x, &params.input_proj);
    let last = params.blocks.len() - 1;
    let mut traces = Vec::with_capacity(params.blocks.len());
    for (i, blk) in params.blocks.iter().enumerate() {
        let input = h.clone();
        let (pre, mids) = block_forward(&h, blk, &params.a4, &params.b4, params.composition)?;
        let (out, pre_relu) = if i < last && params.activation == Activation::Relu {
            (pre.relu(), Some(pre))
        } else {
            (pre, None)
        };
        traces.push(BlockTrace {
            input,
            mids,
            pre_relu,
        });
        h = out;
    }
    let head_input = flatten_head_input(&h);
    let yf = head_input.matmul(&params.output_head);
    let prediction = scatter_head_output(&yf, b, params.task.horizon, n, d);
    prediction.ensure_finite("model_forward")?;
    Ok((
        prediction.clone(),
        ForwardCache {
            blocks: traces,
            head_input,
            prediction,
        },
    ))
}

/// Map an input window batch to its forecast.
pub fn model_forward(params: &ModelParams, x: &DenseTensor) -> Result<DenseTensor> {
    Ok(model_forward_cached(params, x)?.0)
}

/// Squared-error reduction: averaged over every element, or summed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Mean,
    Sum,
}

/// Squared-error loss between a prediction and its target.
pub fn loss(prediction: &DenseTensor, target: &DenseTensor, kind: LossKind) -> Result<f64> {
    if prediction.shape() != target.shape() {
        return Err(Error::ShapeMismatch {
            op: "loss",
            expected: target.shape().to_vec(),
            got: prediction.shape().to_vec(),
        });
    }
    if prediction.is_empty() {
        return Err(Error::EmptyInput { op: "loss" });
    }
    let mut acc = 0.0;
    for (p, y) in prediction.data().iter().zip(target.data()) {
        let e = p - y;
        acc += e * e;
    }
    Ok(match kind {
        LossKind::Sum => acc,
        LossKind::Mean => acc / prediction.len() as f64,
    })
}

/// Loss value together with its gradient in the prediction.
pub fn loss_gradient(
    prediction: &DenseTensor,
    target: &DenseTensor,
    kind: LossKind,
) -> Result<(f64, DenseTensor)> {
    let value = loss(prediction, target, kind)?;
    let scale = match kind {
        LossKind::Sum => 2.0,
        LossKind::Mean => 2.0 / prediction.len() as f64,
    };
    Ok((value, prediction.sub(target).scale(scale)))
}

/// Repeat each window's final observation across the horizon — the baseline
/// any trained forecaster has to beat.
pub fn persistence_forecast(x: &DenseTensor, horizon: usize) -> Result<DenseTensor> {
    if x.rank() != 4 {
        return Err(Error::ShapeMismatch {
            op: "persistence_forecast",
            expected: vec![4],
            got: vec![x.rank()],
        });
    }
    let (b, l, n, d) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    if l == 0 {
        return Err(Error::EmptyInput {
            op: "persistence_forecast",
        });
    }
    let mut out = DenseTensor::zeros(&[b, horizon, n, d]);
    for bi in 0..b {
        for t in 0..horizon {
            for j in 0..n {
                for f in 0..d {
                    out.set(&[bi, t, j, f], x.get(&[bi, l - 1, j, f]));
                }
            }
        }
    }
    Ok(out)
}
