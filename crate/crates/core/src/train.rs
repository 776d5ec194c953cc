//! Mini-batch training loop with early stopping.
//!
//! Batches are drawn by a seeded shuffle, gradients are evaluated per sample
//! and combined in index order — so runs are reproducible bit for bit for a
//! fixed seed whether or not the per-sample evaluations run on worker
//! threads — and the loop restores the best-validation parameters when it
//! stops. Non-finite losses or predictions abort with a divergence error
//! naming the epoch.

use crate::data::WindowedDataset;
use crate::error::{Error, Result};
use crate::grad::{gradients, GradOptions, ParamGrads};
use crate::model::{loss as model_loss, model_forward, LossKind, ModelParams};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

/// First-order update rules.
#[derive(Clone, Copy, Debug)]
pub enum Optimizer {
    /// Velocity `v <- momentum * v + g`, step `theta <- theta - lr * v`.
    Momentum { lr: f64, momentum: f64 },
    /// Bias-corrected adaptive moments.
    Adam {
        lr: f64,
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Optimizer {
        Optimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    fn lr(&self) -> f64 {
        match self {
            Optimizer::Momentum { lr, .. } | Optimizer::Adam { lr, .. } => *lr,
        }
    }
}

/// Multiply the learning rate by `factor` every `every` epochs.
#[derive(Clone, Copy, Debug)]
pub struct StepDecay {
    pub every: usize,
    pub factor: f64,
}

/// Training-loop controls.
#[derive(Clone, Copy, Debug)]
pub struct Hyperparams {
    pub optimizer: Optimizer,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub loss: LossKind,
    /// Also update the filter stacks.
    pub train_graphs: bool,
    /// Shuffle seed; fixed seed means bitwise-reproducible training.
    pub seed: u64,
    pub decay: Option<StepDecay>,
    /// Evaluate per-sample gradients on worker threads. Results are combined
    /// in sample order either way, so this never changes the numbers.
    pub parallel: bool,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            optimizer: Optimizer::Momentum {
                lr: 1e-3,
                momentum: 0.9,
            },
            batch_size: 16,
            max_epochs: 100,
            patience: 10,
            loss: LossKind::Mean,
            train_graphs: false,
            seed: 0,
            decay: None,
            parallel: true,
        }
    }
}

/// One epoch's losses and the learning rate it ran at.
#[derive(Clone, Copy, Debug)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub lr: f64,
}

/// Final parameters (best by validation loss when validation data exists)
/// plus the per-epoch history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

/// Per-view optimizer state congruent with `ModelParams::tensors_mut`.
struct OptimizerState {
    velocity: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    steps: usize,
}

impl OptimizerState {
    fn new(params: &mut ModelParams, train_graphs: bool) -> OptimizerState {
        let sizes: Vec<usize> = params
            .tensors_mut(train_graphs)
            .iter()
            .map(|v| v.len())
            .collect();
        OptimizerState {
            velocity: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            second: sizes.iter().map(|&s| vec![0.0; s]).collect(),
            steps: 0,
        }
    }

    fn apply(
        &mut self,
        params: &mut ModelParams,
        grads: &ParamGrads,
        opt: &Optimizer,
        lr: f64,
        train_graphs: bool,
    ) {
        self.steps += 1;
        let mut views = params.tensors_mut(train_graphs);
        let g_views = grads.tensors();
        assert_eq!(views.len(), g_views.len());
        match *opt {
            Optimizer::Momentum { momentum, .. } => {
                for ((theta, g), v) in views.iter_mut().zip(&g_views).zip(&mut self.velocity) {
                    for i in 0..theta.len() {
                        v[i] = momentum * v[i] + g[i];
                        theta[i] -= lr * v[i];
                    }
                }
            }
            Optimizer::Adam {
                beta1,
                beta2,
                epsilon,
                ..
            } => {
                let c1 = 1.0 - beta1.powi(self.steps as i32);
                let c2 = 1.0 - beta2.powi(self.steps as i32);
                for (((theta, g), m), v) in views
                    .iter_mut()
                    .zip(&g_views)
                    .zip(&mut self.velocity)
                    .zip(&mut self.second)
                {
                    for i in 0..theta.len() {
                        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                        theta[i] -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + epsilon);
                    }
                }
            }
        }
    }
}

fn as_divergence(err: Error, epoch: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Divergence { epoch },
        other => other,
    }
}

/// Loss and gradient over the listed samples, combined in index order.
fn batch_gradients(
    params: &ModelParams,
    ds: &WindowedDataset,
    idxs: &[usize],
    hp: &Hyperparams,
) -> Result<(f64, ParamGrads)> {
    let opts = GradOptions {
        loss: hp.loss,
        train_graphs: hp.train_graphs,
    };
    let eval = |&i: &usize| gradients(params, &ds.sample_x(i), &ds.sample_y(i), &opts);
    let evals: Vec<Result<(f64, ParamGrads)>> = if hp.parallel {
        idxs.par_iter().map(eval).collect()
    } else {
        idxs.iter().map(eval).collect()
    };
    let mut total = ParamGrads::zeros_like(params, hp.train_graphs);
    let mut loss_acc = 0.0;
    for ev in evals {
        let (l, g) = ev?;
        loss_acc += l;
        total.accumulate(&g);
    }
    if hp.loss == LossKind::Mean {
        // Every sample has the same element count, so the mean over the
        // batch is the mean of per-sample means.
        let inv = 1.0 / idxs.len() as f64;
        loss_acc *= inv;
        total.scale(inv);
    }
    Ok((loss_acc, total))
}

/// Dataset loss without gradients, combined per the loss kind.
pub fn dataset_loss(
    params: &ModelParams,
    ds: &WindowedDataset,
    kind: LossKind,
    parallel: bool,
) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::EmptyInput { op: "dataset_loss" });
    }
    let eval = |i: usize| -> Result<f64> {
        let pred = model_forward(params, &ds.sample_x(i))?;
        model_loss(&pred, &ds.sample_y(i), kind)
    };
    let losses: Vec<Result<f64>> = if parallel {
        (0..ds.len()).into_par_iter().map(eval).collect()
    } else {
        (0..ds.len()).map(eval).collect()
    };
    let mut acc = 0.0;
    for l in losses {
        acc += l?;
    }
    Ok(match kind {
        LossKind::Mean => acc / ds.len() as f64,
        LossKind::Sum => acc,
    })
}

/// Run the optimization loop.
///
/// Stops at `max_epochs`, or earlier once `patience` epochs pass without a
/// strict improvement of the monitored loss (validation loss when `val` has
/// samples, else training loss). The returned parameters are the ones from
/// the best monitored epoch.
pub fn train(
    init: ModelParams,
    train_set: &WindowedDataset,
    val: Option<&WindowedDataset>,
    hp: &Hyperparams,
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::EmptyInput { op: "train" });
    }
    if hp.batch_size == 0 || hp.max_epochs == 0 {
        return Err(Error::InvalidArgument {
            op: "train",
            message: "batch_size and max_epochs must be positive".into(),
        });
    }
    let val = val.filter(|v| !v.is_empty());
    let mut params = init;
    let mut state = OptimizerState::new(&mut params, hp.train_graphs);
    let mut rng = ChaCha20Rng::seed_from_u64(hp.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut history = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut best_params: Option<ModelParams> = None;
    let mut bad_epochs = 0usize;
    let mut stopped_early = false;
    let mut lr = hp.optimizer.lr();

    for epoch in 0..hp.max_epochs {
        if let Some(decay) = hp.decay {
            if epoch > 0 && epoch % decay.every == 0 {
                lr *= decay.factor;
            }
        }
        order.shuffle(&mut rng);
        let mut loss_weighted = 0.0;
        for chunk in order.chunks(hp.batch_size) {
            let (batch_loss, grads) =
                batch_gradients(&params, train_set, chunk, hp).map_err(|e| as_divergence(e, epoch))?;
            if !batch_loss.is_finite() {
                return Err(Error::Divergence { epoch });
            }
            loss_weighted += match hp.loss {
                LossKind::Mean => batch_loss * chunk.len() as f64,
                LossKind::Sum => batch_loss,
            };
            state.apply(&mut params, &grads, &hp.optimizer, lr, hp.train_graphs);
        }
        let train_loss = match hp.loss {
            LossKind::Mean => loss_weighted / train_set.len() as f64,
            LossKind::Sum => loss_weighted,
        };
        let val_loss = match val {
            Some(v) => Some(
                dataset_loss(&params, v, hp.loss, hp.parallel)
                    .map_err(|e| as_divergence(e, epoch))?,
            ),
            None => None,
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr,
        });
        let monitored = val_loss.unwrap_or(train_loss);
        if !monitored.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        if monitored < best_loss {
            best_loss = monitored;
            best_epoch = epoch;
            best_params = Some(params.clone());
            bad_epochs = 0;
        } else {
            bad_epochs += 1;
            if bad_epochs >= hp.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params.unwrap_or(params),
        history,
        best_epoch,
        stopped_early,
    })
}
