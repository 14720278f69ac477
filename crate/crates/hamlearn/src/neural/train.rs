//! Mini-batch training loop: deterministic shuffling, Adam updates,
//! early stopping on validation loss, best-weights restoration.

use ndarray::{ArrayView2, ArrayView3};

use super::lstm::{backward_batch, forward_batch, loss_and_grad_out, Workspace};
use super::{
    check_shapes, epoch_permutation, EpochRecord, Gradients, NetConfig, NetworkState, NeuralError,
    TrainConfig, EVAL_BATCH,
};

/// Result of a training run: the weights with minimum validation
/// loss, the full per-epoch history, and where the minimum occurred.
#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub net: NetworkState,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean loss of `net` over a whole input tensor, evaluated in fixed
/// chunks so repeated calls produce identical floating-point results.
pub(crate) fn evaluate_loss(
    net: &NetworkState,
    inputs: ArrayView3<f64>,
    targets: ArrayView2<f64>,
    ws: &mut Workspace,
) -> f64 {
    let n = inputs.dim().0;
    let chunk = ws.max_batch.min(EVAL_BATCH);
    let mut acc = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + chunk).min(n);
        let idx: Vec<usize> = (start..end).collect();
        forward_batch(net, inputs, &idx, ws);
        let m = net.config.output_dim;
        for (r, &i) in idx.iter().enumerate() {
            for c in 0..m {
                let d = ws.out_view(idx.len())[[r, c]] - targets[[i, c]];
                acc += d * d;
            }
        }
        start = end;
    }
    acc / (n * net.config.output_dim) as f64
}

/// Mean-squared-error loss of `net` over a whole batch together with
/// the analytic gradient of that loss for every weight — exactly the
/// quantities one optimizer step consumes, exposed so gradients can
/// be verified against finite differences of the same loss.
pub fn loss_and_gradients(
    net: &NetworkState,
    inputs: ArrayView3<f64>,
    targets: ArrayView2<f64>,
) -> Result<(f64, Gradients), NeuralError> {
    net.config.validate()?;
    check_shapes(&net.config, &inputs, &targets, "batch")?;
    let n = inputs.dim().0;
    let s = inputs.dim().1;
    let mut ws = Workspace::new(&net.config, n, s);
    let idx: Vec<usize> = (0..n).collect();
    forward_batch(net, inputs, &idx, &mut ws);
    let loss = loss_and_grad_out(&mut ws, &idx, targets);
    let mut grads = Gradients::zeros(&net.config);
    backward_batch(net, n, &mut ws, &mut grads);
    Ok((loss, grads))
}

/// Trains a fresh network and returns the weights that achieved the
/// minimum validation loss.
///
/// Each epoch shuffles the training set with a seed derived from
/// `cfg.seed` and the epoch index, walks it in `batch_size` chunks
/// (final partial chunk included), and applies one Adam update per
/// batch. Validation loss is computed with epoch-end weights. If no
/// epoch improves the best validation loss for `patience` epochs the
/// loop stops early. Non-finite losses abort with an error.
pub fn fit(
    inputs_train: ArrayView3<f64>,
    targets_train: ArrayView2<f64>,
    inputs_val: ArrayView3<f64>,
    targets_val: ArrayView2<f64>,
    net_cfg: &NetConfig,
    cfg: &TrainConfig,
) -> Result<FitOutcome, NeuralError> {
    net_cfg.validate()?;
    cfg.validate()?;
    check_shapes(net_cfg, &inputs_train, &targets_train, "train")?;
    check_shapes(net_cfg, &inputs_val, &targets_val, "validation")?;
    let s_train = inputs_train.dim().1;
    let s_val = inputs_val.dim().1;
    if s_train != s_val {
        return Err(NeuralError::StepCountMismatch {
            train: s_train,
            val: s_val,
        });
    }

    let n_train = inputs_train.dim().0;
    let n_val = inputs_val.dim().0;
    let train_chunk = cfg.batch_size.min(n_train);
    let ws_batch = train_chunk.max(EVAL_BATCH.min(n_val));
    let mut ws = Workspace::new(net_cfg, ws_batch, s_train);

    let mut net = NetworkState::init(net_cfg, cfg.seed)?;
    let mut grads = Gradients::zeros(net_cfg);
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(usize, f64, NetworkState)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..cfg.epochs {
        let order = epoch_permutation(cfg.seed, epoch, n_train);
        let mut sq_err_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            forward_batch(&net, inputs_train, batch, &mut ws);
            let batch_loss = loss_and_grad_out(&mut ws, batch, targets_train);
            sq_err_sum += batch_loss * batch.len() as f64;
            grads.zero();
            backward_batch(&net, batch.len(), &mut ws, &mut grads);
            adam_update(&mut net, &grads, cfg, epoch)?;
        }
        let train_loss = sq_err_sum / n_train as f64;
        let val_loss = evaluate_loss(&net, inputs_val, targets_val, &mut ws);
        if !train_loss.is_finite() {
            return Err(NeuralError::Divergence {
                epoch,
                loss: train_loss,
            });
        }
        if !val_loss.is_finite() {
            return Err(NeuralError::Divergence {
                epoch,
                loss: val_loss,
            });
        }
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
        });

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_loss < *b);
        if improved {
            best = Some((epoch, val_loss, net.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_loss, best_net) =
        best.expect("at least one epoch ran, so a best snapshot exists");
    Ok(FitOutcome {
        net: best_net,
        history,
        best_epoch,
        best_val_loss,
    })
}

fn adam_update(
    net: &mut NetworkState,
    grads: &Gradients,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(), NeuralError> {
    super::adam_step(net, grads, cfg).map_err(|e| match e {
        NeuralError::NonFiniteGradient { .. } => NeuralError::Divergence {
            epoch,
            loss: f64::NAN,
        },
        other => other,
    })
}
