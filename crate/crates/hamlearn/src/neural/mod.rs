//! From-scratch sequence regressor: a single-layer LSTM scanned over
//! the observation series, followed by a two-layer fully connected
//! head (tanh hidden layer, affine output). Gradients come from
//! analytic backpropagation through time; optimisation is Adam.
//!
//! All arithmetic is f64 with fixed reduction orders, so training is
//! bit-reproducible for a given seed.

mod lstm;
mod train;

pub mod io;

pub(crate) use lstm::predict_into;
pub use lstm::Workspace;
pub use train::{fit, loss_and_gradients, FitOutcome};

use ndarray::{Array1, Array2, ArrayView3};
use rand::distributions::{Distribution, Uniform};
use rand::Rng;
use thiserror::Error;

use crate::quantum::ObservationSeries;
use crate::rng;
use crate::NUM_INITIAL_STATES;

/// Batch size used for all inference passes (validation, prediction,
/// residual computation). Fixed so that repeated evaluations of the
/// same data produce identical floating-point results.
pub(crate) const EVAL_BATCH: usize = 256;

const WEIGHT_STREAM: u64 = 0x5745_4947_4854_5300; // "WEIGHTS"
const SHUFFLE_STREAM: u64 = 0x5348_5546_464c_4500; // "SHUFFLE"

#[derive(Debug, Error)]
pub enum NeuralError {
    #[error("network dimension {0} must be positive")]
    ZeroDimension(&'static str),
    #[error("input has {got} features per step, network expects {expected}")]
    InputDimMismatch { expected: usize, got: usize },
    #[error("targets have {got} columns, network outputs {expected}")]
    OutputDimMismatch { expected: usize, got: usize },
    #[error("input series must contain at least one step")]
    EmptySeries,
    #[error("train and validation series have different step counts ({train} vs {val})")]
    StepCountMismatch { train: usize, val: usize },
    #[error("batch has {inputs} inputs but {targets} targets")]
    BatchSizeMismatch { inputs: usize, targets: usize },
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("invalid training config: {0}")]
    BadConfig(String),
    #[error("non-finite gradient in {array} at flat index {index}")]
    NonFiniteGradient { array: &'static str, index: usize },
    #[error("training diverged at epoch {epoch}: loss {loss}")]
    Divergence { epoch: usize, loss: f64 },
}

/// Network architecture.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetConfig {
    /// Features per timestep (three states times 3N observables).
    pub input_dim: usize,
    /// LSTM hidden width.
    pub hidden_dim: usize,
    /// Width of the fully connected hidden layer.
    pub fc_hidden: usize,
    /// Number of regressed coefficients.
    pub output_dim: usize,
}

impl NetConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if self.input_dim == 0 {
            return Err(NeuralError::ZeroDimension("input_dim"));
        }
        if self.hidden_dim == 0 {
            return Err(NeuralError::ZeroDimension("hidden_dim"));
        }
        if self.fc_hidden == 0 {
            return Err(NeuralError::ZeroDimension("fc_hidden"));
        }
        if self.output_dim == 0 {
            return Err(NeuralError::ZeroDimension("output_dim"));
        }
        Ok(())
    }
}

/// Optimiser and loop hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    /// The epsilon-hat added to the square-rooted second moment.
    pub epsilon_hat: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon_hat: 1e-8,
            batch_size: 256,
            epochs: 200,
            patience: 30,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), NeuralError> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(NeuralError::BadConfig(format!(
                "learning_rate {}",
                self.learning_rate
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(b.is_finite() && (0.0..1.0).contains(&b)) {
                return Err(NeuralError::BadConfig(format!("{name} {b}")));
            }
        }
        if !(self.epsilon_hat.is_finite() && self.epsilon_hat > 0.0) {
            return Err(NeuralError::BadConfig(format!(
                "epsilon_hat {}",
                self.epsilon_hat
            )));
        }
        if self.batch_size == 0 {
            return Err(NeuralError::BadConfig("batch_size 0".into()));
        }
        if self.epochs == 0 {
            return Err(NeuralError::BadConfig("epochs 0".into()));
        }
        Ok(())
    }
}

/// LSTM weights. Gate blocks are packed `[input, forget, cell, output]`
/// along the second axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    /// Input projection, `[input_dim, 4 * hidden]`.
    pub w_ih: Array2<f64>,
    /// Recurrent projection, `[hidden, 4 * hidden]`.
    pub w_hh: Array2<f64>,
    /// Packed gate bias, `[4 * hidden]`.
    pub bias: Array1<f64>,
}

/// Fully connected head weights: hidden -> fc_hidden (tanh) -> output.
#[derive(Debug, Clone, PartialEq)]
pub struct FcParams {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Per-weight values mirroring the trainable arrays; used for
/// gradients and for Adam's moment accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub w_ih: Array2<f64>,
    pub w_hh: Array2<f64>,
    pub bias: Array1<f64>,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl Gradients {
    pub fn zeros(cfg: &NetConfig) -> Self {
        Gradients {
            w_ih: Array2::zeros((cfg.input_dim, 4 * cfg.hidden_dim)),
            w_hh: Array2::zeros((cfg.hidden_dim, 4 * cfg.hidden_dim)),
            bias: Array1::zeros(4 * cfg.hidden_dim),
            w1: Array2::zeros((cfg.hidden_dim, cfg.fc_hidden)),
            b1: Array1::zeros(cfg.fc_hidden),
            w2: Array2::zeros((cfg.fc_hidden, cfg.output_dim)),
            b2: Array1::zeros(cfg.output_dim),
        }
    }

    pub fn zero(&mut self) {
        self.w_ih.fill(0.0);
        self.w_hh.fill(0.0);
        self.bias.fill(0.0);
        self.w1.fill(0.0);
        self.b1.fill(0.0);
        self.w2.fill(0.0);
        self.b2.fill(0.0);
    }

    pub(crate) fn slices(&self) -> [(&'static str, &[f64]); 7] {
        [
            ("w_ih", self.w_ih.as_slice().unwrap()),
            ("w_hh", self.w_hh.as_slice().unwrap()),
            ("bias", self.bias.as_slice().unwrap()),
            ("w1", self.w1.as_slice().unwrap()),
            ("b1", self.b1.as_slice().unwrap()),
            ("w2", self.w2.as_slice().unwrap()),
            ("b2", self.b2.as_slice().unwrap()),
        ]
    }

    pub(crate) fn slices_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.w_ih.as_slice_mut().unwrap(),
            self.w_hh.as_slice_mut().unwrap(),
            self.bias.as_slice_mut().unwrap(),
            self.w1.as_slice_mut().unwrap(),
            self.b1.as_slice_mut().unwrap(),
            self.w2.as_slice_mut().unwrap(),
            self.b2.as_slice_mut().unwrap(),
        ]
    }
}

/// Trainable state: weights plus Adam accumulators and step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkState {
    pub config: NetConfig,
    pub lstm: LstmParams,
    pub fc: FcParams,
    pub adam_m: Gradients,
    pub adam_v: Gradients,
    pub step: u64,
}

/// Xavier (Glorot) uniform initialisation for a `rows x cols` weight
/// matrix: entries drawn uniformly from +-sqrt(6 / (rows + cols)) in
/// row-major order.
pub fn init_xavier<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> Array2<f64> {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let dist = Uniform::new_inclusive(-bound, bound);
    let mut out = Array2::zeros((rows, cols));
    for v in out.iter_mut() {
        *v = dist.sample(rng);
    }
    out
}

impl NetworkState {
    /// Fresh network: Xavier-uniform weight matrices (drawn in the
    /// order w_ih, w_hh, w1, w2), zero biases except the forget-gate
    /// block, which starts at 1 so early training does not erase the
    /// cell state.
    pub fn init(cfg: &NetConfig, seed: u64) -> Result<Self, NeuralError> {
        cfg.validate()?;
        let mut r = rng::stream_from(rng::derive_seed(seed, WEIGHT_STREAM));
        let h = cfg.hidden_dim;
        let w_ih = init_xavier(cfg.input_dim, 4 * h, &mut r);
        let w_hh = init_xavier(h, 4 * h, &mut r);
        let mut bias = Array1::zeros(4 * h);
        bias.slice_mut(ndarray::s![h..2 * h]).fill(1.0);
        let w1 = init_xavier(h, cfg.fc_hidden, &mut r);
        let w2 = init_xavier(cfg.fc_hidden, cfg.output_dim, &mut r);
        Ok(NetworkState {
            config: *cfg,
            lstm: LstmParams { w_ih, w_hh, bias },
            fc: FcParams {
                w1,
                b1: Array1::zeros(cfg.fc_hidden),
                w2,
                b2: Array1::zeros(cfg.output_dim),
            },
            adam_m: Gradients::zeros(cfg),
            adam_v: Gradients::zeros(cfg),
            step: 0,
        })
    }

    pub(crate) fn param_slices_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.lstm.w_ih.as_slice_mut().unwrap(),
            self.lstm.w_hh.as_slice_mut().unwrap(),
            self.lstm.bias.as_slice_mut().unwrap(),
            self.fc.w1.as_slice_mut().unwrap(),
            self.fc.b1.as_slice_mut().unwrap(),
            self.fc.w2.as_slice_mut().unwrap(),
            self.fc.b2.as_slice_mut().unwrap(),
        ]
    }

    /// Total number of trainable weights.
    pub fn n_params(&self) -> usize {
        let c = &self.config;
        c.input_dim * 4 * c.hidden_dim
            + c.hidden_dim * 4 * c.hidden_dim
            + 4 * c.hidden_dim
            + c.hidden_dim * c.fc_hidden
            + c.fc_hidden
            + c.fc_hidden * c.output_dim
            + c.output_dim
    }
}

/// Builds the per-step network input for one observation series: the
/// three states' features concatenated state-major, `[S, 9N]`.
pub fn series_input(series: &ObservationSeries) -> Array2<f64> {
    let s = series.n_steps();
    let f = series.features_per_state();
    let mut out = Array2::zeros((s, NUM_INITIAL_STATES * f));
    let v = series.values();
    for k in 0..NUM_INITIAL_STATES {
        for j in 0..s {
            for x in 0..f {
                out[[j, k * f + x]] = v[[k, j, x]];
            }
        }
    }
    out
}

/// Runs the network on a single observation series and returns the
/// regressed coefficient vector.
pub fn forward(net: &NetworkState, series: &ObservationSeries) -> Result<Vec<f64>, NeuralError> {
    let input = series_input(series);
    let (s, f) = input.dim();
    if f != net.config.input_dim {
        return Err(NeuralError::InputDimMismatch {
            expected: net.config.input_dim,
            got: f,
        });
    }
    let inputs = input.insert_axis(ndarray::Axis(0));
    let mut ws = Workspace::new(&net.config, 1, s);
    lstm::forward_batch(net, inputs.view(), &[0], &mut ws);
    Ok(ws.out_view(1).row(0).to_vec())
}

/// Mean-squared-error loss: mean over rows of |pred - target|^2 / M.
pub fn loss_mse(pred: ndarray::ArrayView2<f64>, target: ndarray::ArrayView2<f64>) -> f64 {
    assert_eq!(pred.dim(), target.dim(), "loss operands must match");
    let (n, m) = pred.dim();
    assert!(n > 0 && m > 0, "loss of an empty batch");
    let mut acc = 0.0;
    for (p, t) in pred.iter().zip(target.iter()) {
        let d = p - t;
        acc += d * d;
    }
    acc / (n * m) as f64
}

/// One Adam update. Rejects non-finite gradients; increments the step
/// counter and applies bias-corrected first/second moments:
/// w <- w - lr * m_hat / (sqrt(v_hat) + epsilon_hat).
pub fn adam_step(
    net: &mut NetworkState,
    grads: &Gradients,
    cfg: &TrainConfig,
) -> Result<(), NeuralError> {
    for (name, slice) in grads.slices() {
        for (i, g) in slice.iter().enumerate() {
            if !g.is_finite() {
                return Err(NeuralError::NonFiniteGradient {
                    array: name,
                    index: i,
                });
            }
        }
    }
    net.step += 1;
    let t = net.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);

    // Split borrows: moments move out temporarily so the parameter
    // slices can be taken at the same time.
    let mut m = std::mem::replace(&mut net.adam_m, Gradients::zeros(&net.config));
    let mut v = std::mem::replace(&mut net.adam_v, Gradients::zeros(&net.config));
    {
        let params = net.param_slices_mut();
        let g_slices = grads.slices();
        let m_slices = m.slices_mut();
        let v_slices = v.slices_mut();
        for (((p, (_, g)), ms), vs) in params.into_iter().zip(g_slices).zip(m_slices).zip(v_slices)
        {
            for k in 0..p.len() {
                let gk = g[k];
                ms[k] = cfg.beta1 * ms[k] + (1.0 - cfg.beta1) * gk;
                vs[k] = cfg.beta2 * vs[k] + (1.0 - cfg.beta2) * gk * gk;
                let m_hat = ms[k] / bc1;
                let v_hat = vs[k] / bc2;
                p[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon_hat);
            }
        }
    }
    net.adam_m = m;
    net.adam_v = v;
    Ok(())
}

/// Per-epoch loss record emitted by `fit`.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Deterministic Fisher-Yates shuffle of `0..n` for one epoch.
pub(crate) fn epoch_permutation(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = rng::stream_from(rng::derive_seed(
        seed,
        SHUFFLE_STREAM.wrapping_add(epoch as u64),
    ));
    let mut idx: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        idx.swap(i, j);
    }
    idx
}

/// Validates an input tensor against a network and target matrix.
pub(crate) fn check_shapes(
    net_cfg: &NetConfig,
    inputs: &ArrayView3<f64>,
    targets: &ndarray::ArrayView2<f64>,
    what: &'static str,
) -> Result<(), NeuralError> {
    let (n, s, f) = inputs.dim();
    if n == 0 {
        return Err(NeuralError::EmptySet(what));
    }
    if s == 0 {
        return Err(NeuralError::EmptySeries);
    }
    if f != net_cfg.input_dim {
        return Err(NeuralError::InputDimMismatch {
            expected: net_cfg.input_dim,
            got: f,
        });
    }
    let (tn, tm) = targets.dim();
    if tn != n {
        return Err(NeuralError::BatchSizeMismatch {
            inputs: n,
            targets: tn,
        });
    }
    if tm != net_cfg.output_dim {
        return Err(NeuralError::OutputDimMismatch {
            expected: net_cfg.output_dim,
            got: tm,
        });
    }
    Ok(())
}
