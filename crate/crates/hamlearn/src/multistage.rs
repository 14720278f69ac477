//! Staged residual regression over a shared observation encoding.
//!
//! Stage 0 regresses the coefficient vector directly. Every later
//! stage regresses the *residual* left by the composition of all
//! earlier stages, rescaled to unit RMS so each network trains on
//! targets of comparable magnitude:
//!
//! ```text
//! theta_hat^(n) = sum_{j<n} eps_j * net_j(series)
//! E_n           = theta_true - theta_hat^(n)
//! eps_n         = RMS of all E_n components over the training set
//! stage n       = fit {series -> E_n / eps_n},   eps_0 = 1
//! ```
//!
//! The stored `epsilon` of a stage is the factor its targets were
//! divided by, so composing predictions is a plain weighted sum in
//! ascending stage order. Summation order is fixed, which makes the
//! composition reproducible bit for bit on identical inputs.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayView3, Axis};
use thiserror::Error;

use crate::dataset::{Dataset, MetaFingerprint};
use crate::neural::{
    self, fit, EpochRecord, NetConfig, NetworkState, NeuralError, TrainConfig, Workspace,
};
use crate::quantum::ObservationSeries;
use crate::rng;

/// Stream tag for per-stage weight seeds ("STAGE" in ASCII, zero
/// padded); the stage index is added before seed derivation.
const STAGE_STREAM: u64 = 0x5354_4147_4500_0000;

/// Coefficients smaller than this in magnitude are excluded from
/// relative-error means to keep the ratio well defined.
pub const RELATIVE_ERROR_GUARD: f64 = 1e-3;

/// Default relative improvement in validation infidelity a new stage
/// must deliver to be kept.
pub const DEFAULT_IMPROVEMENT_MARGIN: f64 = 0.10;

/// Default residual-RMS floor below which training another stage is
/// treated as converged.
pub const DEFAULT_EPSILON_FLOOR: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum MultiStageError {
    #[error("stage at position {position} has index {found}; indices must run 0, 1, 2, …")]
    NonConsecutiveStage { position: usize, found: usize },
    #[error("stage 0 must have epsilon exactly 1, got {0}")]
    BadStageZeroEpsilon(f64),
    #[error("stage {stage} has non-positive or non-finite epsilon {epsilon}")]
    BadEpsilon { stage: usize, epsilon: f64 },
    #[error("stage {stage} network architecture differs from stage 0")]
    MixedArchitectures { stage: usize },
    #[error("network input width {input} does not match {expected} series features")]
    WrongInputDim { input: usize, expected: usize },
    #[error("network output width {output} does not match {expected} coefficients")]
    WrongOutputDim { output: usize, expected: usize },
    #[error("dataset metadata does not match the predictor fingerprint")]
    FingerprintMismatch,
    #[error("series shape ({found_steps} steps x {found_features} features) does not match the predictor's ({steps} x {features})")]
    BadSeriesShape {
        steps: usize,
        features: usize,
        found_steps: usize,
        found_features: usize,
    },
    #[error("target matrix is {rows}x{cols}, expected {expected_rows}x{expected_cols}")]
    BadTargetShape {
        rows: usize,
        cols: usize,
        expected_rows: usize,
        expected_cols: usize,
    },
    #[error("cannot truncate to {requested} stages; predictor has {available}")]
    BadTruncation { requested: usize, available: usize },
    #[error("empty residual matrix")]
    EmptyResiduals,
    #[error("non-finite value in residual matrix")]
    NonFiniteResiduals,
    #[error("vector lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("fidelity of a zero vector is undefined")]
    ZeroVector,
    #[error("parameter group is empty after the |theta| >= {RELATIVE_ERROR_GUARD} guard")]
    EmptyGroup,
    #[error("group index {index} out of range for {len} coefficients")]
    GroupIndexOutOfRange { index: usize, len: usize },
    #[error("residual rms {epsilon:.3e} at stage {stage} is at or below the convergence floor")]
    Converged { stage: usize, epsilon: f64 },
    #[error("bad pipeline config: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Neural(#[from] NeuralError),
}

/// One trained stage: its network and the normalization factor its
/// targets were scaled by (`epsilon` multiplies its raw output when
/// composing predictions).
#[derive(Debug, Clone)]
pub struct StageModel {
    pub index: usize,
    pub net: NetworkState,
    pub epsilon: f64,
}

/// Ordered stages plus the dataset fingerprint they were trained
/// against. Applying the predictor to data with different structure
/// (family, sampling grid, or initial states) is rejected.
#[derive(Debug, Clone)]
pub struct MultiStagePredictor {
    fingerprint: MetaFingerprint,
    stages: Vec<StageModel>,
}

impl MultiStagePredictor {
    /// Validates stage ordering, normalization factors, and that every
    /// network matches the fingerprint's feature and coefficient
    /// counts with one shared architecture.
    pub fn new(
        fingerprint: MetaFingerprint,
        stages: Vec<StageModel>,
    ) -> Result<Self, MultiStageError> {
        let features = 3 * fingerprint.family.n_qubits() * crate::NUM_INITIAL_STATES;
        let outputs = fingerprint.family.n_params();
        for (position, stage) in stages.iter().enumerate() {
            if stage.index != position {
                return Err(MultiStageError::NonConsecutiveStage {
                    position,
                    found: stage.index,
                });
            }
            if !(stage.epsilon.is_finite() && stage.epsilon > 0.0) {
                return Err(MultiStageError::BadEpsilon {
                    stage: stage.index,
                    epsilon: stage.epsilon,
                });
            }
            if stage.index == 0 && stage.epsilon != 1.0 {
                return Err(MultiStageError::BadStageZeroEpsilon(stage.epsilon));
            }
            let cfg = stage.net.config;
            if cfg.input_dim != features {
                return Err(MultiStageError::WrongInputDim {
                    input: cfg.input_dim,
                    expected: features,
                });
            }
            if cfg.output_dim != outputs {
                return Err(MultiStageError::WrongOutputDim {
                    output: cfg.output_dim,
                    expected: outputs,
                });
            }
            if cfg != stages[0].net.config {
                return Err(MultiStageError::MixedArchitectures { stage: stage.index });
            }
        }
        Ok(MultiStagePredictor {
            fingerprint,
            stages,
        })
    }

    /// A predictor with no stages; it predicts the zero vector, so its
    /// residuals equal the raw targets.
    pub fn empty(fingerprint: MetaFingerprint) -> Self {
        MultiStagePredictor {
            fingerprint,
            stages: Vec::new(),
        }
    }

    pub fn fingerprint(&self) -> &MetaFingerprint {
        &self.fingerprint
    }

    pub fn stages(&self) -> &[StageModel] {
        &self.stages
    }

    pub fn n_stages(&self) -> usize {
        self.stages.len()
    }

    /// Coefficient estimate for one observation series.
    pub fn predict(&self, series: &ObservationSeries) -> Result<Array1<f64>, MultiStageError> {
        let x = neural::series_input(series);
        let (s, f) = x.dim();
        let tensor = x
            .into_shape_with_order((1, s, f))
            .expect("1-sample reshape");
        let out = self.predict_batch(tensor.view())?;
        Ok(out.index_axis(Axis(0), 0).to_owned())
    }

    /// Coefficient estimates for a `[n_samples, n_steps, features]`
    /// input tensor, using every stage.
    pub fn predict_batch(&self, inputs: ArrayView3<f64>) -> Result<Array2<f64>, MultiStageError> {
        self.predict_batch_truncated(inputs, self.stages.len())
    }

    /// Like `predict_batch` but composes only the first `n_stages`
    /// stages — the intermediate estimate theta_hat^(n).
    ///
    /// Inference always walks fixed-size row chunks in order and sums
    /// stage contributions in ascending stage order, so identical
    /// inputs give bitwise-identical outputs.
    pub fn predict_batch_truncated(
        &self,
        inputs: ArrayView3<f64>,
        n_stages: usize,
    ) -> Result<Array2<f64>, MultiStageError> {
        if n_stages > self.stages.len() {
            return Err(MultiStageError::BadTruncation {
                requested: n_stages,
                available: self.stages.len(),
            });
        }
        let (n, s, f) = inputs.dim();
        let features = 3 * self.fingerprint.family.n_qubits() * crate::NUM_INITIAL_STATES;
        if s != self.fingerprint.n_steps || f != features {
            return Err(MultiStageError::BadSeriesShape {
                steps: self.fingerprint.n_steps,
                features,
                found_steps: s,
                found_features: f,
            });
        }
        let m = self.fingerprint.family.n_params();
        let mut out = Array2::zeros((n, m));
        if n == 0 || n_stages == 0 {
            return Ok(out);
        }
        let chunk = neural::EVAL_BATCH.min(n);
        let mut ws = Workspace::new(&self.stages[0].net.config, chunk, s);
        for stage in &self.stages[..n_stages] {
            let eps = stage.epsilon;
            let mut start = 0;
            while start < n {
                let end = (start + chunk).min(n);
                let idx: Vec<usize> = (start..end).collect();
                let y = neural::predict_into(&stage.net, inputs, &idx, &mut ws);
                for (r, &i) in idx.iter().enumerate() {
                    for c in 0..m {
                        out[[i, c]] += eps * y[[r, c]];
                    }
                }
                start = end;
            }
        }
        Ok(out)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<(), MultiStageError> {
        if ds.meta().fingerprint() != self.fingerprint {
            return Err(MultiStageError::FingerprintMismatch);
        }
        Ok(())
    }
}

/// Residual matrix `E = theta_true - theta_hat` of the full predictor
/// over a dataset, one row per sample.
pub fn residuals(
    predictor: &MultiStagePredictor,
    ds: &Dataset,
) -> Result<Array2<f64>, MultiStageError> {
    predictor.check_dataset(ds)?;
    let inputs = ds.input_tensor();
    let targets = ds.target_matrix();
    residual_matrix(
        predictor,
        inputs.view(),
        targets.view(),
        predictor.n_stages(),
    )
}

/// Residuals of the first `n_stages` stages against explicit tensors.
pub fn residual_matrix(
    predictor: &MultiStagePredictor,
    inputs: ArrayView3<f64>,
    targets: ArrayView2<f64>,
    n_stages: usize,
) -> Result<Array2<f64>, MultiStageError> {
    let pred = predictor.predict_batch_truncated(inputs, n_stages)?;
    let (rows, cols) = pred.dim();
    if targets.dim() != (rows, cols) {
        return Err(MultiStageError::BadTargetShape {
            rows: targets.dim().0,
            cols: targets.dim().1,
            expected_rows: rows,
            expected_cols: cols,
        });
    }
    Ok(&targets - &pred)
}

/// Root-mean-square over every component of every row: the scalar the
/// next stage's targets are divided by. Zero only when all residuals
/// are exactly zero.
pub fn normalization_factor(errors: ArrayView2<f64>) -> Result<f64, MultiStageError> {
    let (n, m) = errors.dim();
    if n == 0 || m == 0 {
        return Err(MultiStageError::EmptyResiduals);
    }
    let mut acc = 0.0;
    for row in errors.rows() {
        for &e in row {
            acc += e * e;
        }
    }
    if !acc.is_finite() {
        return Err(MultiStageError::NonFiniteResiduals);
    }
    Ok((acc / (n * m) as f64).sqrt())
}

/// Cosine similarity of two coefficient vectors, clamped into
/// [-1, 1] against rounding spill.
pub fn fidelity(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Result<f64, MultiStageError> {
    if a.len() != b.len() {
        return Err(MultiStageError::LengthMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    let mut dot = 0.0;
    let mut na = 0.0;
    let mut nb = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(MultiStageError::ZeroVector);
    }
    Ok((dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0))
}

/// Mean row-wise fidelity between prediction and target matrices.
pub fn mean_fidelity(
    pred: ArrayView2<f64>,
    targets: ArrayView2<f64>,
) -> Result<f64, MultiStageError> {
    let n = pred.dim().0;
    if n == 0 || pred.dim() != targets.dim() {
        return Err(MultiStageError::BadTargetShape {
            rows: targets.dim().0,
            cols: targets.dim().1,
            expected_rows: pred.dim().0,
            expected_cols: pred.dim().1,
        });
    }
    let mut acc = 0.0;
    for (p, t) in pred.rows().into_iter().zip(targets.rows()) {
        acc += fidelity(p, t)?;
    }
    Ok(acc / n as f64)
}

/// Mean of |theta_hat_i - theta_i| / |theta_i| over the indices in
/// `group`, skipping coefficients whose true magnitude falls below
/// the guard.
pub fn relative_error(
    theta_hat: ArrayView1<f64>,
    theta_true: ArrayView1<f64>,
    group: &[usize],
) -> Result<f64, MultiStageError> {
    if theta_hat.len() != theta_true.len() {
        return Err(MultiStageError::LengthMismatch {
            left: theta_hat.len(),
            right: theta_true.len(),
        });
    }
    let mut acc = 0.0;
    let mut count = 0usize;
    for &i in group {
        if i >= theta_true.len() {
            return Err(MultiStageError::GroupIndexOutOfRange {
                index: i,
                len: theta_true.len(),
            });
        }
        let t = theta_true[i];
        if t.abs() < RELATIVE_ERROR_GUARD {
            continue;
        }
        acc += (theta_hat[i] - t).abs() / t.abs();
        count += 1;
    }
    if count == 0 {
        return Err(MultiStageError::EmptyGroup);
    }
    Ok(acc / count as f64)
}

/// Pooled relative error over a whole prediction matrix: every
/// (sample, coefficient-in-group) pair passing the magnitude guard
/// contributes one term to the mean.
pub fn mean_relative_error(
    pred: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    group: &[usize],
) -> Result<f64, MultiStageError> {
    if pred.dim() != targets.dim() {
        return Err(MultiStageError::BadTargetShape {
            rows: targets.dim().0,
            cols: targets.dim().1,
            expected_rows: pred.dim().0,
            expected_cols: pred.dim().1,
        });
    }
    let cols = targets.dim().1;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (p, t) in pred.rows().into_iter().zip(targets.rows()) {
        for &i in group {
            if i >= cols {
                return Err(MultiStageError::GroupIndexOutOfRange {
                    index: i,
                    len: cols,
                });
            }
            if t[i].abs() < RELATIVE_ERROR_GUARD {
                continue;
            }
            acc += (p[i] - t[i]).abs() / t[i].abs();
            count += 1;
        }
    }
    if count == 0 {
        return Err(MultiStageError::EmptyGroup);
    }
    Ok(acc / count as f64)
}

/// Per-coefficient mean and population standard deviation of a
/// residual matrix's columns.
pub fn column_stats(errors: ArrayView2<f64>) -> (Array1<f64>, Array1<f64>) {
    let (n, m) = errors.dim();
    let mut mean = Array1::zeros(m);
    let mut std = Array1::zeros(m);
    if n == 0 {
        return (mean, std);
    }
    for c in 0..m {
        let mut acc = 0.0;
        for r in 0..n {
            acc += errors[[r, c]];
        }
        mean[c] = acc / n as f64;
        let mut var = 0.0;
        for r in 0..n {
            let d = errors[[r, c]] - mean[c];
            var += d * d;
        }
        std[c] = (var / n as f64).sqrt();
    }
    (mean, std)
}

/// Architecture, optimizer settings, and stopping rules shared by
/// every stage of one pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub hidden_dim: usize,
    pub fc_hidden: usize,
    pub train: TrainConfig,
    pub max_stages: usize,
    /// A new stage is kept only if it shrinks validation infidelity by
    /// at least this relative fraction.
    pub improvement_margin: f64,
    /// Residual RMS at or below this is treated as converged.
    pub epsilon_floor: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            hidden_dim: 128,
            fc_hidden: 64,
            train: TrainConfig::default(),
            max_stages: 3,
            improvement_margin: DEFAULT_IMPROVEMENT_MARGIN,
            epsilon_floor: DEFAULT_EPSILON_FLOOR,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), MultiStageError> {
        if self.hidden_dim == 0 || self.fc_hidden == 0 {
            return Err(MultiStageError::BadConfig(
                "hidden_dim and fc_hidden must be positive".into(),
            ));
        }
        if self.max_stages == 0 {
            return Err(MultiStageError::BadConfig(
                "max_stages must be positive".into(),
            ));
        }
        if !(self.improvement_margin.is_finite() && (0.0..1.0).contains(&self.improvement_margin)) {
            return Err(MultiStageError::BadConfig(format!(
                "improvement_margin {} outside [0, 1)",
                self.improvement_margin
            )));
        }
        if !(self.epsilon_floor.is_finite() && self.epsilon_floor > 0.0) {
            return Err(MultiStageError::BadConfig(format!(
                "epsilon_floor {} must be positive",
                self.epsilon_floor
            )));
        }
        self.train.validate()?;
        Ok(())
    }
}

/// Outcome summary of one trained stage.
#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: usize,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    /// Factor this stage's targets were divided by (1 for stage 0).
    pub epsilon_used: f64,
    /// RMS of training residuals after composing this stage — the
    /// factor the next stage would use.
    pub epsilon_next: f64,
    /// Mean row-wise fidelity of the composed predictor.
    pub train_fidelity: f64,
    pub val_fidelity: f64,
    /// Per-coefficient mean of training residuals (theta - theta_hat).
    pub residual_mean: Array1<f64>,
    /// Per-coefficient population std of training residuals.
    pub residual_std: Array1<f64>,
}

/// Trains the next stage on top of `predictor` and reports the
/// composed predictor's quality. The returned stage is NOT added to
/// `predictor`; the caller decides whether to keep it.
pub fn train_stage(
    predictor: &MultiStagePredictor,
    train: &Dataset,
    val: &Dataset,
    config: &PipelineConfig,
) -> Result<(StageModel, StageReport), MultiStageError> {
    predictor.check_dataset(train)?;
    predictor.check_dataset(val)?;
    let train_in = train.input_tensor();
    let train_t = train.target_matrix();
    let val_in = val.input_tensor();
    let val_t = val.target_matrix();
    train_stage_on(
        predictor,
        train_in.view(),
        train_t.view(),
        val_in.view(),
        val_t.view(),
        config,
    )
}

fn train_stage_on(
    predictor: &MultiStagePredictor,
    train_in: ArrayView3<f64>,
    train_t: ArrayView2<f64>,
    val_in: ArrayView3<f64>,
    val_t: ArrayView2<f64>,
    config: &PipelineConfig,
) -> Result<(StageModel, StageReport), MultiStageError> {
    config.validate()?;
    let n = predictor.n_stages();
    let e_train = residual_matrix(predictor, train_in, train_t, n)?;
    let e_val = residual_matrix(predictor, val_in, val_t, n)?;
    let epsilon = if n == 0 {
        1.0
    } else {
        let eps = normalization_factor(e_train.view())?;
        if eps <= config.epsilon_floor {
            return Err(MultiStageError::Converged {
                stage: n,
                epsilon: eps,
            });
        }
        eps
    };
    // Validation targets use the training-set factor: epsilon must be a
    // property of the predictor, not of the data it is applied to.
    let t_train = e_train.mapv(|e| e / epsilon);
    let t_val = e_val.mapv(|e| e / epsilon);
    let net_cfg = NetConfig {
        input_dim: train_in.dim().2,
        hidden_dim: config.hidden_dim,
        fc_hidden: config.fc_hidden,
        output_dim: train_t.dim().1,
    };
    let mut stage_cfg = config.train.clone();
    stage_cfg.seed = rng::derive_seed(config.train.seed, STAGE_STREAM + n as u64);
    let outcome = fit(
        train_in,
        t_train.view(),
        val_in,
        t_val.view(),
        &net_cfg,
        &stage_cfg,
    )?;
    let stage = StageModel {
        index: n,
        net: outcome.net,
        epsilon,
    };

    let mut extended: Vec<StageModel> = predictor.stages.to_vec();
    extended.push(stage.clone());
    let composed = MultiStagePredictor::new(predictor.fingerprint.clone(), extended)?;
    let e_next = residual_matrix(&composed, train_in, train_t, composed.n_stages())?;
    let pred_train = &train_t - &e_next;
    let pred_val = composed.predict_batch(val_in)?;
    let (residual_mean, residual_std) = column_stats(e_next.view());
    let report = StageReport {
        stage: n,
        history: outcome.history,
        best_epoch: outcome.best_epoch,
        epsilon_used: epsilon,
        epsilon_next: normalization_factor(e_next.view())?,
        train_fidelity: mean_fidelity(pred_train.view(), train_t)?,
        val_fidelity: mean_fidelity(pred_val.view(), val_t)?,
        residual_mean,
        residual_std,
    };
    Ok((stage, report))
}

/// Trains up to `max_stages` stages, keeping each only while
/// validation infidelity improves by the configured margin; a stage
/// that fails the margin is discarded and the run stops. Residuals
/// shrinking to the convergence floor also stops cleanly.
pub fn run_pipeline(
    train: &Dataset,
    val: &Dataset,
    config: &PipelineConfig,
) -> Result<(MultiStagePredictor, Vec<StageReport>), MultiStageError> {
    config.validate()?;
    if train.meta().fingerprint() != val.meta().fingerprint() {
        return Err(MultiStageError::FingerprintMismatch);
    }
    let train_in = train.input_tensor();
    let train_t = train.target_matrix();
    let val_in = val.input_tensor();
    let val_t = val.target_matrix();
    let mut predictor = MultiStagePredictor::empty(train.meta().fingerprint());
    let mut reports: Vec<StageReport> = Vec::new();
    let mut prev_infidelity: Option<f64> = None;
    for _ in 0..config.max_stages {
        let outcome = train_stage_on(
            &predictor,
            train_in.view(),
            train_t.view(),
            val_in.view(),
            val_t.view(),
            config,
        );
        let (stage, report) = match outcome {
            Ok(pair) => pair,
            Err(MultiStageError::Converged { .. }) => break,
            Err(other) => return Err(other),
        };
        let infidelity = 1.0 - report.val_fidelity;
        if let Some(prev) = prev_infidelity {
            if infidelity > (1.0 - config.improvement_margin) * prev {
                break;
            }
        }
        prev_infidelity = Some(infidelity);
        predictor.stages.push(stage);
        reports.push(report);
    }
    Ok((predictor, reports))
}
