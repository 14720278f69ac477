//! Statistical diagnostics over datasets and trained predictors:
//! per-coefficient error statistics at any stage cutoff, correlation
//! scans (Pearson and mutual information) between observation
//! features and the targets each stage regresses on, and full
//! pipeline sweeps over the sampling grid (τ, S).

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use thiserror::Error;

use crate::dataset::{self, Dataset, DatasetError, ModelFamily};
use crate::multistage::{
    self, normalization_factor, MultiStageError, MultiStagePredictor, PipelineConfig,
};

/// Default histogram resolution for mutual-information estimates.
pub const DEFAULT_MI_BINS: usize = 32;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("predictor and dataset were built for different setups")]
    FingerprintMismatch,
    #[error("series lengths differ: {x} vs {y}")]
    LengthMismatch { x: usize, y: usize },
    #[error("series of length {len} is too short (need at least {min})")]
    TooShort { len: usize, min: usize },
    #[error("histogram needs at least 2 bins, got {0}")]
    BadBins(usize),
    #[error("sweep grid is empty")]
    EmptyGrid,
    #[error(transparent)]
    MultiStage(#[from] MultiStageError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
}

/// Per-coefficient statistics of the estimation error θ̂ − θ for a
/// predictor truncated to its first `stage_cutoff` stages.
#[derive(Debug, Clone)]
pub struct ErrorStats {
    pub stage_cutoff: usize,
    /// Per-coefficient mean of θ̂_i − θ_i.
    pub mean: Array1<f64>,
    /// Per-coefficient population standard deviation of θ̂_i − θ_i.
    pub std: Array1<f64>,
}

/// Residual statistics of the truncated predictor over a dataset.
pub fn error_stats(
    predictor: &MultiStagePredictor,
    ds: &Dataset,
    stage_cutoff: usize,
) -> Result<ErrorStats, AnalysisError> {
    if predictor.fingerprint() != &ds.meta().fingerprint() {
        return Err(AnalysisError::FingerprintMismatch);
    }
    let inputs = ds.input_tensor();
    let targets = ds.target_matrix();
    // residual_matrix returns θ − θ̂; error statistics are quoted for
    // θ̂ − θ, so flip the sign.
    let errors =
        -multistage::residual_matrix(predictor, inputs.view(), targets.view(), stage_cutoff)?;
    let (mean, std) = multistage::column_stats(errors.view());
    Ok(ErrorStats {
        stage_cutoff,
        mean,
        std,
    })
}

/// Pearson product-moment correlation between two equal-length
/// series. `Ok(None)` when either series has zero variance, where the
/// coefficient is undefined.
pub fn pcc(x: ArrayView1<f64>, y: ArrayView1<f64>) -> Result<Option<f64>, AnalysisError> {
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < 2 {
        return Err(AnalysisError::TooShort {
            len: x.len(),
            min: 2,
        });
    }
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (&a, &b) in x.iter().zip(y.iter()) {
        let dx = a - mx;
        let dy = b - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)))
}

/// Histogram plug-in mutual-information estimate, in nats.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MiEstimate {
    pub nats: f64,
    /// True when either series was constant, which forces the
    /// estimate to 0 by convention.
    pub degenerate: bool,
}

fn bin_indices(x: ArrayView1<f64>, bins: usize) -> Option<Vec<usize>> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in x {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi <= lo {
        return None;
    }
    let scale = bins as f64 / (hi - lo);
    Some(
        x.iter()
            .map(|&v| (((v - lo) * scale) as usize).min(bins - 1))
            .collect(),
    )
}

/// Plug-in estimate I = Σ p(x,y)·ln(p(x,y)/(p(x)p(y))) over a
/// `bins`×`bins` equal-width histogram covering each variable's
/// observed range. Exactly symmetric in its arguments: the occupied
/// cells are visited in a transposition-invariant order.
pub fn mutual_information(
    x: ArrayView1<f64>,
    y: ArrayView1<f64>,
    bins: usize,
) -> Result<MiEstimate, AnalysisError> {
    if bins < 2 {
        return Err(AnalysisError::BadBins(bins));
    }
    if x.len() != y.len() {
        return Err(AnalysisError::LengthMismatch {
            x: x.len(),
            y: y.len(),
        });
    }
    if x.len() < bins {
        return Err(AnalysisError::TooShort {
            len: x.len(),
            min: bins,
        });
    }
    let (xb, yb) = match (bin_indices(x, bins), bin_indices(y, bins)) {
        (Some(xb), Some(yb)) => (xb, yb),
        _ => {
            return Ok(MiEstimate {
                nats: 0.0,
                degenerate: true,
            })
        }
    };
    let mut joint = vec![0u64; bins * bins];
    let mut mx = vec![0u64; bins];
    let mut my = vec![0u64; bins];
    for (&a, &b) in xb.iter().zip(yb.iter()) {
        joint[a * bins + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let n = x.len() as f64;
    let term = |a: usize, b: usize| -> f64 {
        let c = joint[a * bins + b];
        if c == 0 {
            return 0.0;
        }
        let p = c as f64 / n;
        p * ((c as f64 * n) / (mx[a] as f64 * my[b] as f64)).ln()
    };
    // Pairing the (a, b) and (b, a) cells keeps the accumulation
    // order identical under argument swap, so MI(x, y) == MI(y, x)
    // bit for bit.
    let mut nats = 0.0;
    for a in 0..bins {
        nats += term(a, a);
        for b in (a + 1)..bins {
            nats += term(a, b) + term(b, a);
        }
    }
    Ok(MiEstimate {
        nats: nats.max(0.0),
        degenerate: false,
    })
}

/// Strongest linear and information-theoretic dependence between any
/// observation feature and any component of one stage's targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationRow {
    pub stage: usize,
    pub max_abs_pcc: f64,
    pub max_mi: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorrelationReport {
    pub bins: usize,
    pub rows: Vec<CorrelationRow>,
}

/// Scans every (feature, target) pair for each stage's regression
/// targets: the raw coefficients at stage 0 and the normalized
/// residuals E_n/ε_n after that, with one extra row for the targets a
/// further stage would see. Features are the flattened observation
/// values, 3·S·3N per sample.
pub fn correlation_report(
    predictor: &MultiStagePredictor,
    ds: &Dataset,
    bins: usize,
) -> Result<CorrelationReport, AnalysisError> {
    if bins < 2 {
        return Err(AnalysisError::BadBins(bins));
    }
    if predictor.fingerprint() != &ds.meta().fingerprint() {
        return Err(AnalysisError::FingerprintMismatch);
    }
    let inputs = ds.input_tensor();
    let targets = ds.target_matrix();
    let (n, s, f) = inputs.dim();
    let flat = inputs
        .view()
        .into_shape_with_order((n, s * f))
        .expect("standard-layout reshape");
    let mut rows = Vec::new();
    for stage in 0..=predictor.n_stages() {
        let errors = multistage::residual_matrix(predictor, inputs.view(), targets.view(), stage)?;
        let eps = if stage < predictor.n_stages() {
            predictor.stages()[stage].epsilon
        } else {
            normalization_factor(errors.view())?
        };
        // Positive rescaling changes neither |PCC| nor the histogram
        // MI, but the targets are reported exactly as a stage at this
        // cutoff would see them.
        let scaled = if eps > 0.0 { errors / eps } else { errors };
        let target_cols: Vec<Array1<f64>> = (0..scaled.dim().1)
            .map(|m| scaled.column(m).to_owned())
            .collect();
        let per_feature: Vec<(f64, f64)> = (0..flat.dim().1)
            .into_par_iter()
            .map(|fi| {
                let col = flat.column(fi);
                let mut best_pcc = 0.0f64;
                let mut best_mi = 0.0f64;
                for t in &target_cols {
                    if let Ok(Some(r)) = pcc(col, t.view()) {
                        best_pcc = best_pcc.max(r.abs());
                    }
                    if let Ok(mi) = mutual_information(col, t.view(), bins) {
                        best_mi = best_mi.max(mi.nats);
                    }
                }
                (best_pcc, best_mi)
            })
            .collect();
        let (max_abs_pcc, max_mi) = per_feature
            .iter()
            .fold((0.0f64, 0.0f64), |(p, m), &(fp, fm)| (p.max(fp), m.max(fm)));
        rows.push(CorrelationRow {
            stage,
            max_abs_pcc,
            max_mi,
        });
    }
    Ok(CorrelationReport { bins, rows })
}

/// One pipeline run's quality at one sampling-grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint {
    pub tau: f64,
    pub n_steps: usize,
    pub stage: usize,
    pub train_infidelity: f64,
    pub val_infidelity: f64,
}

/// Runs the full multi-stage pipeline once per (τ, S) grid point and
/// tabulates per-stage train/validation infidelities. Each point
/// generates its own dataset from the shared master seed, so a
/// single-point grid reproduces a direct pipeline run exactly.
#[allow(clippy::too_many_arguments)]
pub fn sampling_sweep(
    family: &ModelFamily,
    grid: &[(f64, usize)],
    n_samples: usize,
    train_fraction: f64,
    master_seed: u64,
    noise_sigma: f64,
    config: &PipelineConfig,
) -> Result<Vec<SweepPoint>, AnalysisError> {
    if grid.is_empty() {
        return Err(AnalysisError::EmptyGrid);
    }
    let mut points = Vec::new();
    for &(tau, n_steps) in grid {
        let meta = dataset::DatasetMeta::new(
            family.clone(),
            tau,
            n_steps,
            n_samples,
            master_seed,
            noise_sigma,
        )?;
        let ds = dataset::generate(meta)?;
        let (train, val) = dataset::split(ds, train_fraction)?;
        let (_, reports) = multistage::run_pipeline(&train, &val, config)?;
        for report in &reports {
            points.push(SweepPoint {
                tau,
                n_steps,
                stage: report.stage,
                train_infidelity: 1.0 - report.train_fidelity,
                val_infidelity: 1.0 - report.val_fidelity,
            });
        }
    }
    Ok(points)
}
