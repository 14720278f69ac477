//! Declarative run configuration: one TOML file per experiment, with
//! a section per concern. Every struct rejects unknown keys, so a
//! typo fails the run before any work starts.

use std::path::{Path, PathBuf};

use serde::Deserialize;

use hamlearn::analysis::DEFAULT_MI_BINS;
use hamlearn::dataset::{FamilyName, ModelFamily};
use hamlearn::decoupling::PulsePlacement;
use hamlearn::multistage::PipelineConfig;
use hamlearn::neural::TrainConfig;

use crate::CliError;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub dataset: Option<DatasetSection>,
    pub training: Option<TrainingSection>,
    pub evaluate: Option<EvaluateSection>,
    pub dd: Option<DdSection>,
    pub analysis: Option<AnalysisSection>,
    pub sweep: Option<SweepSection>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSection {
    /// Directory all outputs of this run are written into.
    pub out_dir: PathBuf,
    /// Master seed; every random stream in the run derives from it.
    pub seed: u64,
    /// Worker threads for sample-parallel work. Absent or 0 means
    /// available parallelism. Results are identical at any count.
    pub workers: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    /// Model family: "h1", "h2", "h3" or "h4".
    pub family: String,
    /// Qubit count for the N-qubit families; h1/h2 are fixed at 2.
    pub n_qubits: Option<usize>,
    /// Sampling interval, directly or as a multiple of pi. Exactly
    /// one of the two must be present.
    pub tau: Option<f64>,
    pub tau_over_pi: Option<f64>,
    pub n_steps: usize,
    pub n_samples: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Optional per-coefficient sampling ranges overriding the
    /// family defaults.
    pub ranges: Option<Vec<[f64; 2]>>,
}

impl DatasetSection {
    pub fn family(&self) -> Result<ModelFamily, CliError> {
        build_family(&self.family, self.n_qubits, self.ranges.as_deref())
    }

    pub fn tau(&self) -> Result<f64, CliError> {
        resolve_tau(self.tau, self.tau_over_pi)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub hidden_dim: usize,
    #[serde(default = "defaults::fc_hidden")]
    pub fc_hidden: usize,
    #[serde(default = "defaults::learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "defaults::batch_size")]
    pub batch_size: usize,
    pub epochs: usize,
    #[serde(default = "defaults::patience")]
    pub patience: usize,
    pub max_stages: usize,
    #[serde(default = "defaults::improvement_margin")]
    pub improvement_margin: f64,
    /// Fraction of the dataset used for training; the rest validates.
    #[serde(default = "defaults::train_fraction")]
    pub train_fraction: f64,
}

mod defaults {
    pub fn fc_hidden() -> usize {
        64
    }
    pub fn learning_rate() -> f64 {
        1e-3
    }
    pub fn batch_size() -> usize {
        256
    }
    pub fn patience() -> usize {
        30
    }
    pub fn improvement_margin() -> f64 {
        0.10
    }
    pub fn train_fraction() -> f64 {
        0.8
    }
    pub fn mi_bins() -> usize {
        super::DEFAULT_MI_BINS
    }
}

impl TrainingSection {
    pub fn pipeline_config(&self, seed: u64) -> PipelineConfig {
        PipelineConfig {
            hidden_dim: self.hidden_dim,
            fc_hidden: self.fc_hidden,
            train: TrainConfig {
                learning_rate: self.learning_rate,
                batch_size: self.batch_size,
                epochs: self.epochs,
                patience: self.patience,
                seed,
                ..TrainConfig::default()
            },
            max_stages: self.max_stages,
            improvement_margin: self.improvement_margin,
            ..PipelineConfig::default()
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluateSection {
    /// Observation-noise levels applied to the validation split.
    pub noise_sigmas: Vec<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DdSection {
    /// Full-system structure: "h3" or "h4".
    pub family: String,
    pub n_qubits: usize,
    /// True-coefficient source: draw from the family ranges with this
    /// seed, or spell the vector out. Exactly one must be present.
    pub theta_seed: Option<u64>,
    pub theta: Option<Vec<f64>>,
    /// Cycle counts per sampling interval to run, in order.
    pub p_list: Vec<usize>,
    #[serde(default)]
    pub placement: PlacementName,
}

#[derive(Debug, Clone, Copy, Default, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "lowercase")]
pub enum PlacementName {
    #[default]
    Spectators,
    Targets,
}

impl From<PlacementName> for PulsePlacement {
    fn from(p: PlacementName) -> Self {
        match p {
            PlacementName::Spectators => PulsePlacement::Spectators,
            PlacementName::Targets => PulsePlacement::Targets,
        }
    }
}

impl DdSection {
    pub fn family(&self) -> Result<ModelFamily, CliError> {
        build_family(&self.family, Some(self.n_qubits), None)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default = "defaults::mi_bins")]
    pub mi_bins: usize,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    pub family: String,
    pub n_qubits: Option<usize>,
    pub ranges: Option<Vec<[f64; 2]>>,
    #[serde(default)]
    pub noise_sigma: f64,
    /// Sampling-interval axis of the grid, directly or as multiples
    /// of pi. Exactly one of the two must be present.
    pub taus: Option<Vec<f64>>,
    pub tau_over_pi: Option<Vec<f64>>,
    /// Observation-count axis of the grid.
    pub n_steps: Vec<usize>,
    pub n_samples: usize,
}

impl SweepSection {
    pub fn family(&self) -> Result<ModelFamily, CliError> {
        build_family(&self.family, self.n_qubits, self.ranges.as_deref())
    }

    /// Cartesian product of the tau and step axes, tau-major.
    pub fn grid(&self) -> Result<Vec<(f64, usize)>, CliError> {
        let taus: Vec<f64> = match (&self.taus, &self.tau_over_pi) {
            (Some(t), None) => t.clone(),
            (None, Some(f)) => f.iter().map(|x| x * std::f64::consts::PI).collect(),
            _ => {
                return Err(CliError::Config(
                    "sweep needs exactly one of `taus` and `tau_over_pi`".into(),
                ))
            }
        };
        if taus.is_empty() || self.n_steps.is_empty() {
            return Err(CliError::Config("sweep grid axes must be non-empty".into()));
        }
        let mut grid = Vec::new();
        for &tau in &taus {
            for &s in &self.n_steps {
                grid.push((tau, s));
            }
        }
        Ok(grid)
    }
}

pub fn load(path: &Path) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Io(format!("reading {}: {e}", path.display())))?;
    toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

/// Pulls a command's required section out of the config or fails with
/// a message naming it.
pub fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
    section
        .as_ref()
        .ok_or_else(|| CliError::Config(format!("config is missing the [{name}] section")))
}

fn resolve_tau(tau: Option<f64>, tau_over_pi: Option<f64>) -> Result<f64, CliError> {
    match (tau, tau_over_pi) {
        (Some(t), None) => Ok(t),
        (None, Some(f)) => Ok(f * std::f64::consts::PI),
        _ => Err(CliError::Config(
            "exactly one of `tau` and `tau_over_pi` must be set".into(),
        )),
    }
}

fn build_family(
    name: &str,
    n_qubits: Option<usize>,
    ranges: Option<&[[f64; 2]]>,
) -> Result<ModelFamily, CliError> {
    let family_name = match name.to_ascii_lowercase().as_str() {
        "h1" => FamilyName::H1,
        "h2" => FamilyName::H2,
        "h3" => FamilyName::H3,
        "h4" => FamilyName::H4,
        other => {
            return Err(CliError::Config(format!(
                "unknown family {other:?} (expected h1, h2, h3 or h4)"
            )))
        }
    };
    let n = match (family_name, n_qubits) {
        (FamilyName::H1 | FamilyName::H2, q) => {
            let q = q.unwrap_or(2);
            if q != 2 {
                return Err(CliError::Config(format!(
                    "family {name} is a two-qubit family, got n_qubits = {q}"
                )));
            }
            2
        }
        (_, Some(q)) => q,
        (_, None) => {
            return Err(CliError::Config(format!(
                "family {name} needs an explicit n_qubits"
            )))
        }
    };
    let mut family =
        ModelFamily::by_name(family_name, n).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(r) = ranges {
        let pairs: Vec<(f64, f64)> = r.iter().map(|&[lo, hi]| (lo, hi)).collect();
        family = family
            .with_ranges(pairs)
            .map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(family)
}
