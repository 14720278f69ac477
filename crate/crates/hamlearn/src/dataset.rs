//! Labelled datasets: families of Pauli-string Hamiltonians with
//! coefficient priors, and the observation series generated from them.
//!
//! A dataset is fully determined by its metadata (family, tau, number
//! of steps, sample count, master seed, noise level): the three
//! initial states are drawn once from a dedicated stream of the
//! master seed, and sample i draws its coefficients and noise from a
//! stream seeded with `master_seed ^ i`, so generation is reproducible
//! and order-independent.

use ndarray::{Array2, Array3};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use std::fmt;
use thiserror::Error;

use crate::quantum::{
    haar_random_state, observe_series, HamiltonianModel, ObservationSeries, Pauli, PauliString,
    QuantumError, QuantumState,
};
use crate::{rng, NUM_INITIAL_STATES};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error("unknown model family '{0}'")]
    UnknownFamily(String),
    #[error("family {family} requires at least {min} qubits, got {got}")]
    TooFewQubits {
        family: &'static str,
        min: usize,
        got: usize,
    },
    #[error("expected {expected} coefficient ranges, got {got}")]
    RangeCountMismatch { expected: usize, got: usize },
    #[error("range {index} is invalid: [{lo}, {hi}]")]
    InvalidRange { index: usize, lo: f64, hi: f64 },
    #[error("theta has {got} entries, family has {expected} parameters")]
    ThetaLengthMismatch { expected: usize, got: usize },
    #[error("dataset must contain at least one sample")]
    Empty,
    #[error("noise sigma {0} must be finite and non-negative")]
    BadSigma(f64),
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    BadFraction(f64),
    #[error("split would leave an empty partition ({n_train} train / {n_val} val)")]
    DegenerateSplit { n_train: usize, n_val: usize },
}

/// Named Hamiltonian structure.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FamilyName {
    /// Two qubits: local sigma_z fields plus an XX coupling.
    H1,
    /// Two qubits: all nine two-site sigma_alpha sigma_beta couplings.
    H2,
    /// N qubits: local sigma_z fields plus all-pairs XX couplings.
    H3,
    /// N-qubit chain: all nine couplings per pair at distances 1-3,
    /// with ranges shrinking by a decade per distance.
    H4,
}

impl FamilyName {
    pub fn parse(s: &str) -> Result<Self, DatasetError> {
        match s {
            "H1" => Ok(FamilyName::H1),
            "H2" => Ok(FamilyName::H2),
            "H3" => Ok(FamilyName::H3),
            "H4" => Ok(FamilyName::H4),
            other => Err(DatasetError::UnknownFamily(other.to_string())),
        }
    }
}

impl fmt::Display for FamilyName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FamilyName::H1 => "H1",
            FamilyName::H2 => "H2",
            FamilyName::H3 => "H3",
            FamilyName::H4 => "H4",
        })
    }
}

const AXES: [Pauli; 3] = [Pauli::X, Pauli::Y, Pauli::Z];
const AXIS_NAMES: [char; 3] = ['x', 'y', 'z'];

/// A parameterised Hamiltonian structure: an ordered list of Pauli
/// strings with a uniform prior range per coefficient.
#[derive(Debug, Clone)]
pub struct ModelFamily {
    name: FamilyName,
    n_qubits: usize,
    terms: Vec<PauliString>,
    ranges: Vec<(f64, f64)>,
    labels: Vec<String>,
}

impl PartialEq for ModelFamily {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name
            && self.n_qubits == other.n_qubits
            && self.terms == other.terms
            && self.ranges.len() == other.ranges.len()
            && self
                .ranges
                .iter()
                .zip(&other.ranges)
                .all(|(a, b)| a.0.to_bits() == b.0.to_bits() && a.1.to_bits() == b.1.to_bits())
    }
}

impl ModelFamily {
    /// H1 = w1 Z1 + w2 Z2 + J12 X1 X2, all coefficients in [-1, 1].
    pub fn h1() -> Self {
        ModelFamily {
            name: FamilyName::H1,
            n_qubits: 2,
            terms: vec![
                PauliString::parse("ZI").unwrap(),
                PauliString::parse("IZ").unwrap(),
                PauliString::parse("XX").unwrap(),
            ],
            ranges: vec![(-1.0, 1.0); 3],
            labels: vec!["omega1".into(), "omega2".into(), "J12".into()],
        }
    }

    /// H2 = sum_{a,b} J_ab sigma_a^1 sigma_b^2 over all nine axis
    /// pairs in row-major order (xx, xy, xz, yx, ...), each in [-1, 1].
    pub fn h2() -> Self {
        let mut terms = Vec::with_capacity(9);
        let mut labels = Vec::with_capacity(9);
        for (i, a) in AXES.iter().enumerate() {
            for (j, b) in AXES.iter().enumerate() {
                terms.push(PauliString::new(vec![*a, *b]).unwrap());
                labels.push(format!("J{}{}", AXIS_NAMES[i], AXIS_NAMES[j]));
            }
        }
        ModelFamily {
            name: FamilyName::H2,
            n_qubits: 2,
            terms,
            ranges: vec![(-1.0, 1.0); 9],
            labels,
        }
    }

    /// H3 = sum_i w_i Z_i + sum_{i<j} J_ij X_i X_j on `n_qubits`
    /// qubits; locals first, then pairs in lexicographic order.
    pub fn h3(n_qubits: usize) -> Result<Self, DatasetError> {
        if n_qubits < 2 {
            return Err(DatasetError::TooFewQubits {
                family: "H3",
                min: 2,
                got: n_qubits,
            });
        }
        let mut terms = Vec::new();
        let mut labels = Vec::new();
        for i in 0..n_qubits {
            terms.push(PauliString::single(n_qubits, i, Pauli::Z).unwrap());
            labels.push(format!("omega{}", i + 1));
        }
        for i in 0..n_qubits {
            for j in (i + 1)..n_qubits {
                terms.push(PauliString::two_site(n_qubits, i, Pauli::X, j, Pauli::X).unwrap());
                labels.push(format!("J{}{}", i + 1, j + 1));
            }
        }
        let n_params = terms.len();
        Ok(ModelFamily {
            name: FamilyName::H3,
            n_qubits,
            terms,
            ranges: vec![(-1.0, 1.0); n_params],
            labels,
        })
    }

    /// H4: chain with all nine axis couplings per pair, at distances
    /// 1, 2, 3 with ranges [-1, 1], [-0.1, 0.1], [-0.01, 0.01].
    /// Blocks are ordered by distance, then left site, then axis pair.
    pub fn h4(n_qubits: usize) -> Result<Self, DatasetError> {
        if n_qubits < 2 {
            return Err(DatasetError::TooFewQubits {
                family: "H4",
                min: 2,
                got: n_qubits,
            });
        }
        let mut terms = Vec::new();
        let mut labels = Vec::new();
        let mut ranges = Vec::new();
        let widths = [1.0, 0.1, 0.01];
        for (d_idx, dist) in [1usize, 2, 3].iter().enumerate() {
            for i in 0..n_qubits.saturating_sub(*dist) {
                let j = i + dist;
                for (ai, a) in AXES.iter().enumerate() {
                    for (bi, b) in AXES.iter().enumerate() {
                        terms.push(PauliString::two_site(n_qubits, i, *a, j, *b).unwrap());
                        labels.push(format!(
                            "J{}{}_{}{}",
                            i + 1,
                            j + 1,
                            AXIS_NAMES[ai],
                            AXIS_NAMES[bi]
                        ));
                        ranges.push((-widths[d_idx], widths[d_idx]));
                    }
                }
            }
        }
        Ok(ModelFamily {
            name: FamilyName::H4,
            n_qubits,
            terms,
            ranges,
            labels,
        })
    }

    /// Constructs the family named by `name` on `n_qubits` qubits.
    pub fn by_name(name: FamilyName, n_qubits: usize) -> Result<Self, DatasetError> {
        match name {
            FamilyName::H1 => {
                if n_qubits != 2 {
                    return Err(DatasetError::TooFewQubits {
                        family: "H1",
                        min: 2,
                        got: n_qubits,
                    });
                }
                Ok(ModelFamily::h1())
            }
            FamilyName::H2 => {
                if n_qubits != 2 {
                    return Err(DatasetError::TooFewQubits {
                        family: "H2",
                        min: 2,
                        got: n_qubits,
                    });
                }
                Ok(ModelFamily::h2())
            }
            FamilyName::H3 => ModelFamily::h3(n_qubits),
            FamilyName::H4 => ModelFamily::h4(n_qubits),
        }
    }

    /// Replaces the coefficient ranges (e.g. to shrink selected
    /// parameters by orders of magnitude). Degenerate ranges with
    /// lo == hi are allowed and pin the coefficient.
    pub fn with_ranges(mut self, ranges: Vec<(f64, f64)>) -> Result<Self, DatasetError> {
        if ranges.len() != self.terms.len() {
            return Err(DatasetError::RangeCountMismatch {
                expected: self.terms.len(),
                got: ranges.len(),
            });
        }
        for (i, (lo, hi)) in ranges.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(DatasetError::InvalidRange {
                    index: i,
                    lo: *lo,
                    hi: *hi,
                });
            }
        }
        self.ranges = ranges;
        Ok(self)
    }

    pub fn name(&self) -> FamilyName {
        self.name
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.terms.len()
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn ranges(&self) -> &[(f64, f64)] {
        &self.ranges
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    /// Instantiates the Hamiltonian for a coefficient vector.
    pub fn model(&self, theta: &[f64]) -> Result<HamiltonianModel, DatasetError> {
        if theta.len() != self.n_params() {
            return Err(DatasetError::ThetaLengthMismatch {
                expected: self.n_params(),
                got: theta.len(),
            });
        }
        Ok(HamiltonianModel::new(
            self.n_qubits,
            self.terms.clone(),
            theta.to_vec(),
        )?)
    }

    /// Parameter indices grouped by role, for per-group error reports:
    /// H1/H2 use one group per parameter, H3 groups locals vs
    /// couplings, H4 groups by chain distance.
    pub fn param_groups(&self) -> Vec<(String, Vec<usize>)> {
        match self.name {
            FamilyName::H1 | FamilyName::H2 => self
                .labels
                .iter()
                .enumerate()
                .map(|(i, l)| (l.clone(), vec![i]))
                .collect(),
            FamilyName::H3 => {
                let n = self.n_qubits;
                vec![
                    ("omega".to_string(), (0..n).collect()),
                    ("J".to_string(), (n..self.n_params()).collect()),
                ]
            }
            FamilyName::H4 => {
                let n = self.n_qubits;
                let mut groups = Vec::new();
                let mut offset = 0;
                for (gname, dist) in [("NN", 1usize), ("NNN", 2), ("NNNN", 3)] {
                    let n_pairs = n.saturating_sub(dist);
                    let len = 9 * n_pairs;
                    if len > 0 {
                        groups.push((gname.to_string(), (offset..offset + len).collect()));
                    }
                    offset += len;
                }
                groups
            }
        }
    }
}

/// Everything needed to regenerate a dataset byte-for-byte.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetMeta {
    pub family: ModelFamily,
    pub tau: f64,
    pub n_steps: usize,
    pub n_samples: usize,
    pub master_seed: u64,
    pub noise_sigma: f64,
    initial_states: Vec<QuantumState>,
}

impl DatasetMeta {
    /// Draws the three fixed Haar-random initial states from the
    /// master seed's dedicated stream and freezes them.
    pub fn new(
        family: ModelFamily,
        tau: f64,
        n_steps: usize,
        n_samples: usize,
        master_seed: u64,
        noise_sigma: f64,
    ) -> Result<Self, DatasetError> {
        if n_samples == 0 {
            return Err(DatasetError::Empty);
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(DatasetError::Quantum(QuantumError::BadTau(tau)));
        }
        if n_steps == 0 {
            return Err(DatasetError::Quantum(QuantumError::EmptySeries));
        }
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(DatasetError::BadSigma(noise_sigma));
        }
        let mut state_rng = rng::initial_state_stream(master_seed);
        let initial_states = (0..NUM_INITIAL_STATES)
            .map(|_| haar_random_state(family.n_qubits(), &mut state_rng))
            .collect();
        Ok(DatasetMeta {
            family,
            tau,
            n_steps,
            n_samples,
            master_seed,
            noise_sigma,
            initial_states,
        })
    }

    /// Rebuilds metadata from persisted parts (container loader).
    pub(crate) fn from_parts(
        family: ModelFamily,
        tau: f64,
        n_steps: usize,
        n_samples: usize,
        master_seed: u64,
        noise_sigma: f64,
        initial_states: Vec<QuantumState>,
    ) -> Self {
        DatasetMeta {
            family,
            tau,
            n_steps,
            n_samples,
            master_seed,
            noise_sigma,
            initial_states,
        }
    }

    pub fn initial_states(&self) -> &[QuantumState] {
        &self.initial_states
    }

    /// The part of the metadata a trained predictor depends on: the
    /// family structure, sampling grid, and initial states. Noise and
    /// seeds may differ between datasets a predictor is applied to.
    pub fn fingerprint(&self) -> MetaFingerprint {
        MetaFingerprint {
            family: self.family.clone(),
            tau: self.tau,
            n_steps: self.n_steps,
            initial_states: self.initial_states.clone(),
        }
    }
}

/// Structural identity of a dataset, attached to trained predictors
/// and checked before applying them. Float comparisons are bit-exact.
#[derive(Debug, Clone)]
pub struct MetaFingerprint {
    pub family: ModelFamily,
    pub tau: f64,
    pub n_steps: usize,
    pub initial_states: Vec<QuantumState>,
}

impl PartialEq for MetaFingerprint {
    fn eq(&self, other: &Self) -> bool {
        self.family == other.family
            && self.tau.to_bits() == other.tau.to_bits()
            && self.n_steps == other.n_steps
            && self.initial_states.len() == other.initial_states.len()
            && self
                .initial_states
                .iter()
                .zip(&other.initial_states)
                .all(|(a, b)| {
                    a.amplitudes().len() == b.amplitudes().len()
                        && a.amplitudes()
                            .iter()
                            .zip(b.amplitudes().iter())
                            .all(|(x, y)| {
                                x.re.to_bits() == y.re.to_bits() && x.im.to_bits() == y.im.to_bits()
                            })
                })
    }
}

/// One labelled example: the observation series and the coefficients
/// that generated it.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub series: ObservationSeries,
    pub theta: Vec<f64>,
}

/// A generated dataset. `meta.n_samples` always equals
/// `samples.len()`, including after splits.
#[derive(Debug, Clone)]
pub struct Dataset {
    meta: DatasetMeta,
    samples: Vec<Sample>,
}

impl Dataset {
    pub fn from_parts(mut meta: DatasetMeta, samples: Vec<Sample>) -> Result<Self, DatasetError> {
        if samples.is_empty() {
            return Err(DatasetError::Empty);
        }
        meta.n_samples = samples.len();
        Ok(Dataset { meta, samples })
    }

    pub fn meta(&self) -> &DatasetMeta {
        &self.meta
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Network input tensor [n_samples, S, 9N]: the three states'
    /// per-step features concatenated state-major.
    pub fn input_tensor(&self) -> Array3<f64> {
        let n = self.samples.len();
        let s = self.meta.n_steps;
        let f = 3 * self.meta.family.n_qubits();
        let mut out = Array3::zeros((n, s, NUM_INITIAL_STATES * f));
        for (i, sample) in self.samples.iter().enumerate() {
            let v = sample.series.values();
            for k in 0..NUM_INITIAL_STATES {
                for j in 0..s {
                    for x in 0..f {
                        out[[i, j, k * f + x]] = v[[k, j, x]];
                    }
                }
            }
        }
        out
    }

    /// Target matrix [n_samples, M] of true coefficients.
    pub fn target_matrix(&self) -> Array2<f64> {
        let n = self.samples.len();
        let m = self.meta.family.n_params();
        let mut out = Array2::zeros((n, m));
        for (i, sample) in self.samples.iter().enumerate() {
            for (p, &c) in sample.theta.iter().enumerate() {
                out[[i, p]] = c;
            }
        }
        out
    }
}

/// Draws one coefficient vector from the family's uniform prior.
/// Degenerate ranges return the pinned value without consuming
/// randomness for it.
pub fn sample_parameters<R: Rng + ?Sized>(family: &ModelFamily, rng: &mut R) -> Vec<f64> {
    family
        .ranges()
        .iter()
        .map(
            |&(lo, hi)| {
                if lo == hi {
                    lo
                } else {
                    rng.gen_range(lo..=hi)
                }
            },
        )
        .collect()
}

/// Adds i.i.d. Gaussian noise of standard deviation `sigma` to every
/// observation entry, in fixed (state, step, feature) order.
pub fn add_noise<R: Rng + ?Sized>(
    series: &ObservationSeries,
    sigma: f64,
    rng: &mut R,
) -> Result<ObservationSeries, DatasetError> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(DatasetError::BadSigma(sigma));
    }
    if sigma == 0.0 {
        return Ok(series.clone());
    }
    let mut values = series.values().clone();
    for v in values.iter_mut() {
        let draw: f64 = rng.sample(StandardNormal);
        *v += sigma * draw;
    }
    Ok(ObservationSeries::new(
        series.n_qubits(),
        series.tau(),
        values,
    )?)
}

/// Generates the dataset described by `meta`. Sample i is produced
/// from the stream `master_seed ^ i` (coefficients first, then noise),
/// so the result is identical for any worker count.
pub fn generate(meta: DatasetMeta) -> Result<Dataset, DatasetError> {
    let samples: Result<Vec<Sample>, DatasetError> = (0..meta.n_samples)
        .into_par_iter()
        .map(|i| {
            let mut stream = rng::sample_stream(meta.master_seed, i as u64);
            let theta = sample_parameters(&meta.family, &mut stream);
            let model = meta.family.model(&theta)?;
            let clean = observe_series(&model, meta.initial_states(), meta.tau, meta.n_steps)?;
            let series = if meta.noise_sigma > 0.0 {
                add_noise(&clean, meta.noise_sigma, &mut stream)?
            } else {
                clean
            };
            Ok(Sample { series, theta })
        })
        .collect();
    Dataset::from_parts(meta, samples?)
}

/// Partition sizes for an n-sample dataset at the given train
/// fraction, using round-half-up on n * fraction.
pub fn split_counts(n: usize, train_fraction: f64) -> Result<(usize, usize), DatasetError> {
    if !(train_fraction.is_finite() && train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DatasetError::BadFraction(train_fraction));
    }
    let n_train = (n as f64 * train_fraction).round() as usize;
    let n_val = n - n_train;
    if n_train == 0 || n_val == 0 {
        return Err(DatasetError::DegenerateSplit { n_train, n_val });
    }
    Ok((n_train, n_val))
}

/// Splits a dataset by index: the first `round(n * fraction)` samples
/// train, the rest validate. Order is the generation order, which is
/// already random in the coefficients, so no reshuffle happens here.
pub fn split(ds: Dataset, train_fraction: f64) -> Result<(Dataset, Dataset), DatasetError> {
    let (n_train, _) = split_counts(ds.len(), train_fraction)?;
    let mut train_samples = ds.samples;
    let val_samples = train_samples.split_off(n_train);
    let train = Dataset::from_parts(ds.meta.clone(), train_samples)?;
    let val = Dataset::from_parts(ds.meta, val_samples)?;
    Ok((train, val))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantum::expectation;
    use crate::quantum::MeasurementAxis;
    use proptest::prelude::*;

    #[test]
    fn h1_family_shape() {
        let f = ModelFamily::h1();
        assert_eq!(f.n_params(), 3);
        assert_eq!(f.terms()[0].label(), "ZI");
        assert_eq!(f.terms()[1].label(), "IZ");
        assert_eq!(f.terms()[2].label(), "XX");
        assert_eq!(f.labels(), &["omega1", "omega2", "J12"]);
    }

    #[test]
    fn h2_family_is_row_major_over_axis_pairs() {
        let f = ModelFamily::h2();
        assert_eq!(f.n_params(), 9);
        let labels: Vec<&str> = f
            .terms()
            .iter()
            .map(|t| t.factors().len())
            .map(|_| "")
            .collect();
        let _ = labels;
        let expect = ["XX", "XY", "XZ", "YX", "YY", "YZ", "ZX", "ZY", "ZZ"];
        for (t, e) in f.terms().iter().zip(expect) {
            assert_eq!(t.label(), e);
        }
    }

    #[test]
    fn h3_family_orders_locals_then_pairs() {
        let f = ModelFamily::h3(4).unwrap();
        assert_eq!(f.n_params(), 4 + 6);
        assert_eq!(f.terms()[0].label(), "ZIII");
        assert_eq!(f.terms()[3].label(), "IIIZ");
        assert_eq!(f.terms()[4].label(), "XXII");
        assert_eq!(f.terms()[9].label(), "IIXX");
        assert_eq!(f.labels()[4], "J12");
        assert_eq!(f.labels()[9], "J34");
    }

    #[test]
    fn h3_on_seven_qubits_has_28_params() {
        let f = ModelFamily::h3(7).unwrap();
        assert_eq!(f.n_params(), 7 + 21);
    }

    #[test]
    fn h4_family_groups_by_distance() {
        let f = ModelFamily::h4(4).unwrap();
        // distances 1, 2, 3 on a 4-chain: 3 + 2 + 1 pairs, 9 terms each.
        assert_eq!(f.n_params(), 9 * 6);
        let groups = f.param_groups();
        assert_eq!(groups[0].0, "NN");
        assert_eq!(groups[0].1.len(), 27);
        assert_eq!(groups[1].0, "NNN");
        assert_eq!(groups[1].1.len(), 18);
        assert_eq!(groups[2].0, "NNNN");
        assert_eq!(groups[2].1.len(), 9);
        assert_eq!(f.ranges()[0], (-1.0, 1.0));
        assert_eq!(f.ranges()[27], (-0.1, 0.1));
        assert_eq!(f.ranges()[45], (-0.01, 0.01));
        assert_eq!(f.terms()[0].label(), "XXII");
        assert_eq!(f.terms()[27].label(), "XIXI");
    }

    #[test]
    fn with_ranges_validates_count_and_order() {
        let f = ModelFamily::h1();
        assert!(f.clone().with_ranges(vec![(-1.0, 1.0); 2]).is_err());
        assert!(f
            .clone()
            .with_ranges(vec![(1.0, -1.0), (-1.0, 1.0), (-1.0, 1.0)])
            .is_err());
        let g = f
            .with_ranges(vec![(-1.0, 1.0), (-0.1, 0.1), (-0.01, 0.01)])
            .unwrap();
        assert_eq!(g.ranges()[2], (-0.01, 0.01));
    }

    #[test]
    fn sample_parameters_respects_degenerate_ranges() {
        let f = ModelFamily::h1()
            .with_ranges(vec![(0.0, 0.0), (0.25, 0.25), (-1.0, 1.0)])
            .unwrap();
        let mut r = rng::stream_from(1);
        let theta = sample_parameters(&f, &mut r);
        assert_eq!(theta[0], 0.0);
        assert_eq!(theta[1], 0.25);
        assert!((-1.0..=1.0).contains(&theta[2]));
    }

    #[test]
    fn sample_parameters_mean_is_near_zero() {
        let f = ModelFamily::h1();
        let mut r = rng::stream_from(42);
        let n = 100_000;
        let mut mean = [0.0f64; 3];
        for _ in 0..n {
            let theta = sample_parameters(&f, &mut r);
            for (m, t) in mean.iter_mut().zip(&theta) {
                *m += t;
            }
        }
        for m in &mut mean {
            *m /= n as f64;
            assert!(m.abs() < 0.01, "mean {m}");
        }
    }

    #[test]
    fn generate_is_deterministic() {
        let meta = || DatasetMeta::new(ModelFamily::h1(), 0.05, 8, 16, 777, 0.01).unwrap();
        let a = generate(meta()).unwrap();
        let b = generate(meta()).unwrap();
        for (sa, sb) in a.samples().iter().zip(b.samples()) {
            assert_eq!(sa.theta, sb.theta);
            for (x, y) in sa.series.values().iter().zip(sb.series.values().iter()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
    }

    #[test]
    fn generate_pinned_zero_hamiltonian_yields_constant_series() {
        let family = ModelFamily::h1().with_ranges(vec![(0.0, 0.0); 3]).unwrap();
        let meta = DatasetMeta::new(family, 0.1, 12, 4, 5, 0.0).unwrap();
        let states = meta.initial_states().to_vec();
        let ds = generate(meta).unwrap();
        for sample in ds.samples() {
            for (k, st) in states.iter().enumerate() {
                for q in 0..2 {
                    for (a, axis) in MeasurementAxis::ALL.iter().enumerate() {
                        let want = expectation(st, q, *axis).unwrap();
                        for j in 0..12 {
                            assert!(
                                (sample.series.values()[[k, j, 3 * q + a]] - want).abs() < 1e-12
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn generate_noiseless_entries_stay_in_unit_interval() {
        let meta = DatasetMeta::new(ModelFamily::h2(), 0.0628, 20, 50, 11, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        for sample in ds.samples() {
            for v in sample.series.values().iter() {
                assert!((-1.0..=1.0).contains(v));
            }
        }
    }

    #[test]
    fn add_noise_zero_sigma_is_identity_and_std_matches() {
        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 50, 1, 3, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        let series = &ds.samples()[0].series;
        let mut r = rng::stream_from(8);
        let same = add_noise(series, 0.0, &mut r).unwrap();
        assert_eq!(series, &same);

        // Empirical std of the added noise over many entries.
        let sigma = 0.01;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        let mut count = 0usize;
        for rep in 0..700 {
            let mut r = rng::stream_from(1000 + rep);
            let noisy = add_noise(series, sigma, &mut r).unwrap();
            for (a, b) in noisy.values().iter().zip(series.values().iter()) {
                let d = a - b;
                sum += d;
                sum_sq += d * d;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let std = (sum_sq / count as f64 - mean * mean).sqrt();
        assert!((std - sigma).abs() < 1e-4, "std {std}");
    }

    #[test]
    fn split_counts_match_round_half_up() {
        assert_eq!(split_counts(10, 0.8).unwrap(), (8, 2));
        assert_eq!(split_counts(300_000, 0.8).unwrap(), (240_000, 60_000));
        assert_eq!(split_counts(5, 0.5).unwrap(), (3, 2)); // 2.5 rounds up
        assert!(split_counts(1, 0.8).is_err());
        assert!(split_counts(10, 0.0).is_err());
        assert!(split_counts(10, 1.0).is_err());
    }

    #[test]
    fn split_partitions_are_disjoint_and_exhaustive() {
        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 5, 10, 21, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        let original: Vec<Vec<f64>> = ds.samples().iter().map(|s| s.theta.clone()).collect();
        let (train, val) = split(ds, 0.8).unwrap();
        assert_eq!(train.len(), 8);
        assert_eq!(val.len(), 2);
        assert_eq!(train.meta().n_samples, 8);
        assert_eq!(val.meta().n_samples, 2);
        let recombined: Vec<Vec<f64>> = train
            .samples()
            .iter()
            .chain(val.samples())
            .map(|s| s.theta.clone())
            .collect();
        assert_eq!(original, recombined);
    }

    #[test]
    fn input_tensor_layout_concatenates_states() {
        let meta = DatasetMeta::new(ModelFamily::h1(), 0.1, 4, 2, 9, 0.0).unwrap();
        let ds = generate(meta).unwrap();
        let inputs = ds.input_tensor();
        assert_eq!(inputs.dim(), (2, 4, 18));
        let v = ds.samples()[1].series.values();
        for k in 0..3 {
            for j in 0..4 {
                for x in 0..6 {
                    assert_eq!(inputs[[1, j, k * 6 + x]], v[[k, j, x]]);
                }
            }
        }
    }

    proptest! {
        #[test]
        fn sampled_parameters_stay_in_range(seed in 0u64..500) {
            let f = ModelFamily::h4(4).unwrap();
            let mut r = rng::stream_from(seed);
            let theta = sample_parameters(&f, &mut r);
            for (t, (lo, hi)) in theta.iter().zip(f.ranges()) {
                prop_assert!(lo <= t && t <= hi);
            }
        }
    }
}
