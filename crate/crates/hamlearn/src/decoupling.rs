//! Periodic XY-4 decoupling on dense N-qubit systems.
//!
//! A sampling interval τ is refined into `P` identical cycles. Each
//! cycle is four free-evolution segments of length τ/(4P) interleaved
//! with instantaneous π pulses along x, y, x, y applied to every
//! qubit outside the target pair:
//!
//! ```text
//! U_cycle = U_Y · U_seg · U_X · U_seg · U_Y · U_seg · U_X · U_seg
//! ```
//!
//! Every observation time lands on a cycle boundary, where the
//! spectator toggling frame has returned to identity (up to a global
//! phase), so the target pair's single-qubit expectations form a
//! valid two-qubit observation series. Couplings to spectators that
//! commute with each other are cancelled exactly at any `P`; generic
//! couplings are suppressed to first order, with residual error
//! shrinking like 1/P.
//!
//! `estimate_full` iterates a pre-trained two-qubit predictor over
//! every structured pair of a larger system and assembles the full
//! coefficient vector, averaging the duplicate estimates of shared
//! single-qubit terms.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, Array3};
use num_complex::Complex64;
use thiserror::Error;

use crate::dataset::{DatasetError, FamilyName, ModelFamily};
use crate::multistage::{MultiStageError, MultiStagePredictor};
use crate::quantum::{
    assemble, expectation, spectral, HamiltonianModel, MeasurementAxis, ObservationSeries, Pauli,
    QuantumError, QuantumState,
};

#[derive(Debug, Error)]
pub enum DecouplingError {
    #[error("decoupling needs at least 3 qubits, got {0}")]
    TooFewQubits(usize),
    #[error("target pair ({i}, {j}) invalid on {n_qubits} qubits (need i < j < n)")]
    BadTargetPair { i: usize, j: usize, n_qubits: usize },
    #[error("cycles per interval must be at least 1")]
    ZeroCycles,
    #[error("sampling interval {0} must be positive and finite")]
    BadTau(f64),
    #[error("pulsed qubit {qubit} out of range for {n_qubits} qubits")]
    PulsedQubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("pulsed qubit {0} listed twice")]
    DuplicatePulsedQubit(usize),
    #[error("pulse on target qubit {0}")]
    PulseOnTarget(usize),
    #[error("model has {model} qubits but the schedule expects {schedule}")]
    ModelScheduleMismatch { model: usize, schedule: usize },
    #[error("expected {expected} initial states, got {got}")]
    WrongStateCount { expected: usize, got: usize },
    #[error("pair initial state {index} has {got} qubits, expected 2")]
    WrongStateDim { index: usize, got: usize },
    #[error("full-system estimation is defined for H3 and H4 structures, not {0}")]
    UnsupportedFamily(FamilyName),
    #[error("structure {structure} needs an {expected} pair predictor, got {found}")]
    PredictorFamilyMismatch {
        structure: FamilyName,
        expected: FamilyName,
        found: FamilyName,
    },
    #[error("requested tau {requested:e} differs from the predictor's {predictor:e}")]
    TauMismatch { predictor: f64, requested: f64 },
    #[error("requested {requested} steps differ from the predictor's {predictor}")]
    StepMismatch { predictor: usize, requested: usize },
    #[error(transparent)]
    Quantum(#[from] QuantumError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    MultiStage(#[from] MultiStageError),
}

/// Pulse rotation axis within a cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseAxis {
    X,
    Y,
}

/// Which qubits receive the π pulses. `Spectators` is the working
/// mode (everything except the target pair is decoupled); `Targets`
/// pulses the pair instead and exists for side-by-side comparison.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PulsePlacement {
    #[default]
    Spectators,
    Targets,
}

/// One pair's decoupling schedule: 4·`cycles_per_interval` pulses per
/// sampling interval, so every observation is a cycle boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct PulseSchedule {
    n_qubits: usize,
    target_pair: (usize, usize),
    cycles_per_interval: usize,
    tau: f64,
    placement: PulsePlacement,
}

impl PulseSchedule {
    pub fn new(
        n_qubits: usize,
        target_pair: (usize, usize),
        cycles_per_interval: usize,
        tau: f64,
    ) -> Result<Self, DecouplingError> {
        if n_qubits < 3 {
            return Err(DecouplingError::TooFewQubits(n_qubits));
        }
        let (i, j) = target_pair;
        if i >= j || j >= n_qubits {
            return Err(DecouplingError::BadTargetPair { i, j, n_qubits });
        }
        if cycles_per_interval == 0 {
            return Err(DecouplingError::ZeroCycles);
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(DecouplingError::BadTau(tau));
        }
        Ok(PulseSchedule {
            n_qubits,
            target_pair,
            cycles_per_interval,
            tau,
            placement: PulsePlacement::Spectators,
        })
    }

    pub fn with_placement(mut self, placement: PulsePlacement) -> Self {
        self.placement = placement;
        self
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn target_pair(&self) -> (usize, usize) {
        self.target_pair
    }

    pub fn cycles_per_interval(&self) -> usize {
        self.cycles_per_interval
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn placement(&self) -> PulsePlacement {
        self.placement
    }

    /// Free-evolution length between pulses: τ / (4P).
    pub fn segment_length(&self) -> f64 {
        self.tau / (4.0 * self.cycles_per_interval as f64)
    }

    /// Every qubit outside the target pair, ascending.
    pub fn spectators(&self) -> Vec<usize> {
        (0..self.n_qubits)
            .filter(|&q| q != self.target_pair.0 && q != self.target_pair.1)
            .collect()
    }

    /// The qubits the π pulses act on under the configured placement.
    pub fn pulsed_qubits(&self) -> Vec<usize> {
        match self.placement {
            PulsePlacement::Spectators => self.spectators(),
            PulsePlacement::Targets => vec![self.target_pair.0, self.target_pair.1],
        }
    }
}

/// e^{-iπσ/2} = -iσ for the pulse axis, as an exact 2x2 matrix.
fn pulse_factor(axis: PulseAxis) -> Array2<Complex64> {
    let zero = Complex64::new(0.0, 0.0);
    match axis {
        // -i σ_x
        PulseAxis::X => ndarray::array![
            [zero, Complex64::new(0.0, -1.0)],
            [Complex64::new(0.0, -1.0), zero]
        ],
        // -i σ_y (purely real)
        PulseAxis::Y => ndarray::array![
            [zero, Complex64::new(-1.0, 0.0)],
            [Complex64::new(1.0, 0.0), zero]
        ],
    }
}

/// Tensor product with `-iσ_axis` on each listed qubit and identity
/// elsewhere. Assumes validated, duplicate-free indices.
fn pulse_matrix(axis: PulseAxis, n_qubits: usize, pulsed: &[usize]) -> Array2<Complex64> {
    let factor = pulse_factor(axis);
    let eye = Array2::eye(2);
    let mut u = Array2::eye(1);
    for q in 0..n_qubits {
        let f = if pulsed.contains(&q) {
            factor.view()
        } else {
            eye.view()
        };
        u = crate::quantum::kron(u.view(), f);
    }
    u
}

/// Simultaneous ideal π pulse on the spectator set: `-iσ_axis` on
/// each spectator, identity on everything else. Spectators must not
/// touch the target pair.
pub fn pulse_unitary(
    axis: PulseAxis,
    n_qubits: usize,
    spectators: &[usize],
    target_pair: (usize, usize),
) -> Result<Array2<Complex64>, DecouplingError> {
    let (i, j) = target_pair;
    if i >= j || j >= n_qubits {
        return Err(DecouplingError::BadTargetPair { i, j, n_qubits });
    }
    let mut seen = vec![false; n_qubits];
    for &q in spectators {
        if q >= n_qubits {
            return Err(DecouplingError::PulsedQubitOutOfRange { qubit: q, n_qubits });
        }
        if q == i || q == j {
            return Err(DecouplingError::PulseOnTarget(q));
        }
        if seen[q] {
            return Err(DecouplingError::DuplicatePulsedQubit(q));
        }
        seen[q] = true;
    }
    Ok(pulse_matrix(axis, n_qubits, spectators))
}

fn matmul(a: &Array2<Complex64>, b: &Array2<Complex64>) -> Array2<Complex64> {
    let mut c = Array2::zeros((a.dim().0, b.dim().1));
    general_mat_mul(
        Complex64::new(1.0, 0.0),
        a,
        b,
        Complex64::new(0.0, 0.0),
        &mut c,
    );
    c
}

/// Propagator for one full sampling interval: `P` XY-4 cycles.
pub fn interval_propagator(
    model: &HamiltonianModel,
    schedule: &PulseSchedule,
) -> Result<Array2<Complex64>, DecouplingError> {
    if model.n_qubits() != schedule.n_qubits {
        return Err(DecouplingError::ModelScheduleMismatch {
            model: model.n_qubits(),
            schedule: schedule.n_qubits,
        });
    }
    let h = assemble(model)?;
    let dec = spectral(&h.view())?;
    let u_seg = dec.propagator(schedule.segment_length());
    let pulsed = schedule.pulsed_qubits();
    let u_x = pulse_matrix(PulseAxis::X, schedule.n_qubits, &pulsed);
    let u_y = pulse_matrix(PulseAxis::Y, schedule.n_qubits, &pulsed);
    // Half cycle in time order seg, X, seg, Y reads right-to-left.
    let half = matmul(&matmul(&u_y, &u_seg), &matmul(&u_x, &u_seg));
    let cycle = matmul(&half, &half);
    let mut interval = cycle.clone();
    for _ in 1..schedule.cycles_per_interval {
        interval = matmul(&cycle, &interval);
    }
    Ok(interval)
}

/// Embeds a two-qubit pair state into the full register: the pair's
/// first qubit goes to position `i`, its second to `j`, and every
/// spectator starts in |0⟩.
fn embed_pair_state(
    pair_state: &QuantumState,
    n_qubits: usize,
    (i, j): (usize, usize),
) -> QuantumState {
    let dim = 1usize << n_qubits;
    let mask_i = 1usize << (n_qubits - 1 - i);
    let mask_j = 1usize << (n_qubits - 1 - j);
    let mut amps = Array1::zeros(dim);
    let pair = pair_state.amplitudes();
    for b0 in 0..2usize {
        for b1 in 0..2usize {
            let idx = b0 * mask_i + b1 * mask_j;
            amps[idx] = pair[(b0 << 1) | b1];
        }
    }
    QuantumState::from_normalized(amps)
}

/// Evolves the full system under the pulsed schedule and records the
/// target pair's six single-qubit expectations at every sampling
/// time. The output is schema-identical to a native two-qubit series,
/// so two-qubit predictors consume it unchanged.
pub fn observe_with_dd(
    model: &HamiltonianModel,
    schedule: &PulseSchedule,
    states: &[QuantumState],
    n_steps: usize,
) -> Result<ObservationSeries, DecouplingError> {
    if model.n_qubits() < 3 {
        return Err(DecouplingError::TooFewQubits(model.n_qubits()));
    }
    if states.len() != crate::NUM_INITIAL_STATES {
        return Err(DecouplingError::WrongStateCount {
            expected: crate::NUM_INITIAL_STATES,
            got: states.len(),
        });
    }
    for (index, st) in states.iter().enumerate() {
        if st.n_qubits() != 2 {
            return Err(DecouplingError::WrongStateDim {
                index,
                got: st.n_qubits(),
            });
        }
    }
    if n_steps == 0 {
        return Err(DecouplingError::Quantum(QuantumError::EmptySeries));
    }
    let u_interval = interval_propagator(model, schedule)?;
    let (i, j) = schedule.target_pair;
    let mut values = Array3::zeros((states.len(), n_steps, 6));
    for (k, pair_state) in states.iter().enumerate() {
        let mut psi = embed_pair_state(pair_state, schedule.n_qubits, (i, j))
            .amplitudes()
            .clone();
        for step in 0..n_steps {
            psi = u_interval.dot(&psi);
            let snapshot = QuantumState::from_normalized(psi.clone());
            for (q_out, &sys_q) in [i, j].iter().enumerate() {
                for (a, axis) in MeasurementAxis::ALL.iter().enumerate() {
                    values[[k, step, 3 * q_out + a]] = expectation(&snapshot, sys_q, *axis)?;
                }
            }
        }
    }
    Ok(ObservationSeries::new(2, schedule.tau, values)?)
}

/// One pair's predicted two-qubit coefficients.
#[derive(Debug, Clone)]
pub struct PairEstimate {
    pub pair: (usize, usize),
    pub theta_hat: Array1<f64>,
}

/// Assembled full-system estimate plus the per-pair raw estimates it
/// was built from.
#[derive(Debug, Clone)]
pub struct FullEstimate {
    pub theta_hat: Array1<f64>,
    pub pairs: Vec<PairEstimate>,
}

/// Estimates every coefficient of an H3 or H4 system by decoupling
/// each structured pair in turn and applying a two-qubit predictor
/// (H1-family for H3, H2-family for H4). The predictor's frozen
/// initial states serve as the pair states. H3 single-qubit terms
/// appear in every pair containing the qubit; the N−1 duplicate
/// estimates are averaged in pair order.
pub fn estimate_full(
    family: &ModelFamily,
    theta_true: &[f64],
    predictor: &MultiStagePredictor,
    cycles_per_interval: usize,
    n_steps: usize,
    tau: f64,
    placement: PulsePlacement,
) -> Result<FullEstimate, DecouplingError> {
    let expected_pair_family = match family.name() {
        FamilyName::H3 => FamilyName::H1,
        FamilyName::H4 => FamilyName::H2,
        other => return Err(DecouplingError::UnsupportedFamily(other)),
    };
    let n = family.n_qubits();
    if n < 3 {
        return Err(DecouplingError::TooFewQubits(n));
    }
    let fp = predictor.fingerprint();
    if fp.family.name() != expected_pair_family {
        return Err(DecouplingError::PredictorFamilyMismatch {
            structure: family.name(),
            expected: expected_pair_family,
            found: fp.family.name(),
        });
    }
    if fp.tau.to_bits() != tau.to_bits() {
        return Err(DecouplingError::TauMismatch {
            predictor: fp.tau,
            requested: tau,
        });
    }
    if fp.n_steps != n_steps {
        return Err(DecouplingError::StepMismatch {
            predictor: fp.n_steps,
            requested: n_steps,
        });
    }
    let model = family.model(theta_true)?;
    let states = fp.initial_states.clone();

    let mut theta_hat = Array1::zeros(family.n_params());
    let mut pairs = Vec::new();
    let estimate_pair = |i: usize, j: usize| -> Result<Array1<f64>, DecouplingError> {
        let schedule =
            PulseSchedule::new(n, (i, j), cycles_per_interval, tau)?.with_placement(placement);
        let series = observe_with_dd(&model, &schedule, &states, n_steps)?;
        Ok(predictor.predict(&series)?)
    };

    match family.name() {
        FamilyName::H3 => {
            // Term order: Z on each qubit, then XX couplings in the
            // same lexicographic pair order as the loop below.
            let mut local_sum = vec![0.0; n];
            let mut coupling_idx = n;
            for i in 0..n {
                for j in (i + 1)..n {
                    let est = estimate_pair(i, j)?;
                    local_sum[i] += est[0];
                    local_sum[j] += est[1];
                    theta_hat[coupling_idx] = est[2];
                    coupling_idx += 1;
                    pairs.push(PairEstimate {
                        pair: (i, j),
                        theta_hat: est,
                    });
                }
            }
            for q in 0..n {
                theta_hat[q] = local_sum[q] / (n - 1) as f64;
            }
        }
        FamilyName::H4 => {
            // Distance-major blocks of nine axis couplings per pair,
            // matching the family's term order.
            let mut offset = 0;
            for dist in [1usize, 2, 3] {
                let n_pairs = n.saturating_sub(dist);
                for i in 0..n_pairs {
                    let est = estimate_pair(i, i + dist)?;
                    for (k, &v) in est.iter().enumerate() {
                        theta_hat[offset + i * 9 + k] = v;
                    }
                    pairs.push(PairEstimate {
                        pair: (i, i + dist),
                        theta_hat: est,
                    });
                }
                offset += 9 * n_pairs;
            }
        }
        _ => unreachable!("family checked above"),
    }

    Ok(FullEstimate { theta_hat, pairs })
}

/// The pair sub-model an H3 target pair is expected to look like once
/// its spectators are decoupled: ω_i Z⊗I + ω_j I⊗Z + J_ij X⊗X.
pub fn h3_pair_submodel(
    family: &ModelFamily,
    theta: &[f64],
    (i, j): (usize, usize),
) -> Result<HamiltonianModel, DecouplingError> {
    if family.name() != FamilyName::H3 {
        return Err(DecouplingError::UnsupportedFamily(family.name()));
    }
    let n = family.n_qubits();
    if i >= j || j >= n {
        return Err(DecouplingError::BadTargetPair { i, j, n_qubits: n });
    }
    if theta.len() != family.n_params() {
        return Err(DecouplingError::Dataset(
            DatasetError::ThetaLengthMismatch {
                expected: family.n_params(),
                got: theta.len(),
            },
        ));
    }
    // Rank of (i, j) in lexicographic pair order.
    let mut rank = 0;
    for r in 0..i {
        rank += n - 1 - r;
    }
    rank += j - i - 1;
    let terms = vec![
        crate::quantum::PauliString::single(2, 0, Pauli::Z)?,
        crate::quantum::PauliString::single(2, 1, Pauli::Z)?,
        crate::quantum::PauliString::two_site(2, 0, Pauli::X, 1, Pauli::X)?,
    ];
    Ok(HamiltonianModel::new(
        2,
        terms,
        vec![theta[i], theta[j], theta[n + rank]],
    )?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{sample_parameters, DatasetMeta};
    use crate::multistage::{MultiStagePredictor, StageModel};
    use crate::neural::{NetConfig, NetworkState};
    use crate::quantum::{haar_random_state, observe_series, PauliString};
    use crate::rng;

    fn pair_states(seed: u64) -> Vec<QuantumState> {
        let mut r = rng::stream_from(seed);
        (0..crate::NUM_INITIAL_STATES)
            .map(|_| haar_random_state(2, &mut r))
            .collect()
    }

    fn constant_net(cfg: &NetConfig, out: &[f64]) -> NetworkState {
        let mut net = NetworkState::init(cfg, 0).unwrap();
        for slice in net.param_slices_mut() {
            slice.fill(0.0);
        }
        for (b, &v) in net.fc.b2.iter_mut().zip(out) {
            *b = v;
        }
        net
    }

    fn constant_predictor(
        family: ModelFamily,
        tau: f64,
        n_steps: usize,
        out: &[f64],
    ) -> MultiStagePredictor {
        let n_params = family.n_params();
        let meta = DatasetMeta::new(family, tau, n_steps, 1, 5150, 0.0).unwrap();
        let cfg = NetConfig {
            input_dim: 18,
            hidden_dim: 4,
            fc_hidden: 3,
            output_dim: n_params,
        };
        MultiStagePredictor::new(
            meta.fingerprint(),
            vec![StageModel {
                index: 0,
                net: constant_net(&cfg, out),
                epsilon: 1.0,
            }],
        )
        .unwrap()
    }

    fn max_series_diff(a: &ObservationSeries, b: &ObservationSeries) -> f64 {
        a.values()
            .iter()
            .zip(b.values().iter())
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max)
    }

    #[test]
    fn pulse_with_no_spectators_is_exactly_identity() {
        let u = pulse_unitary(PulseAxis::X, 3, &[], (0, 1)).unwrap();
        for r in 0..8 {
            for c in 0..8 {
                let want = if r == c {
                    Complex64::new(1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(u[[r, c]], want);
            }
        }
    }

    #[test]
    fn double_pulse_is_a_global_phase() {
        let u = pulse_unitary(PulseAxis::X, 3, &[2], (0, 1)).unwrap();
        let uu = matmul(&u, &u);
        // (-i σ_x)² = -I on the spectator, i.e. -I on the register.
        for r in 0..8 {
            for c in 0..8 {
                let want = if r == c {
                    Complex64::new(-1.0, 0.0)
                } else {
                    Complex64::new(0.0, 0.0)
                };
                assert_eq!(uu[[r, c]], want);
            }
        }
        let mut r = rng::stream_from(3);
        let psi = haar_random_state(3, &mut r);
        let flipped = QuantumState::from_normalized(uu.dot(psi.amplitudes()));
        for q in 0..3 {
            for axis in MeasurementAxis::ALL {
                let a = expectation(&psi, q, axis).unwrap();
                let b = expectation(&flipped, q, axis).unwrap();
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn x_pulse_flips_spectator_z_expectation() {
        let u = pulse_unitary(PulseAxis::X, 3, &[2], (0, 1)).unwrap();
        let psi = QuantumState::computational_basis(3, 0).unwrap();
        assert_eq!(expectation(&psi, 2, MeasurementAxis::Z).unwrap(), 1.0);
        let pulsed = QuantumState::from_normalized(u.dot(psi.amplitudes()));
        assert_eq!(expectation(&pulsed, 2, MeasurementAxis::Z).unwrap(), -1.0);
    }

    #[test]
    fn pulse_overlapping_the_target_pair_is_rejected() {
        assert!(matches!(
            pulse_unitary(PulseAxis::Y, 3, &[1], (1, 2)),
            Err(DecouplingError::PulseOnTarget(1))
        ));
        assert!(matches!(
            pulse_unitary(PulseAxis::Y, 3, &[2, 2], (0, 1)),
            Err(DecouplingError::DuplicatePulsedQubit(2))
        ));
        assert!(matches!(
            pulse_unitary(PulseAxis::Y, 3, &[5], (0, 1)),
            Err(DecouplingError::PulsedQubitOutOfRange { .. })
        ));
    }

    #[test]
    fn schedule_validation_and_pulsed_sets() {
        assert!(matches!(
            PulseSchedule::new(2, (0, 1), 1, 0.1),
            Err(DecouplingError::TooFewQubits(2))
        ));
        assert!(matches!(
            PulseSchedule::new(4, (2, 1), 1, 0.1),
            Err(DecouplingError::BadTargetPair { .. })
        ));
        assert!(matches!(
            PulseSchedule::new(4, (0, 1), 0, 0.1),
            Err(DecouplingError::ZeroCycles)
        ));
        let s = PulseSchedule::new(5, (1, 3), 4, 0.2).unwrap();
        assert_eq!(s.spectators(), vec![0, 2, 4]);
        assert_eq!(s.pulsed_qubits(), vec![0, 2, 4]);
        assert_eq!(s.segment_length(), 0.2 / 16.0);
        let t = s.with_placement(PulsePlacement::Targets);
        assert_eq!(t.pulsed_qubits(), vec![1, 3]);
    }

    #[test]
    fn interval_propagator_is_unitary() {
        let family = ModelFamily::h3(3).unwrap();
        let mut r = rng::stream_from(17);
        let theta = sample_parameters(&family, &mut r);
        let model = family.model(&theta).unwrap();
        let schedule = PulseSchedule::new(3, (0, 2), 2, 0.3).unwrap();
        let u = interval_propagator(&model, &schedule).unwrap();
        let udag = u.t().mapv(|z| z.conj());
        let prod = matmul(&udag.to_owned(), &u);
        for r in 0..8 {
            for c in 0..8 {
                let want = if r == c { 1.0 } else { 0.0 };
                assert!(
                    (prod[[r, c]] - Complex64::new(want, 0.0)).norm() < 1e-10,
                    "U†U deviates at ({r}, {c}): {}",
                    prod[[r, c]]
                );
            }
        }
    }

    #[test]
    fn pair_internal_model_reproduces_isolated_evolution() {
        // Every term touching the spectator is zero, so pulses on it
        // commute with the evolution and the pair sees its own model.
        let family = ModelFamily::h3(3).unwrap();
        let theta = vec![0.7, -0.4, 0.0, 0.55, 0.0, 0.0];
        let model = family.model(&theta).unwrap();
        let isolated = h3_pair_submodel(&family, &theta, (0, 1)).unwrap();
        let states = pair_states(23);
        let reference = observe_series(&isolated, &states, 0.25, 12).unwrap();
        for p in [1usize, 3] {
            let schedule = PulseSchedule::new(3, (0, 1), p, 0.25).unwrap();
            let series = observe_with_dd(&model, &schedule, &states, 12).unwrap();
            assert_eq!(series.n_qubits(), 2);
            assert_eq!(series.n_steps(), 12);
            let diff = max_series_diff(&series, &reference);
            assert!(diff < 1e-10, "P={p}: deviation {diff}");
        }
    }

    #[test]
    fn commuting_spectator_coupling_cancels_exactly() {
        // H = J Z₀Z₁ + K Z₁Z₂: everything commutes, so decoupling the
        // spectator removes the K term exactly at any cycle count.
        let (j_coup, k_coup) = (0.8, 0.6);
        let model = HamiltonianModel::new(
            3,
            vec![
                PauliString::two_site(3, 0, Pauli::Z, 1, Pauli::Z).unwrap(),
                PauliString::two_site(3, 1, Pauli::Z, 2, Pauli::Z).unwrap(),
            ],
            vec![j_coup, k_coup],
        )
        .unwrap();
        let isolated = HamiltonianModel::new(
            2,
            vec![PauliString::two_site(2, 0, Pauli::Z, 1, Pauli::Z).unwrap()],
            vec![j_coup],
        )
        .unwrap();
        let states = pair_states(31);
        let reference = observe_series(&isolated, &states, 0.3, 10).unwrap();
        for p in [1usize, 2, 4] {
            let schedule = PulseSchedule::new(3, (0, 1), p, 0.3).unwrap();
            let series = observe_with_dd(&model, &schedule, &states, 10).unwrap();
            let diff = max_series_diff(&series, &reference);
            assert!(diff < 1e-10, "P={p}: deviation {diff}");
        }
    }

    #[test]
    fn deviation_from_isolated_pair_shrinks_linearly_in_cycle_count() {
        let family = ModelFamily::h3(4).unwrap();
        let mut r = rng::stream_from(47);
        let theta = sample_parameters(&family, &mut r);
        let model = family.model(&theta).unwrap();
        let pair = (1, 2);
        let isolated = h3_pair_submodel(&family, &theta, pair).unwrap();
        let states = pair_states(53);
        let reference = observe_series(&isolated, &states, 0.2, 8).unwrap();
        let ps = [1usize, 2, 4, 8, 16];
        let mut errs = Vec::new();
        for &p in &ps {
            let schedule = PulseSchedule::new(4, pair, p, 0.2).unwrap();
            let series = observe_with_dd(&model, &schedule, &states, 8).unwrap();
            errs.push(max_series_diff(&series, &reference));
        }
        // Least-squares slope of ln(err) against ln(P).
        let xs: Vec<f64> = ps.iter().map(|&p| (p as f64).ln()).collect();
        let ys: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let n = xs.len() as f64;
        let mx = xs.iter().sum::<f64>() / n;
        let my = ys.iter().sum::<f64>() / n;
        let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
        let slope = sxy / sxx;
        assert!(
            slope <= -0.8,
            "errors {errs:?} fall too slowly (slope {slope:.3})"
        );
    }

    #[test]
    fn constant_predictor_assembly_averages_shared_locals() {
        let family = ModelFamily::h3(3).unwrap();
        let (tau, n_steps) = (0.2, 4);
        let c = [0.3, -0.1, 0.25];
        let predictor = constant_predictor(ModelFamily::h1(), tau, n_steps, &c);
        let theta = vec![0.5, 0.5, 0.5, 0.1, 0.1, 0.1];
        let full = estimate_full(
            &family,
            &theta,
            &predictor,
            1,
            n_steps,
            tau,
            PulsePlacement::Spectators,
        )
        .unwrap();
        assert_eq!(full.pairs.len(), 3);
        assert_eq!(
            full.pairs.iter().map(|p| p.pair).collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2)]
        );
        // Qubit 0 appears as the first slot in both its pairs; qubit 1
        // as first in (1,2) and second in (0,1); qubit 2 always second.
        assert_eq!(full.theta_hat[0], c[0]);
        assert_eq!(full.theta_hat[1], (c[0] + c[1]) / 2.0);
        assert_eq!(full.theta_hat[2], c[1]);
        for coupling in 3..6 {
            assert_eq!(full.theta_hat[coupling], c[2]);
        }
    }

    #[test]
    fn h4_assembly_fills_distance_major_blocks() {
        let family = ModelFamily::h4(4).unwrap();
        let (tau, n_steps) = (0.15, 3);
        let c: Vec<f64> = (1..=9).map(|k| k as f64 / 10.0).collect();
        let predictor = constant_predictor(ModelFamily::h2(), tau, n_steps, &c);
        let mut r = rng::stream_from(61);
        let theta = sample_parameters(&family, &mut r);
        let full = estimate_full(
            &family,
            &theta,
            &predictor,
            2,
            n_steps,
            tau,
            PulsePlacement::Spectators,
        )
        .unwrap();
        assert_eq!(
            full.pairs.iter().map(|p| p.pair).collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (2, 3), (0, 2), (1, 3), (0, 3)]
        );
        assert_eq!(full.theta_hat.len(), 54);
        for (block, _) in full.pairs.iter().enumerate() {
            for k in 0..9 {
                assert_eq!(full.theta_hat[block * 9 + k], c[k]);
            }
        }
    }

    #[test]
    fn seven_qubit_system_runs_all_twenty_one_pairs() {
        let family = ModelFamily::h3(7).unwrap();
        let (tau, n_steps) = (0.1, 2);
        let predictor = constant_predictor(ModelFamily::h1(), tau, n_steps, &[0.1, 0.2, 0.3]);
        let mut r = rng::stream_from(71);
        let theta = sample_parameters(&family, &mut r);
        let full = estimate_full(
            &family,
            &theta,
            &predictor,
            1,
            n_steps,
            tau,
            PulsePlacement::Spectators,
        )
        .unwrap();
        assert_eq!(full.pairs.len(), 21);
    }

    #[test]
    fn estimate_full_rejects_mismatched_setups() {
        let (tau, n_steps) = (0.2, 4);
        let h1_predictor = constant_predictor(ModelFamily::h1(), tau, n_steps, &[0.1, 0.2, 0.3]);
        let h3 = ModelFamily::h3(3).unwrap();
        let theta = vec![0.0; 6];
        assert!(matches!(
            estimate_full(
                &ModelFamily::h1(),
                &[0.1, 0.2, 0.3],
                &h1_predictor,
                1,
                n_steps,
                tau,
                PulsePlacement::Spectators
            ),
            Err(DecouplingError::UnsupportedFamily(FamilyName::H1))
        ));
        let h2_predictor = constant_predictor(ModelFamily::h2(), tau, n_steps, &[0.0; 9]);
        assert!(matches!(
            estimate_full(
                &h3,
                &theta,
                &h2_predictor,
                1,
                n_steps,
                tau,
                PulsePlacement::Spectators
            ),
            Err(DecouplingError::PredictorFamilyMismatch { .. })
        ));
        assert!(matches!(
            estimate_full(
                &h3,
                &theta,
                &h1_predictor,
                1,
                n_steps,
                0.25,
                PulsePlacement::Spectators
            ),
            Err(DecouplingError::TauMismatch { .. })
        ));
        assert!(matches!(
            estimate_full(
                &h3,
                &theta,
                &h1_predictor,
                1,
                n_steps + 1,
                tau,
                PulsePlacement::Spectators
            ),
            Err(DecouplingError::StepMismatch { .. })
        ));
    }
}
