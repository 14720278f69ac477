//! Closed-system dynamics of Pauli-string Hamiltonians and the
//! single-qubit expectation-value series they generate.
//!
//! A Hamiltonian is a real linear combination of Pauli strings,
//! H(theta) = sum_i theta_i * T_i, materialised as a dense Hermitian
//! matrix. Evolution is exact: H is diagonalised once and states are
//! propagated through the eigenbasis, so there is no integrator error
//! to tune against. Observations are the expectations of sigma_x,
//! sigma_y, sigma_z on each qubit at times t = tau, 2*tau, ..., S*tau.

use ndarray::{Array1, Array2, Array3, ArrayView2};
use ndarray_linalg::{Eigh, UPLO};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use std::fmt;
use thiserror::Error;

use crate::NUM_INITIAL_STATES;

/// Largest system materialised as a dense matrix (2^10 = 1024 rows).
pub const MAX_DENSE_QUBITS: usize = 10;

/// Tolerance for Hermiticity and state-normalisation checks.
pub const HERMITICITY_TOL: f64 = 1e-10;
const NORM_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum QuantumError {
    #[error("system must contain at least one qubit")]
    EmptySystem,
    #[error("Pauli string is empty")]
    EmptyPauliString,
    #[error("unknown Pauli factor '{0}' (expected one of I, X, Y, Z)")]
    UnknownPauli(char),
    #[error("term {index} acts on {term_qubits} qubits, model has {n_qubits}")]
    TermLengthMismatch {
        index: usize,
        term_qubits: usize,
        n_qubits: usize,
    },
    #[error("term {0} is the identity string; identity shifts are not learnable")]
    IdentityTerm(usize),
    #[error("terms {0} and {1} are identical")]
    DuplicateTerm(usize, usize),
    #[error("model has {n_terms} terms but {n_coeffs} coefficients")]
    CoefficientCountMismatch { n_terms: usize, n_coeffs: usize },
    #[error("coefficient {0} is not finite")]
    NonFiniteCoefficient(usize),
    #[error("{n_qubits} qubits exceed the dense-matrix limit of {limit}")]
    DimensionLimit { n_qubits: usize, limit: usize },
    #[error("state vector length {0} is not a power of two")]
    BadStateDimension(usize),
    #[error("state vector has norm {0}, expected 1")]
    NotNormalized(f64),
    #[error("matrix is not Hermitian (max deviation {0:.3e})")]
    NotHermitian(f64),
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("eigendecomposition failed: {0}")]
    Eigen(String),
    #[error("qubit index {qubit} out of range for {n_qubits} qubits")]
    QubitOutOfRange { qubit: usize, n_qubits: usize },
    #[error("time step tau = {0} must be positive and finite")]
    BadTau(f64),
    #[error("series must contain at least one step")]
    EmptySeries,
    #[error("expected {expected} initial states, got {got}")]
    WrongStateCount { expected: usize, got: usize },
    #[error("state acts on {state_qubits} qubits, model has {n_qubits}")]
    StateSizeMismatch {
        state_qubits: usize,
        n_qubits: usize,
    },
    #[error("observation values have shape {got:?}, expected {expected:?}")]
    BadSeriesShape {
        got: (usize, usize, usize),
        expected: (usize, usize, usize),
    },
    #[error("observation values contain a non-finite entry")]
    NonFiniteObservation,
}

/// Single-qubit Pauli operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Pauli {
    I,
    X,
    Y,
    Z,
}

impl Pauli {
    pub fn from_char(c: char) -> Result<Self, QuantumError> {
        match c {
            'I' => Ok(Pauli::I),
            'X' => Ok(Pauli::X),
            'Y' => Ok(Pauli::Y),
            'Z' => Ok(Pauli::Z),
            other => Err(QuantumError::UnknownPauli(other)),
        }
    }

    pub fn to_char(self) -> char {
        match self {
            Pauli::I => 'I',
            Pauli::X => 'X',
            Pauli::Y => 'Y',
            Pauli::Z => 'Z',
        }
    }
}

/// Measurement axis for single-qubit expectations, in feature order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeasurementAxis {
    X,
    Y,
    Z,
}

impl MeasurementAxis {
    pub const ALL: [MeasurementAxis; 3] =
        [MeasurementAxis::X, MeasurementAxis::Y, MeasurementAxis::Z];
}

/// A tensor product of single-qubit Paulis; factor k acts on qubit k.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct PauliString {
    factors: Vec<Pauli>,
}

impl PauliString {
    pub fn new(factors: Vec<Pauli>) -> Result<Self, QuantumError> {
        if factors.is_empty() {
            return Err(QuantumError::EmptyPauliString);
        }
        Ok(PauliString { factors })
    }

    /// Parses a label such as "ZI" or "XXI".
    pub fn parse(s: &str) -> Result<Self, QuantumError> {
        let factors = s
            .chars()
            .map(Pauli::from_char)
            .collect::<Result<Vec<_>, _>>()?;
        PauliString::new(factors)
    }

    /// Pauli `p` on `qubit`, identity elsewhere.
    pub fn single(n_qubits: usize, qubit: usize, p: Pauli) -> Result<Self, QuantumError> {
        if qubit >= n_qubits {
            return Err(QuantumError::QubitOutOfRange { qubit, n_qubits });
        }
        let mut factors = vec![Pauli::I; n_qubits];
        factors[qubit] = p;
        PauliString::new(factors)
    }

    /// Paulis `p` on `a` and `q` on `b`, identity elsewhere.
    pub fn two_site(
        n_qubits: usize,
        a: usize,
        p: Pauli,
        b: usize,
        q: Pauli,
    ) -> Result<Self, QuantumError> {
        if a >= n_qubits {
            return Err(QuantumError::QubitOutOfRange { qubit: a, n_qubits });
        }
        if b >= n_qubits {
            return Err(QuantumError::QubitOutOfRange { qubit: b, n_qubits });
        }
        let mut factors = vec![Pauli::I; n_qubits];
        factors[a] = p;
        factors[b] = q;
        PauliString::new(factors)
    }

    pub fn n_qubits(&self) -> usize {
        self.factors.len()
    }

    pub fn factors(&self) -> &[Pauli] {
        &self.factors
    }

    pub fn is_identity(&self) -> bool {
        self.factors.iter().all(|p| *p == Pauli::I)
    }

    pub fn label(&self) -> String {
        self.factors.iter().map(|p| p.to_char()).collect()
    }
}

impl fmt::Display for PauliString {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// A Hamiltonian H = sum_i theta_i T_i over distinct non-identity
/// Pauli strings T_i.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianModel {
    n_qubits: usize,
    terms: Vec<PauliString>,
    theta: Vec<f64>,
}

impl HamiltonianModel {
    pub fn new(
        n_qubits: usize,
        terms: Vec<PauliString>,
        theta: Vec<f64>,
    ) -> Result<Self, QuantumError> {
        if n_qubits == 0 {
            return Err(QuantumError::EmptySystem);
        }
        if terms.len() != theta.len() {
            return Err(QuantumError::CoefficientCountMismatch {
                n_terms: terms.len(),
                n_coeffs: theta.len(),
            });
        }
        if terms.is_empty() {
            return Err(QuantumError::EmptyPauliString);
        }
        for (i, t) in terms.iter().enumerate() {
            if t.n_qubits() != n_qubits {
                return Err(QuantumError::TermLengthMismatch {
                    index: i,
                    term_qubits: t.n_qubits(),
                    n_qubits,
                });
            }
            if t.is_identity() {
                return Err(QuantumError::IdentityTerm(i));
            }
            for (j, u) in terms.iter().enumerate().take(i) {
                if t == u {
                    return Err(QuantumError::DuplicateTerm(j, i));
                }
            }
        }
        for (i, c) in theta.iter().enumerate() {
            if !c.is_finite() {
                return Err(QuantumError::NonFiniteCoefficient(i));
            }
        }
        Ok(HamiltonianModel {
            n_qubits,
            terms,
            theta,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_params(&self) -> usize {
        self.theta.len()
    }

    pub fn terms(&self) -> &[PauliString] {
        &self.terms
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }
}

/// A pure state on n qubits, stored as 2^n complex amplitudes.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantumState {
    n_qubits: usize,
    amplitudes: Array1<Complex64>,
}

impl QuantumState {
    /// Validates dimension (power of two) and unit norm (1e-12).
    pub fn new(amplitudes: Array1<Complex64>) -> Result<Self, QuantumError> {
        let dim = amplitudes.len();
        if dim < 2 || !dim.is_power_of_two() {
            return Err(QuantumError::BadStateDimension(dim));
        }
        let norm = amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
        if !norm.is_finite() || (norm - 1.0).abs() > NORM_TOL {
            return Err(QuantumError::NotNormalized(norm));
        }
        Ok(QuantumState {
            n_qubits: dim.trailing_zeros() as usize,
            amplitudes,
        })
    }

    /// Computational basis state |index> on `n_qubits` qubits.
    pub fn computational_basis(n_qubits: usize, index: usize) -> Result<Self, QuantumError> {
        if n_qubits == 0 {
            return Err(QuantumError::EmptySystem);
        }
        let dim = 1usize << n_qubits;
        if index >= dim {
            return Err(QuantumError::BadStateDimension(index));
        }
        let mut amplitudes = Array1::zeros(dim);
        amplitudes[index] = Complex64::new(1.0, 0.0);
        Ok(QuantumState {
            n_qubits,
            amplitudes,
        })
    }

    /// Internal constructor for vectors already known to be normalised
    /// (eigenbasis rotations preserve norm to machine precision).
    pub(crate) fn from_normalized(amplitudes: Array1<Complex64>) -> Self {
        debug_assert!(amplitudes.len().is_power_of_two());
        debug_assert!(
            (amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt() - 1.0).abs() < 1e-9
        );
        QuantumState {
            n_qubits: amplitudes.len().trailing_zeros() as usize,
            amplitudes,
        }
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn dim(&self) -> usize {
        self.amplitudes.len()
    }

    pub fn amplitudes(&self) -> &Array1<Complex64> {
        &self.amplitudes
    }
}

/// The 2x2 matrix of a single Pauli operator.
pub fn pauli_matrix(p: Pauli) -> Array2<Complex64> {
    let z = Complex64::new(0.0, 0.0);
    let one = Complex64::new(1.0, 0.0);
    let i = Complex64::new(0.0, 1.0);
    match p {
        Pauli::I => ndarray::array![[one, z], [z, one]],
        Pauli::X => ndarray::array![[z, one], [one, z]],
        Pauli::Y => ndarray::array![[z, -i], [i, z]],
        Pauli::Z => ndarray::array![[one, z], [z, -one]],
    }
}

/// Kronecker product; `a`'s indices are the more significant ones.
pub fn kron(a: ArrayView2<Complex64>, b: ArrayView2<Complex64>) -> Array2<Complex64> {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let aij = a[[i, j]];
            for k in 0..br {
                for l in 0..bc {
                    out[[i * br + k, j * bc + l]] = aij * b[[k, l]];
                }
            }
        }
    }
    out
}

/// Dense matrix of a Pauli string. Qubit 0 is the leftmost factor.
pub fn term_matrix(term: &PauliString) -> Result<Array2<Complex64>, QuantumError> {
    term_matrix_with_limit(term, MAX_DENSE_QUBITS)
}

/// Same as [`term_matrix`] with an explicit dense-size guardrail.
pub fn term_matrix_with_limit(
    term: &PauliString,
    limit: usize,
) -> Result<Array2<Complex64>, QuantumError> {
    let n = term.n_qubits();
    if n > limit {
        return Err(QuantumError::DimensionLimit { n_qubits: n, limit });
    }
    let mut out = Array2::from_elem((1, 1), Complex64::new(1.0, 0.0));
    for p in term.factors() {
        out = kron(out.view(), pauli_matrix(*p).view());
    }
    Ok(out)
}

/// Dense Hamiltonian matrix sum_i theta_i * T_i.
pub fn assemble(model: &HamiltonianModel) -> Result<Array2<Complex64>, QuantumError> {
    let n = model.n_qubits();
    if n > MAX_DENSE_QUBITS {
        return Err(QuantumError::DimensionLimit {
            n_qubits: n,
            limit: MAX_DENSE_QUBITS,
        });
    }
    let dim = 1usize << n;
    let mut h = Array2::zeros((dim, dim));
    for (term, &coeff) in model.terms().iter().zip(model.theta()) {
        let t = term_matrix(term)?;
        h.zip_mut_with(&t, |acc, &v| *acc += coeff * v);
    }
    Ok(h)
}

/// Eigendecomposition H = V diag(lambda) V^dagger with ascending
/// real eigenvalues and eigenvectors in the columns of V.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition {
    eigenvalues: Array1<f64>,
    eigenvectors: Array2<Complex64>,
}

impl SpectralDecomposition {
    pub fn eigenvalues(&self) -> &Array1<f64> {
        &self.eigenvalues
    }

    pub fn eigenvectors(&self) -> &Array2<Complex64> {
        &self.eigenvectors
    }

    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Exact propagation: psi(t) = V exp(-i lambda t) V^dagger psi(0).
    pub fn evolve(&self, psi0: &QuantumState, t: f64) -> Result<QuantumState, QuantumError> {
        if psi0.dim() != self.dim() {
            return Err(QuantumError::StateSizeMismatch {
                state_qubits: psi0.n_qubits(),
                n_qubits: self.dim().trailing_zeros() as usize,
            });
        }
        let v = &self.eigenvectors;
        // c = V^dagger psi0
        let mut c = Array1::zeros(self.dim());
        for k in 0..self.dim() {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..self.dim() {
                acc += v[[r, k]].conj() * psi0.amplitudes()[r];
            }
            c[k] = acc;
        }
        for (k, ck) in c.iter_mut().enumerate() {
            *ck *= Complex64::from_polar(1.0, -self.eigenvalues[k] * t);
        }
        let psi = v.dot(&c);
        Ok(QuantumState::from_normalized(psi))
    }

    /// Dense unitary U(t) = V exp(-i lambda t) V^dagger.
    pub fn propagator(&self, t: f64) -> Array2<Complex64> {
        let dim = self.dim();
        let v = &self.eigenvectors;
        // Scale column k of V by its phase, then multiply by V^dagger.
        let mut scaled = v.clone();
        for k in 0..dim {
            let phase = Complex64::from_polar(1.0, -self.eigenvalues[k] * t);
            for r in 0..dim {
                scaled[[r, k]] *= phase;
            }
        }
        let vdag = v.t().mapv(|z| z.conj());
        scaled.dot(&vdag)
    }
}

/// Diagonalises a Hermitian matrix. Rejects non-Hermitian input
/// (max |H - H^dagger| entry above 1e-10).
pub fn spectral(h: &ArrayView2<Complex64>) -> Result<SpectralDecomposition, QuantumError> {
    let (rows, cols) = h.dim();
    if rows != cols {
        return Err(QuantumError::NotSquare { rows, cols });
    }
    let mut max_dev = 0.0f64;
    for i in 0..rows {
        for j in 0..cols {
            let dev = (h[[i, j]] - h[[j, i]].conj()).norm();
            if dev > max_dev {
                max_dev = dev;
            }
        }
    }
    if max_dev > HERMITICITY_TOL {
        return Err(QuantumError::NotHermitian(max_dev));
    }
    // The eigensolver hands the row-major buffer to a column-major
    // LAPACK routine, so what actually gets diagonalised is the
    // transpose — for a Hermitian matrix, the elementwise conjugate.
    // Conjugating first makes the decomposition apply to `h` itself;
    // for real-entried matrices this is a no-op.
    let owned = h.mapv(|v| v.conj());
    let (eigenvalues, eigenvectors) = owned
        .eigh(UPLO::Lower)
        .map_err(|e| QuantumError::Eigen(e.to_string()))?;
    Ok(SpectralDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Expectation of sigma_axis on `qubit` (0-indexed) in state `psi`.
///
/// Computed with bit arithmetic instead of materialising the
/// observable; the result is clamped to [-1, 1] to absorb roundoff
/// at the boundary.
pub fn expectation(
    psi: &QuantumState,
    qubit: usize,
    axis: MeasurementAxis,
) -> Result<f64, QuantumError> {
    let n = psi.n_qubits();
    if qubit >= n {
        return Err(QuantumError::QubitOutOfRange { qubit, n_qubits: n });
    }
    let amps = psi.amplitudes();
    let dim = psi.dim();
    let mask = 1usize << (n - 1 - qubit);
    let mut acc = 0.0;
    match axis {
        MeasurementAxis::Z => {
            for b in 0..dim {
                let s = if b & mask == 0 { 1.0 } else { -1.0 };
                acc += s * amps[b].norm_sqr();
            }
        }
        MeasurementAxis::X => {
            for b in 0..dim {
                if b & mask == 0 {
                    acc += 2.0 * (amps[b].conj() * amps[b | mask]).re;
                }
            }
        }
        MeasurementAxis::Y => {
            for b in 0..dim {
                if b & mask == 0 {
                    acc += 2.0 * (amps[b].conj() * amps[b | mask]).im;
                }
            }
        }
    }
    Ok(acc.clamp(-1.0, 1.0))
}

/// Expectation-value time series for three fixed initial states.
///
/// `values[[k, j, 3*q + a]]` is the expectation of axis `a` (x, y, z)
/// on qubit `q`, evolved from initial state `k` to time `(j+1) * tau`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSeries {
    n_qubits: usize,
    tau: f64,
    values: Array3<f64>,
}

impl ObservationSeries {
    pub fn new(n_qubits: usize, tau: f64, values: Array3<f64>) -> Result<Self, QuantumError> {
        if n_qubits == 0 {
            return Err(QuantumError::EmptySystem);
        }
        if !(tau.is_finite() && tau > 0.0) {
            return Err(QuantumError::BadTau(tau));
        }
        let (k, s, f) = values.dim();
        if k != NUM_INITIAL_STATES || s == 0 || f != 3 * n_qubits {
            return Err(QuantumError::BadSeriesShape {
                got: (k, s, f),
                expected: (NUM_INITIAL_STATES, s.max(1), 3 * n_qubits),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(QuantumError::NonFiniteObservation);
        }
        Ok(ObservationSeries {
            n_qubits,
            tau,
            values,
        })
    }

    pub fn n_qubits(&self) -> usize {
        self.n_qubits
    }

    pub fn n_steps(&self) -> usize {
        self.values.dim().1
    }

    pub fn n_states(&self) -> usize {
        NUM_INITIAL_STATES
    }

    /// Features per step and state: three axes per qubit.
    pub fn features_per_state(&self) -> usize {
        3 * self.n_qubits
    }

    pub fn tau(&self) -> f64 {
        self.tau
    }

    pub fn values(&self) -> &Array3<f64> {
        &self.values
    }
}

/// Simulates the observation series of `model` from three fixed
/// initial states: S steps at times (j+1) * tau, three axes per qubit.
pub fn observe_series(
    model: &HamiltonianModel,
    states: &[QuantumState],
    tau: f64,
    n_steps: usize,
) -> Result<ObservationSeries, QuantumError> {
    if states.len() != NUM_INITIAL_STATES {
        return Err(QuantumError::WrongStateCount {
            expected: NUM_INITIAL_STATES,
            got: states.len(),
        });
    }
    if !(tau.is_finite() && tau > 0.0) {
        return Err(QuantumError::BadTau(tau));
    }
    if n_steps == 0 {
        return Err(QuantumError::EmptySeries);
    }
    let n = model.n_qubits();
    for st in states {
        if st.n_qubits() != n {
            return Err(QuantumError::StateSizeMismatch {
                state_qubits: st.n_qubits(),
                n_qubits: n,
            });
        }
    }
    let h = assemble(model)?;
    let dec = spectral(&h.view())?;
    let dim = dec.dim();
    let v = dec.eigenvectors();

    let mut values = Array3::zeros((NUM_INITIAL_STATES, n_steps, 3 * n));
    for (k, state) in states.iter().enumerate() {
        // Rotate once into the eigenbasis, then each step is a phase
        // twist plus one rotation back.
        let mut c0 = Array1::zeros(dim);
        for e in 0..dim {
            let mut acc = Complex64::new(0.0, 0.0);
            for r in 0..dim {
                acc += v[[r, e]].conj() * state.amplitudes()[r];
            }
            c0[e] = acc;
        }
        for j in 0..n_steps {
            let t = (j as f64 + 1.0) * tau;
            let mut c = c0.clone();
            for (e, ce) in c.iter_mut().enumerate() {
                *ce *= Complex64::from_polar(1.0, -dec.eigenvalues()[e] * t);
            }
            let psi = QuantumState::from_normalized(v.dot(&c));
            for q in 0..n {
                for (a, axis) in MeasurementAxis::ALL.iter().enumerate() {
                    values[[k, j, 3 * q + a]] = expectation(&psi, q, *axis)?;
                }
            }
        }
    }
    ObservationSeries::new(n, tau, values)
}

/// Haar-random pure state: i.i.d. complex Gaussian amplitudes,
/// normalised. Draw order is fixed (basis index, re then im).
pub fn haar_random_state<R: Rng + ?Sized>(n_qubits: usize, rng: &mut R) -> QuantumState {
    assert!(n_qubits >= 1, "state needs at least one qubit");
    let dim = 1usize << n_qubits;
    let mut amplitudes = Array1::zeros(dim);
    let mut norm_sqr = 0.0;
    while norm_sqr == 0.0 {
        for a in amplitudes.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *a = Complex64::new(re, im);
        }
        norm_sqr = amplitudes.iter().map(|a| a.norm_sqr()).sum();
    }
    let inv = 1.0 / norm_sqr.sqrt();
    amplitudes.mapv_inplace(|a| a * inv);
    QuantumState::from_normalized(amplitudes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use ndarray::array;
    use proptest::prelude::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    /// Independent Kronecker oracle: computes entry (r, c) of a Pauli
    /// string's matrix directly from the per-factor entries, without
    /// the fold used by `term_matrix`.
    fn term_entry_oracle(term: &PauliString, row: usize, col: usize) -> Complex64 {
        let n = term.n_qubits();
        let mut acc = c(1.0, 0.0);
        for (q, p) in term.factors().iter().enumerate() {
            let rbit = (row >> (n - 1 - q)) & 1;
            let cbit = (col >> (n - 1 - q)) & 1;
            acc *= pauli_matrix(*p)[[rbit, cbit]];
        }
        acc
    }

    /// Independent matrix exponential of -i * H * t by scaling and
    /// squaring with a Taylor series; does not touch LAPACK.
    fn expm_minus_iht(h: &Array2<Complex64>, t: f64) -> Array2<Complex64> {
        let dim = h.dim().0;
        let a = h.mapv(|z| z * c(0.0, -t));
        let norm = a
            .rows()
            .into_iter()
            .map(|r| r.iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0f64, f64::max);
        let s = if norm > 0.5 {
            (norm / 0.5).log2().ceil() as u32
        } else {
            0
        };
        let scale = 1.0 / (2.0f64.powi(s as i32));
        let a_small = a.mapv(|z| z * scale);
        let mut result = Array2::from_diag(&Array1::from_elem(dim, c(1.0, 0.0)));
        let mut power = result.clone();
        let mut factorial = 1.0;
        for k in 1..=24 {
            power = power.dot(&a_small);
            factorial *= k as f64;
            result = result + power.mapv(|z| z / factorial);
        }
        for _ in 0..s {
            result = result.dot(&result);
        }
        result
    }

    fn mat_mul_state(m: &Array2<Complex64>, v: &Array1<Complex64>) -> Array1<Complex64> {
        m.dot(v)
    }

    fn h1_model(w1: f64, w2: f64, j12: f64) -> HamiltonianModel {
        HamiltonianModel::new(
            2,
            vec![
                PauliString::parse("ZI").unwrap(),
                PauliString::parse("IZ").unwrap(),
                PauliString::parse("XX").unwrap(),
            ],
            vec![w1, w2, j12],
        )
        .unwrap()
    }

    fn plus_tensor_zero() -> QuantumState {
        // |+> on qubit 0, |0> on qubit 1.
        let r = 1.0 / 2.0f64.sqrt();
        QuantumState::new(array![c(r, 0.0), c(0.0, 0.0), c(r, 0.0), c(0.0, 0.0)]).unwrap()
    }

    #[test]
    fn pauli_matrices_match_definitions() {
        let z = pauli_matrix(Pauli::Z);
        assert_eq!(z[[0, 0]], c(1.0, 0.0));
        assert_eq!(z[[1, 1]], c(-1.0, 0.0));
        assert_eq!(z[[0, 1]], c(0.0, 0.0));
        let x = pauli_matrix(Pauli::X);
        assert_eq!(x.dot(&x), pauli_matrix(Pauli::I));
        let y = pauli_matrix(Pauli::Y);
        assert_eq!(y[[0, 1]], c(0.0, -1.0));
        assert_eq!(y[[1, 0]], c(0.0, 1.0));
    }

    #[test]
    fn term_matrix_zi_is_diag_1_1_m1_m1() {
        let t = term_matrix(&PauliString::parse("ZI").unwrap()).unwrap();
        let expected = [1.0, 1.0, -1.0, -1.0];
        for i in 0..4 {
            for j in 0..4 {
                let want = if i == j {
                    c(expected[i], 0.0)
                } else {
                    c(0.0, 0.0)
                };
                assert_eq!(t[[i, j]], want);
            }
        }
    }

    #[test]
    fn term_matrix_xx_is_antidiagonal() {
        let t = term_matrix(&PauliString::parse("XX").unwrap()).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let want = if i + j == 3 { c(1.0, 0.0) } else { c(0.0, 0.0) };
                assert_eq!(t[[i, j]], want);
            }
        }
    }

    #[test]
    fn term_matrix_agrees_with_entrywise_oracle() {
        for label in ["IZI", "XYZ", "YIX", "ZZY", "XIIX"] {
            let term = PauliString::parse(label).unwrap();
            let m = term_matrix(&term).unwrap();
            let dim = 1 << term.n_qubits();
            for r in 0..dim {
                for col in 0..dim {
                    let want = term_entry_oracle(&term, r, col);
                    assert!(
                        (m[[r, col]] - want).norm() < 1e-15,
                        "{label} mismatch at ({r},{col})"
                    );
                }
            }
        }
    }

    #[test]
    fn term_matrix_rejects_oversized_systems() {
        let term = PauliString::new(vec![Pauli::X; MAX_DENSE_QUBITS + 1]).unwrap();
        assert!(matches!(
            term_matrix(&term),
            Err(QuantumError::DimensionLimit { .. })
        ));
    }

    #[test]
    fn assemble_h1_with_unit_omega1_is_zi() {
        let h = assemble(&h1_model(1.0, 0.0, 0.0)).unwrap();
        let expected = term_matrix(&PauliString::parse("ZI").unwrap()).unwrap();
        assert_eq!(h, expected);
    }

    #[test]
    fn assemble_h1_spot_entries() {
        // 0.3 ZI - 0.7 IZ + 0.5 XX, checked against hand Kronecker sums.
        let h = assemble(&h1_model(0.3, -0.7, 0.5)).unwrap();
        assert!((h[[0, 0]] - c(0.3 - 0.7, 0.0)).norm() < 1e-15);
        assert!((h[[1, 1]] - c(0.3 + 0.7, 0.0)).norm() < 1e-15);
        assert!((h[[2, 2]] - c(-0.3 - 0.7, 0.0)).norm() < 1e-15);
        assert!((h[[3, 3]] - c(-0.3 + 0.7, 0.0)).norm() < 1e-15);
        assert!((h[[0, 3]] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((h[[1, 2]] - c(0.5, 0.0)).norm() < 1e-15);
        assert!((h[[0, 1]]).norm() < 1e-15);
    }

    #[test]
    fn model_rejects_identity_and_duplicate_terms() {
        let id = PauliString::parse("II").unwrap();
        let zi = PauliString::parse("ZI").unwrap();
        assert!(matches!(
            HamiltonianModel::new(2, vec![id], vec![1.0]),
            Err(QuantumError::IdentityTerm(0))
        ));
        assert!(matches!(
            HamiltonianModel::new(2, vec![zi.clone(), zi], vec![1.0, 2.0]),
            Err(QuantumError::DuplicateTerm(0, 1))
        ));
    }

    #[test]
    fn spectral_orders_eigenvalues_ascending() {
        let h = assemble(&h1_model(1.0, 0.0, 0.0)).unwrap();
        let dec = spectral(&h.view()).unwrap();
        let evs = dec.eigenvalues();
        assert!((evs[0] + 1.0).abs() < 1e-12 && (evs[1] + 1.0).abs() < 1e-12);
        assert!((evs[2] - 1.0).abs() < 1e-12 && (evs[3] - 1.0).abs() < 1e-12);
        for w in evs.as_slice().unwrap().windows(2) {
            assert!(w[0] <= w[1] + 1e-14);
        }
    }

    #[test]
    fn spectral_reconstructs_the_matrix() {
        let h = assemble(&h1_model(0.37, -0.81, 0.55)).unwrap();
        let dec = spectral(&h.view()).unwrap();
        let v = dec.eigenvectors();
        let vdag = v.t().mapv(|z| z.conj());
        let lam = Array2::from_diag(&dec.eigenvalues().mapv(|l| c(l, 0.0)));
        let rebuilt = v.dot(&lam).dot(&vdag);
        let max_dev = h
            .iter()
            .zip(rebuilt.iter())
            .map(|(a, b)| (a - b).norm())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 1e-10, "reconstruction deviation {max_dev}");
    }

    #[test]
    fn spectral_rejects_non_hermitian_input() {
        let m = array![[c(0.0, 0.0), c(1.0, 0.0)], [c(0.5, 0.0), c(0.0, 0.0)]];
        assert!(matches!(
            spectral(&m.view()),
            Err(QuantumError::NotHermitian(_))
        ));
    }

    #[test]
    fn evolve_at_time_zero_is_identity() {
        let h = assemble(&h1_model(0.4, 0.2, -0.6)).unwrap();
        let dec = spectral(&h.view()).unwrap();
        let psi0 = plus_tensor_zero();
        let psi = dec.evolve(&psi0, 0.0).unwrap();
        for (a, b) in psi.amplitudes().iter().zip(psi0.amplitudes().iter()) {
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn evolve_single_qubit_z_rotation_matches_cosine() {
        // H = w * sigma_z on |+>: <sigma_x>(t) = cos(2 w t).
        let w = 0.7;
        let model =
            HamiltonianModel::new(1, vec![PauliString::parse("Z").unwrap()], vec![w]).unwrap();
        let dec = spectral(&assemble(&model).unwrap().view()).unwrap();
        let r = 1.0 / 2.0f64.sqrt();
        let plus = QuantumState::new(array![c(r, 0.0), c(r, 0.0)]).unwrap();
        for j in 0..50 {
            let t = 0.11 * j as f64;
            let psi = dec.evolve(&plus, t).unwrap();
            let x = expectation(&psi, 0, MeasurementAxis::X).unwrap();
            assert!((x - (2.0 * w * t).cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn evolve_matches_matrix_exponential_oracle() {
        let model = h1_model(0.83, -0.41, 0.29);
        let h = assemble(&model).unwrap();
        let dec = spectral(&h.view()).unwrap();
        let mut rng = rng::stream_from(11);
        for _ in 0..5 {
            let psi0 = haar_random_state(2, &mut rng);
            for t in [0.1, 0.9, 3.7] {
                let psi = dec.evolve(&psi0, t).unwrap();
                let u = expm_minus_iht(&h, t);
                let want = mat_mul_state(&u, psi0.amplitudes());
                let dev = psi
                    .amplitudes()
                    .iter()
                    .zip(want.iter())
                    .map(|(a, b)| (a - b).norm())
                    .fold(0.0f64, f64::max);
                assert!(dev < 1e-10, "deviation {dev} at t={t}");
            }
        }
    }

    #[test]
    fn expectation_basis_and_bell_cases() {
        let zero2 = QuantumState::computational_basis(2, 0).unwrap();
        assert_eq!(expectation(&zero2, 0, MeasurementAxis::Z).unwrap(), 1.0);
        assert_eq!(expectation(&zero2, 1, MeasurementAxis::Z).unwrap(), 1.0);
        assert_eq!(expectation(&zero2, 0, MeasurementAxis::X).unwrap(), 0.0);

        let plus0 = plus_tensor_zero();
        assert!((expectation(&plus0, 0, MeasurementAxis::X).unwrap() - 1.0).abs() < 1e-15);
        assert!(expectation(&plus0, 0, MeasurementAxis::Z).unwrap().abs() < 1e-15);
        assert!((expectation(&plus0, 1, MeasurementAxis::Z).unwrap() - 1.0).abs() < 1e-15);

        // Bell state: every single-qubit expectation vanishes.
        let r = 1.0 / 2.0f64.sqrt();
        let bell =
            QuantumState::new(array![c(r, 0.0), c(0.0, 0.0), c(0.0, 0.0), c(r, 0.0)]).unwrap();
        for q in 0..2 {
            for axis in MeasurementAxis::ALL {
                assert!(expectation(&bell, q, axis).unwrap().abs() < 1e-15);
            }
        }
    }

    #[test]
    fn expectation_rejects_out_of_range_qubit() {
        let st = QuantumState::computational_basis(2, 0).unwrap();
        assert!(matches!(
            expectation(&st, 2, MeasurementAxis::Z),
            Err(QuantumError::QubitOutOfRange { .. })
        ));
    }

    #[test]
    fn observe_series_zero_hamiltonian_is_constant() {
        let model = h1_model(0.0, 0.0, 0.0);
        let mut rng = rng::stream_from(3);
        let states: Vec<_> = (0..3).map(|_| haar_random_state(2, &mut rng)).collect();
        let series = observe_series(&model, &states, 0.1, 20).unwrap();
        for (k, st) in states.iter().enumerate() {
            for q in 0..2 {
                for (a, axis) in MeasurementAxis::ALL.iter().enumerate() {
                    let want = expectation(st, q, *axis).unwrap();
                    for j in 0..20 {
                        assert!((series.values()[[k, j, 3 * q + a]] - want).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn observe_series_z_field_x_channel_is_cos_2wt() {
        let w = 0.5;
        let model =
            HamiltonianModel::new(2, vec![PauliString::parse("ZI").unwrap()], vec![w]).unwrap();
        let states = vec![plus_tensor_zero(), plus_tensor_zero(), plus_tensor_zero()];
        let tau = 0.02 * std::f64::consts::PI;
        let series = observe_series(&model, &states, tau, 100).unwrap();
        for j in 0..100 {
            let t = (j as f64 + 1.0) * tau;
            assert!(
                (series.values()[[0, j, 0]] - (2.0 * w * t).cos()).abs() < 1e-12,
                "step {j}"
            );
        }
    }

    #[test]
    fn observe_series_matches_small_step_propagator_oracle() {
        // Compose exact propagators over sub-steps dt = tau / 1000 and
        // compare expectations; the oracle never calls `spectral`.
        let model = h1_model(0.62, -0.17, 0.44);
        let h = assemble(&model).unwrap();
        let tau = 0.02 * std::f64::consts::PI;
        let n_steps = 25;
        let mut rng = rng::stream_from(5);
        let states: Vec<_> = (0..3).map(|_| haar_random_state(2, &mut rng)).collect();
        let series = observe_series(&model, &states, tau, n_steps).unwrap();

        let dt = tau / 1000.0;
        let u_dt = expm_minus_iht(&h, dt);
        for (k, st) in states.iter().enumerate() {
            let mut psi = st.amplitudes().clone();
            for j in 0..n_steps {
                for _ in 0..1000 {
                    psi = mat_mul_state(&u_dt, &psi);
                }
                let current = QuantumState::from_normalized(psi.clone());
                for q in 0..2 {
                    for (a, axis) in MeasurementAxis::ALL.iter().enumerate() {
                        let want = expectation(&current, q, *axis).unwrap();
                        let got = series.values()[[k, j, 3 * q + a]];
                        assert!(
                            (got - want).abs() < 1e-6,
                            "state {k} step {j} feature {}",
                            3 * q + a
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn haar_random_state_is_normalised_and_deterministic() {
        let mut rng_a = rng::stream_from(99);
        let mut rng_b = rng::stream_from(99);
        let a = haar_random_state(3, &mut rng_a);
        let b = haar_random_state(3, &mut rng_b);
        assert_eq!(a.amplitudes(), b.amplitudes());
        let norm: f64 = a.amplitudes().iter().map(|z| z.norm_sqr()).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn haar_random_state_z_expectation_averages_to_zero() {
        let mut rng = rng::stream_from(1234);
        let n_draws = 10_000;
        let mut mean = 0.0;
        for _ in 0..n_draws {
            let st = haar_random_state(1, &mut rng);
            mean += expectation(&st, 0, MeasurementAxis::Z).unwrap();
        }
        mean /= n_draws as f64;
        // Single-qubit Haar <Z> has variance 1/3; allow 3 sigma.
        assert!(mean.abs() < 3.0 * (1.0 / 3.0f64).sqrt() / (n_draws as f64).sqrt() + 1e-3);
    }

    proptest! {
        #[test]
        fn evolution_preserves_norm_and_bounds(
            w1 in -1.0f64..1.0,
            w2 in -1.0f64..1.0,
            j12 in -1.0f64..1.0,
            t in 0.0f64..10.0,
            seed in 0u64..1000,
        ) {
            let model = h1_model(w1, w2, j12);
            let dec = spectral(&assemble(&model).unwrap().view()).unwrap();
            let mut r = rng::stream_from(seed);
            let psi0 = haar_random_state(2, &mut r);
            let psi = dec.evolve(&psi0, t).unwrap();
            let norm: f64 = psi.amplitudes().iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            for q in 0..2 {
                for axis in MeasurementAxis::ALL {
                    let e = expectation(&psi, q, axis).unwrap();
                    prop_assert!((-1.0..=1.0).contains(&e));
                }
            }
        }

        #[test]
        fn evolution_composes(
            w1 in -1.0f64..1.0,
            j12 in -1.0f64..1.0,
            t1 in 0.0f64..3.0,
            t2 in 0.0f64..3.0,
        ) {
            let model = h1_model(w1, 0.3, j12);
            let dec = spectral(&assemble(&model).unwrap().view()).unwrap();
            let mut r = rng::stream_from(17);
            let psi0 = haar_random_state(2, &mut r);
            let once = dec.evolve(&psi0, t1 + t2).unwrap();
            let twice = dec.evolve(&dec.evolve(&psi0, t1).unwrap(), t2).unwrap();
            let dev = once
                .amplitudes()
                .iter()
                .zip(twice.amplitudes().iter())
                .map(|(a, b)| (a - b).norm())
                .fold(0.0f64, f64::max);
            prop_assert!(dev < 1e-10);
        }
    }
}
