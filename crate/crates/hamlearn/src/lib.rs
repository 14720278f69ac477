//! hamlearn — learning Pauli-string Hamiltonian coefficients from
//! single-qubit expectation-value time series.
//!
//! The crate simulates closed-system dynamics of N-qubit Hamiltonians
//! written in a Pauli-string basis, generates labelled datasets of
//! observation series, trains a multi-stage residual estimator (LSTM
//! encoder + fully connected head, trained with Adam on analytic
//! gradients), and extends two-qubit estimators to larger systems via
//! XY-4 dynamical decoupling. Everything is deterministic under a
//! master seed: reruns produce byte-identical datasets, model bundles,
//! and report tables.
//!
//! Conventions used throughout:
//!
//! * Qubits are 0-indexed. Qubit 0 is the leftmost tensor factor, i.e.
//!   the most significant bit of a computational-basis index.
//! * Observation series have shape `[3 states][S steps][3N features]`;
//!   feature `3*q + a` is the expectation of sigma_a on qubit q with
//!   axes ordered x, y, z. Step j holds time t = (j+1) * tau; the
//!   trivial t = 0 point is not stored.
//! * All numerics are f64. Reductions run in fixed orders.

extern crate blas_src;

pub mod analysis;
pub mod bundle;
pub mod container;
pub mod dataset;
pub mod decoupling;
pub mod multistage;
pub mod neural;
pub mod quantum;
pub mod rng;
pub mod tables;

/// Number of fixed initial states an observation dataset uses.
pub const NUM_INITIAL_STATES: usize = 3;
