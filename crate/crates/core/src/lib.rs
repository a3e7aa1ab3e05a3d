//! Modeling, simulation and calibration toolkit for cascaded single
//! microwave photon detectors (cSMPDs).
//!
//! A detector is a chain of N+1 linear resonators (buffer, memories, waste)
//! bridged by N transmon flag qubits. A pumped four-wave-mixing process on
//! qubit `k` converts a photon from resonator `k` into resonator `k+1` while
//! raising the qubit. The crate is organised by concern:
//!
//! | module        | contents                                                   |
//! |---------------|------------------------------------------------------------|
//! | [`model`]     | chain, qubit, pump, cycle and environment value types      |
//! | [`scattering`]| tridiagonal input-output solver, cooperativity, bandwidth  |
//! | [`metrics`]   | dark-count and efficiency budgets, sensitivity, NEP        |
//! | [`dynamics`]  | two-level master equation and single-excitation amplitudes |
//! | [`montecarlo`]| cycle-level click simulator, readout policy, decoders      |
//! | [`calibration`]| simplex least squares with bootstrap errors, fit families |
//!
//! Every rate is stored in angular units (rad/s or 1/s). Conversion from Hz
//! happens once, at the I/O boundary, through [`units::hz`].

pub mod calibration;
pub mod dynamics;
pub mod error;
pub mod metrics;
pub mod model;
pub mod montecarlo;
pub mod scattering;
pub mod units;

pub use error::{Error, Result};
pub use model::{ChainSpec, CycleSpec, Environment, ModeRole, ModeSpec, PumpSpec, QubitSpec};
