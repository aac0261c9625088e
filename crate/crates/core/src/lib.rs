//! Transport-aware trapped-ion gate compiler and pulse-level noisy simulator.
//!
//! The crate is organized around the flow of an experiment:
//!
//! - [`linalg`]: dense complex linear algebra and quantum-information
//!   primitives (states, density matrices, unitaries, entropy).
//! - [`device`]: static calibration description of the ion chain — geometry,
//!   beams, light shifts, motional modes, timing.
//! - [`gates`]: ideal gate constructors, PB1 composite expansion, MS gate,
//!   CNOT template, single-qubit Cliffords, BV oracle.
//! - [`program`]: the timeline intermediate representation shared by the
//!   compiler and simulator, with a line-oriented text serialization.
//! - [`compiler`]: circuit → transport-and-pulse compilation with frame
//!   tracking, cascade compaction, and duration accounting.
//! - [`sim`]: pulse-level noisy evolution (spin fast path) and the
//!   spin ⊗ Fock Mølmer-Sørensen motional simulator.
//! - [`analysis`]: experiment harnesses and output analysis (success
//!   probability, mutual information, parity scans, error budgets).

pub mod analysis;
pub mod compiler;
pub mod device;
pub mod gates;
pub mod linalg;
pub mod program;
pub mod sim;

pub use linalg::{DensityMatrix, QuantumError, StateVector, UnitaryOp};
