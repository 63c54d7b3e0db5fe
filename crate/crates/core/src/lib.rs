//! Quantum state diffusion solvers for Markovian open quantum systems.
//!
//! The density matrix of a Lindblad equation is recovered as an ensemble
//! average over stochastic state vectors. Weak first- and second-order
//! integrators are provided, together with a deterministic density-matrix
//! reference, a driven Morse oscillator benchmark and the statistics used to
//! measure convergence.

pub mod linalg;
pub mod propagator;
pub mod system;
pub mod wiener;
pub mod morse;
pub mod reference;
pub mod harness;
