//! Exact-factorization geometry of two-component quantum states.
//!
//! * [`grid`]: periodic 1D grid with spectral/finite-difference calculus.
//! * [`model`]: the exactly solvable two-level model and its Hamiltonian.
//! * [`ef`]: marginal/conditional factorization and geometric tensors.
//! * [`geometry`]: rank-3 tensor identities on synthetic multi-dimensional families.
//! * [`identity`]: both sides of the energy-transfer identity for the
//!   geometric kinetic energy.
//! * [`propagator`]: split-operator propagation under the model Hamiltonian.

pub mod ef;
pub mod error;
pub mod geometry;
pub mod grid;
pub mod identity;
pub mod model;
pub mod propagator;

pub use ef::{DecomposeOptions, EFDecomposition, KineticEnergies, TwoComponentWavefunction};
pub use error::{Error, Result};
pub use grid::{CumulativeRule, DerivativeMethod, Grid1D};
pub use model::{Hamiltonian, ModelParams, ModelSystem, TimeDerivativeMethod};
