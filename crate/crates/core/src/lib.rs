//! Compile small PEPS tensor networks into qubit-reusing gate programs.
//!
//! The crate covers the whole path from a lattice Hamiltonian to sampled
//! observables:
//!
//! - [`tensor`]: dense complex tensors, SVD splits and isometry completion.
//! - [`pauli`], [`lattice`]: Pauli algebra, the Wen plaquette model, its
//!   boundary loop observable, and exact diagonalization.
//! - [`peps`]: PEPS networks and their exact dense contraction.
//! - [`gates`]: the parameterized gate blocks and unitary ↔ tensor maps.
//! - [`compiler`]: zig-zag lowering of a PEPS into a measure-and-reset program.
//! - [`sim`]: branch-enumerating and shot-sampling execution of programs.
//! - [`variational`]: derivative-free energy minimization over block angles.

pub mod compiler;
pub mod gates;
pub mod lattice;
pub mod peps;
pub mod pauli;
pub mod sim;
pub mod tensor;
pub mod variational;

/// Numerical tolerances shared across modules.
pub mod tol {
    /// Unitarity / isometry checks on constructed objects.
    pub const STRUCTURAL: f64 = 1e-10;
    /// Linear-dependence cutoff when completing isometries.
    pub const DEPENDENCE: f64 = 1e-8;
    /// Isometry check on user-supplied tensors.
    pub const USER_ISOMETRY: f64 = 1e-8;
}

pub use num_complex::Complex64 as C64;
