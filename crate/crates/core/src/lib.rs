//! Rescaled N-body Hamiltonian dynamics and the diagnostics needed to study
//! its hydrodynamic limit: empirical measures, coarse-grained fields and
//! weak-form residuals of the continuity and momentum equations.
//!
//! Particles carry mass `1/N` and interact through a pair potential
//! `Φ(r/σ_N)`. The modules are layered bottom-up:
//!
//! - [`potential`]: the pair interaction `Φ` and `Φ'`.
//! - [`dynamics`]: direct `O(N²)` accelerations, energies and a velocity
//!   Verlet integrator.
//! - [`initcond`]: aligned initial configurations and the `B_N`, `σ_N`
//!   certificates that make separations nondecreasing.
//! - [`measures`]: empirical measures, moments, tails and characteristic
//!   functions.
//! - [`fields`]: histogram estimates of density, barycentric velocity and the
//!   velocity-fluctuation tensor.
//! - [`weakform`]: compactly supported bumps, interaction terms and residuals.

pub mod dynamics;
pub mod error;
pub mod fields;
pub mod initcond;
pub mod measures;
pub mod potential;
pub mod quadrature;
pub mod weakform;

pub use error::{Error, Result};
pub use potential::PotentialSpec;

/// Three-vector used for positions, velocities and accelerations.
pub type Vec3 = nalgebra::Vector3<f64>;
/// Symmetric 3×3 tensors (velocity fluctuations).
pub type Mat3 = nalgebra::Matrix3<f64>;
