//! Herman-Kluk semiclassical propagation of Gaussian wavepackets with Monte
//! Carlo phase-space sampling.
//!
//! The crate samples initial conditions from the Husimi density of the initial
//! state, from its normalised square root, or from the wider family `rho_a`,
//! propagates classical trajectories with velocity Verlet, and assembles
//! `psi_N(t)` on a grid or through analytic overlaps. Reference solutions come
//! from the closed-form harmonic evolution and a split-operator solver.
//!
//! Units are atomic units throughout; `hbar` is carried explicitly.

pub mod analysis;
pub mod dynamics;
mod error;
pub mod grid;
pub mod hk;
pub mod phase_space;
pub mod reference;

pub use dynamics::{morse_levels, propagate, MorseParams, Potential, Trajectory};
pub use error::{Error, Result};
pub use grid::{GridWarning, GridWavefunction, SpatialGrid};
pub use hk::{build_ensemble, hk_prefactor, prefactor_bound_check, HkEnsemble, HkPrefactorState};
pub use phase_space::{
    evaluate_gaussian, gaussian_overlap, GaussianWavepacket, PhaseSpaceSamples, SamplingScheme,
    SchemeKind, WidthMatrix,
};
pub use reference::{harmonic_exact, split_operator_propagate};
