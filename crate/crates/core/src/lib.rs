//! Simulation of mechanical systems with linear velocity constraints and
//! elastic impacts against a chart boundary.
//!
//! States live on the Pontryagin bundle, carrying configuration, velocity,
//! and momentum together so that constraint and Legendre residuals are
//! observable at every sample. Smooth arcs are integrated either from the
//! Lagrangian or from the Hamiltonian side; both share one impact solver
//! that reflects the momentum inside the constraint-compatible jump space
//! while conserving energy exactly up to tolerance.

pub mod constraints;
pub mod dynamics;
pub mod error;
pub mod hamiltonian;
pub mod impact;
pub mod model;
pub mod output;
pub mod scenarios;
pub mod sim;

pub use constraints::{distribution_at, impact_subspaces, project_velocity, DistributionBasis, ImpactSubspaces};
pub use dynamics::{constrained_acceleration, energy_monitor, step, SmoothStepResult};
pub use error::{Error, Result};
pub use hamiltonian::{equivalence_check, hamiltonian, hamiltonian_step, HamiltonianState};
pub use impact::{locate_crossing, resolve_impact, zeno_guard, GuardEvaluation};
pub use model::{
    energy, lagrangian, legendre, legendre_inv, ImpactEvent, ImpactResiduals, PontryaginState,
    SystemSpec, SystemSpecBuilder, Tolerances, Trajectory,
};
pub use output::{write_events, write_trajectory};
pub use scenarios::ScenarioSpec;
pub use sim::{
    compare_formulations, run_formulation, run_simulation, ComparisonReport, Formulation,
    SimConfig, SimFailure,
};
