//! Error taxonomy shared by all engine modules.

use thiserror::Error;

/// Unified error type for model construction, stepping, and impact resolution.
#[derive(Debug, Error)]
pub enum Error {
    /// A vector or matrix argument does not match the system dimension.
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    /// The mass matrix failed a symmetry or positive-definiteness check.
    #[error("mass matrix is not symmetric positive definite at the evaluated configuration")]
    SingularMetric,

    /// The constraint matrix lost row rank at the evaluated configuration.
    #[error("constraint rank drop: expected rank {expected}, found {found}")]
    RankDrop { expected: usize, found: usize },

    /// The boundary gradient vanishes on the boundary level set.
    #[error("degenerate boundary: db(q) = 0 at a boundary point")]
    DegenerateBoundary,

    /// The constraint distribution is tangent to the boundary at the contact
    /// point, so the momentum-jump subspace collapses.
    #[error("non-transversal contact: constraint distribution lies inside the boundary tangent space")]
    NonTransversalContact,

    /// A non-finite value appeared during integration.
    #[error("non-finite value produced during integration at t = {t}")]
    BlowUp { t: f64 },

    /// A step produced residuals beyond ten times the configured tolerance.
    #[error("step rejected at t = {t}: residual {residual:.3e} exceeds 10x tolerance {tolerance:.3e}")]
    StepRejected { t: f64, residual: f64, tolerance: f64 },

    /// A non-positive step size was requested.
    #[error("invalid step size h = {h}; step size must be positive")]
    InvalidStepSize { h: f64 },

    /// Event localization could not bracket or converge on the crossing.
    #[error("event localization failed: {reason}")]
    EventLocalization { reason: String },

    /// Boundary contact with (near-)zero normal speed; the elastic impact map
    /// is undefined there and the run halts with this diagnostic.
    #[error("grazing impact at t = {t}: normalized normal speed {speed:.3e} is below the grazing tolerance")]
    GrazingImpact { t: f64, speed: f64 },

    /// The impact conditions admit no nontrivial admissible solution.
    #[error("impact infeasible at t = {t}: {reason}")]
    ImpactInfeasible { t: f64, reason: String },

    /// Too many impacts accumulated inside one time window.
    #[error("Zeno suspicion: {count} impacts within a window of {window}; limit is {limit}")]
    ZenoSuspicion { count: usize, window: f64, limit: usize },

    /// The Lagrangian and Hamiltonian runs disagree structurally.
    #[error("structural mismatch between formulations: {reason}")]
    StructuralMismatch { reason: String },

    /// Invalid run configuration (bad field values, unknown scenario, ...).
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Invalid system specification (bad parameters, shape violations, ...).
    #[error("specification error: {0}")]
    Specification(String),

    /// File I/O failure, with the offending path.
    #[error("I/O error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    /// True for halts triggered by the runtime safeguards (Zeno, grazing)
    /// rather than by a numerical or configuration failure.
    pub fn is_safeguard_halt(&self) -> bool {
        matches!(
            self,
            Error::ZenoSuspicion { .. } | Error::GrazingImpact { .. }
        )
    }

    /// True for errors caused by invalid input rather than by the dynamics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::Specification(_) | Error::DimensionMismatch { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
