//! Core mathematical objects: the system specification, Pontryagin-bundle
//! states, impact events, and trajectories.
//!
//! A system lives on an n-dimensional configuration chart with a mass matrix
//! M(q), a potential V(q), linear velocity constraints mu(q) v = 0, and a
//! scalar boundary function b(q) whose zero level set is the wall. The
//! interior is b < 0.

use std::fmt;
use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, RowDVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// q -> scalar.
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;
/// q -> column vector (e.g. a gradient).
pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
/// q -> row covector (e.g. db).
pub type RowFn = Arc<dyn Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync>;
/// q -> matrix (mass matrix or constraint rows).
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
/// q -> list of matrices, entry k holding the partial derivative along q_k.
pub type MatrixGradFn = Arc<dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync>;

/// Numerical tolerances threaded through stepping, event location, and
/// impact resolution. All values are strictly positive.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Max allowed |mu(q) v|_inf on accepted states.
    pub tol_constraint: f64,
    /// Max allowed |p - (M v)^T|_inf on accepted states.
    pub tol_legendre: f64,
    /// Max allowed |b(q)| for a point to count as lying on the boundary.
    pub tol_boundary: f64,
    /// Time tolerance for event localization.
    pub tol_t: f64,
    /// Grazing threshold on the normalized normal speed at contact.
    pub tol_graze: f64,
    /// Max allowed residual (energy, jump-subspace, constraint) on a
    /// resolved impact.
    pub tol_impact: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_constraint: 1e-8,
            tol_legendre: 1e-10,
            tol_boundary: 1e-9,
            tol_t: 1e-10,
            tol_graze: 1e-8,
            tol_impact: 1e-9,
        }
    }
}

impl Tolerances {
    /// All tolerance values must be strictly positive.
    pub fn validate(&self) -> Result<()> {
        let entries = [
            ("tol_constraint", self.tol_constraint),
            ("tol_legendre", self.tol_legendre),
            ("tol_boundary", self.tol_boundary),
            ("tol_t", self.tol_t),
            ("tol_graze", self.tol_graze),
            ("tol_impact", self.tol_impact),
        ];
        for (name, value) in entries {
            if value <= 0.0 || !value.is_finite() {
                return Err(Error::Config(format!(
                    "tolerance {name} must be positive and finite, got {value}"
                )));
            }
        }
        Ok(())
    }
}

/// Relative-scale threshold below which singular values count as zero.
pub const RANK_TOLERANCE: f64 = 1e-9;

/// Immutable description of a mechanical system with linear velocity
/// constraints on a chart with boundary.
///
/// The Lagrangian is mechanical, L(q, v) = v^T M(q) v / 2 - V(q), with M(q)
/// symmetric positive definite, so the Legendre transform is invertible
/// everywhere. Derivatives of M, V, and mu are supplied analytically by the
/// builder or fall back to central finite differences.
#[derive(Clone)]
pub struct SystemSpec {
    dim: usize,
    n_constraints: usize,
    mass: MatrixFn,
    mass_grad: MatrixGradFn,
    potential: ScalarFn,
    potential_grad: VectorFn,
    constraints: MatrixFn,
    constraints_grad: MatrixGradFn,
    boundary: ScalarFn,
    boundary_grad: RowFn,
}

impl fmt::Debug for SystemSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SystemSpec")
            .field("dim", &self.dim)
            .field("n_constraints", &self.n_constraints)
            .finish_non_exhaustive()
    }
}

impl SystemSpec {
    /// Start building a system of chart dimension `dim`.
    pub fn builder(dim: usize) -> SystemSpecBuilder {
        SystemSpecBuilder::new(dim)
    }

    /// Chart dimension n.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number m of constraint one-forms (0 for unconstrained systems).
    pub fn constraint_count(&self) -> usize {
        self.n_constraints
    }

    /// Check that `x` has the chart dimension.
    pub fn check_dim(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Check that a row covector has the chart dimension.
    pub fn check_row_dim(&self, x: &RowDVector<f64>) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                actual: x.len(),
            });
        }
        Ok(())
    }

    /// Mass matrix M(q).
    pub fn mass_at(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.mass)(q)
    }

    /// Partial derivatives of the mass matrix, entry k = dM/dq_k.
    pub fn mass_gradient_at(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.mass_grad)(q)
    }

    /// Potential V(q).
    pub fn potential_at(&self, q: &DVector<f64>) -> f64 {
        (self.potential)(q)
    }

    /// Gradient of the potential as a column vector.
    pub fn potential_gradient_at(&self, q: &DVector<f64>) -> DVector<f64> {
        (self.potential_grad)(q)
    }

    /// Constraint one-forms stacked as the m x n matrix mu(q).
    pub fn constraints_at(&self, q: &DVector<f64>) -> DMatrix<f64> {
        (self.constraints)(q)
    }

    /// Partial derivatives of mu, entry k = dmu/dq_k.
    pub fn constraints_gradient_at(&self, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
        (self.constraints_grad)(q)
    }

    /// Boundary function b(q); interior is b < 0.
    pub fn boundary_at(&self, q: &DVector<f64>) -> f64 {
        (self.boundary)(q)
    }

    /// Row gradient db(q).
    pub fn boundary_gradient_at(&self, q: &DVector<f64>) -> RowDVector<f64> {
        (self.boundary_grad)(q)
    }

    /// Cholesky factorization of M(q), or a singular-metric error.
    pub fn mass_cholesky(&self, q: &DVector<f64>) -> Result<Cholesky<f64, Dyn>> {
        Cholesky::new(self.mass_at(q)).ok_or(Error::SingularMetric)
    }

    /// Check the structural invariants at one configuration: M symmetric
    /// positive definite, mu full row rank, and db nonzero whenever q lies
    /// within `tol.tol_boundary` of the boundary.
    pub fn validate_at(&self, q: &DVector<f64>, tol: &Tolerances) -> Result<()> {
        self.check_dim(q)?;
        let m = self.mass_at(q);
        if m.nrows() != self.dim || m.ncols() != self.dim {
            return Err(Error::Specification(format!(
                "mass matrix has shape {}x{}, expected {}x{}",
                m.nrows(),
                m.ncols(),
                self.dim,
                self.dim
            )));
        }
        let scale = m.amax().max(1.0);
        let asym = (&m - m.transpose()).amax();
        if asym > 1e-10 * scale {
            return Err(Error::SingularMetric);
        }
        if Cholesky::new(m).is_none() {
            return Err(Error::SingularMetric);
        }

        let mu = self.constraints_at(q);
        if mu.nrows() != self.n_constraints || mu.ncols() != self.dim {
            return Err(Error::Specification(format!(
                "constraint matrix has shape {}x{}, expected {}x{}",
                mu.nrows(),
                mu.ncols(),
                self.n_constraints,
                self.dim
            )));
        }
        if self.n_constraints > 0 {
            let rank = row_rank(&mu);
            if rank < self.n_constraints {
                return Err(Error::RankDrop {
                    expected: self.n_constraints,
                    found: rank,
                });
            }
        }

        let b = self.boundary_at(q);
        if !b.is_finite() || !self.potential_at(q).is_finite() {
            return Err(Error::Specification(
                "boundary or potential is non-finite at the evaluated configuration".into(),
            ));
        }
        if b.abs() <= tol.tol_boundary {
            let db = self.boundary_gradient_at(q);
            if db.norm() == 0.0 {
                return Err(Error::DegenerateBoundary);
            }
        }
        Ok(())
    }
}

/// Numerical row rank via singular values of mu, thresholded at
/// `RANK_TOLERANCE` times the largest singular value.
pub(crate) fn row_rank(matrix: &DMatrix<f64>) -> usize {
    if matrix.nrows() == 0 || matrix.ncols() == 0 {
        return 0;
    }
    let svd = matrix.clone().svd(false, false);
    let sigma_max = svd.singular_values.max();
    if sigma_max == 0.0 {
        return 0;
    }
    svd.singular_values
        .iter()
        .filter(|&&s| s > RANK_TOLERANCE * sigma_max)
        .count()
}

/// Builder for [`SystemSpec`]. Mass, constraints, boundary, and boundary
/// gradient are required; derivative closures default to central finite
/// differences with step 1e-6 * max(1, |q|_inf).
pub struct SystemSpecBuilder {
    dim: usize,
    n_constraints: usize,
    mass: Option<MatrixFn>,
    mass_grad: Option<MatrixGradFn>,
    potential: Option<ScalarFn>,
    potential_grad: Option<VectorFn>,
    constraints: Option<MatrixFn>,
    constraints_grad: Option<MatrixGradFn>,
    boundary: Option<ScalarFn>,
    boundary_grad: Option<RowFn>,
}

impl SystemSpecBuilder {
    fn new(dim: usize) -> Self {
        Self {
            dim,
            n_constraints: 0,
            mass: None,
            mass_grad: None,
            potential: None,
            potential_grad: None,
            constraints: None,
            constraints_grad: None,
            boundary: None,
            boundary_grad: None,
        }
    }

    pub fn mass_matrix(mut self, f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static) -> Self {
        self.mass = Some(Arc::new(f));
        self
    }

    /// Constant mass matrix; its derivatives are exactly zero.
    pub fn constant_mass(mut self, m: DMatrix<f64>) -> Self {
        let dim = self.dim;
        let m2 = m.clone();
        self.mass = Some(Arc::new(move |_| m.clone()));
        self.mass_grad = Some(Arc::new(move |_| vec![DMatrix::zeros(m2.nrows(), m2.ncols()); dim]));
        self
    }

    pub fn mass_derivatives(
        mut self,
        f: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.mass_grad = Some(Arc::new(f));
        self
    }

    pub fn potential(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.potential = Some(Arc::new(f));
        self
    }

    pub fn potential_gradient(
        mut self,
        f: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.potential_grad = Some(Arc::new(f));
        self
    }

    /// Constraint one-forms as the m x n matrix function mu(q).
    pub fn constraint_forms(
        mut self,
        m: usize,
        f: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.n_constraints = m;
        self.constraints = Some(Arc::new(f));
        self
    }

    pub fn constraint_derivatives(
        mut self,
        f: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.constraints_grad = Some(Arc::new(f));
        self
    }

    pub fn boundary(mut self, f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static) -> Self {
        self.boundary = Some(Arc::new(f));
        self
    }

    pub fn boundary_gradient(
        mut self,
        f: impl Fn(&DVector<f64>) -> RowDVector<f64> + Send + Sync + 'static,
    ) -> Self {
        self.boundary_grad = Some(Arc::new(f));
        self
    }

    pub fn build(self) -> Result<SystemSpec> {
        let dim = self.dim;
        if dim == 0 {
            return Err(Error::Specification("dimension must be positive".into()));
        }
        let n_constraints = self.n_constraints;
        if n_constraints >= dim {
            return Err(Error::Specification(format!(
                "need 0 <= m < n, got m = {n_constraints}, n = {dim}"
            )));
        }
        let mass = self
            .mass
            .ok_or_else(|| Error::Specification("mass matrix is required".into()))?;
        let boundary = self
            .boundary
            .ok_or_else(|| Error::Specification("boundary function is required".into()))?;

        let potential: ScalarFn = self.potential.unwrap_or_else(|| Arc::new(|_| 0.0));
        let constraints: MatrixFn = self
            .constraints
            .unwrap_or_else(|| Arc::new(move |_| DMatrix::zeros(0, dim)));

        let mass_grad: MatrixGradFn = self.mass_grad.unwrap_or_else(|| {
            let f = mass.clone();
            Arc::new(move |q| fd_matrix_gradient(&f, q))
        });
        let potential_grad: VectorFn = self.potential_grad.unwrap_or_else(|| {
            let f = potential.clone();
            Arc::new(move |q| fd_scalar_gradient(&f, q))
        });
        let constraints_grad: MatrixGradFn = self.constraints_grad.unwrap_or_else(|| {
            let f = constraints.clone();
            Arc::new(move |q| fd_matrix_gradient(&f, q))
        });
        let boundary_grad: RowFn = self.boundary_grad.unwrap_or_else(|| {
            let f = boundary.clone();
            Arc::new(move |q| fd_scalar_gradient(&f, q).transpose())
        });

        Ok(SystemSpec {
            dim,
            n_constraints,
            mass,
            mass_grad,
            potential,
            potential_grad,
            constraints,
            constraints_grad,
            boundary,
            boundary_grad,
        })
    }
}

fn fd_step(q: &DVector<f64>) -> f64 {
    1e-6 * q.amax().max(1.0)
}

fn fd_scalar_gradient(f: &ScalarFn, q: &DVector<f64>) -> DVector<f64> {
    let h = fd_step(q);
    let mut grad = DVector::zeros(q.len());
    let mut qp = q.clone();
    for k in 0..q.len() {
        let orig = qp[k];
        qp[k] = orig + h;
        let fp = f(&qp);
        qp[k] = orig - h;
        let fm = f(&qp);
        qp[k] = orig;
        grad[k] = (fp - fm) / (2.0 * h);
    }
    grad
}

fn fd_matrix_gradient(f: &MatrixFn, q: &DVector<f64>) -> Vec<DMatrix<f64>> {
    let h = fd_step(q);
    let mut out = Vec::with_capacity(q.len());
    let mut qp = q.clone();
    for k in 0..q.len() {
        let orig = qp[k];
        qp[k] = orig + h;
        let fp = f(&qp);
        qp[k] = orig - h;
        let fm = f(&qp);
        qp[k] = orig;
        out.push((fp - fm) / (2.0 * h));
    }
    out
}

/// A point of the Pontryagin bundle with a time stamp: configuration q,
/// velocity v, and momentum covector p, treated as independent coordinates
/// until the equations of motion tie p to the Legendre transform of v.
#[derive(Debug, Clone, PartialEq)]
pub struct PontryaginState {
    pub t: f64,
    pub q: DVector<f64>,
    pub v: DVector<f64>,
    pub p: RowDVector<f64>,
}

impl PontryaginState {
    pub fn new(t: f64, q: DVector<f64>, v: DVector<f64>, p: RowDVector<f64>) -> Self {
        Self { t, q, v, p }
    }

    /// Build a state on the Legendre graph, p = (M(q) v)^T.
    pub fn from_velocity(spec: &SystemSpec, t: f64, q: DVector<f64>, v: DVector<f64>) -> Result<Self> {
        let p = legendre(spec, &q, &v)?;
        Ok(Self { t, q, v, p })
    }

    /// True when every entry of q, v, p and the time stamp are finite.
    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.v.iter().all(|x| x.is_finite())
            && self.p.iter().all(|x| x.is_finite())
    }
}

/// Per-impact residual record kept for diagnostics and output validation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize, PartialEq)]
pub struct ImpactResiduals {
    /// |b(q)| at the impact point.
    pub boundary: f64,
    /// |E_post - E_pre|.
    pub energy: f64,
    /// Norm of the momentum jump component outside the admissible subspace.
    pub jump_subspace: f64,
    /// |mu(q) v_post|_inf.
    pub constraint: f64,
}

/// One resolved elastic impact: time, contact configuration, the states on
/// both sides of the jump, the multipliers on the jump-subspace basis, and
/// the solve residuals.
#[derive(Debug, Clone)]
pub struct ImpactEvent {
    pub t_impact: f64,
    pub q_impact: DVector<f64>,
    pub pre: PontryaginState,
    pub post: PontryaginState,
    /// Coefficients of p_post - p_pre on the orthonormal jump-basis rows.
    pub multipliers: DVector<f64>,
    pub residuals: ImpactResiduals,
}

impl ImpactEvent {
    /// Configuration continuity and boundary membership checks.
    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        if self.pre.t != self.t_impact || self.post.t != self.t_impact {
            return Err(Error::Specification(
                "impact event times are inconsistent".into(),
            ));
        }
        if self.pre.q != self.q_impact || self.post.q != self.q_impact {
            return Err(Error::Specification(
                "impact event configurations are inconsistent".into(),
            ));
        }
        if self.residuals.boundary > tol.tol_boundary {
            return Err(Error::Specification(format!(
                "impact point is off the boundary: |b| = {:.3e}",
                self.residuals.boundary
            )));
        }
        Ok(())
    }
}

/// A hybrid trajectory: smooth sampled arcs separated by impact events.
/// Arc k ends at the time of event k, and arc k+1 starts there.
#[derive(Debug, Clone, Default)]
pub struct Trajectory {
    pub arcs: Vec<Vec<PontryaginState>>,
    pub events: Vec<ImpactEvent>,
}

impl Trajectory {
    /// Times must strictly increase within every arc and never decrease
    /// across arc junctions; junction times must match the event times; the
    /// event count must respect `max_impacts`.
    pub fn validate(&self, max_impacts: usize) -> Result<()> {
        if self.events.len() > max_impacts {
            return Err(Error::ZenoSuspicion {
                count: self.events.len(),
                window: f64::INFINITY,
                limit: max_impacts,
            });
        }
        let mut last_t = f64::NEG_INFINITY;
        for (i, arc) in self.arcs.iter().enumerate() {
            for (j, state) in arc.iter().enumerate() {
                let strict = j > 0;
                if (strict && state.t <= last_t) || (!strict && state.t < last_t) {
                    return Err(Error::Specification(format!(
                        "trajectory times not increasing at arc {i}, sample {j}"
                    )));
                }
                last_t = state.t;
            }
            if i < self.events.len() {
                let te = self.events[i].t_impact;
                if let Some(end) = arc.last() {
                    if (end.t - te).abs() > 1e-12 * te.abs().max(1.0) {
                        return Err(Error::Specification(format!(
                            "arc {i} does not abut event {i}: arc ends at {}, event at {te}",
                            end.t
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    /// Total number of stored samples across all arcs.
    pub fn sample_count(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    /// First state of the first arc, if any.
    pub fn first_state(&self) -> Option<&PontryaginState> {
        self.arcs.first().and_then(|a| a.first())
    }

    /// Last state of the last arc, if any.
    pub fn last_state(&self) -> Option<&PontryaginState> {
        self.arcs.last().and_then(|a| a.last())
    }
}

/// Pairing of a covector with a vector.
pub fn pairing(p: &RowDVector<f64>, v: &DVector<f64>) -> f64 {
    (p * v)[(0, 0)]
}

/// Mechanical Lagrangian L(q, v) = v^T M(q) v / 2 - V(q).
pub fn lagrangian(spec: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    spec.check_dim(q)?;
    spec.check_dim(v)?;
    let m = spec.mass_at(q);
    Ok(0.5 * v.dot(&(&m * v)) - spec.potential_at(q))
}

/// Energy E(q, v, p) = p . v - L(q, v) on the Pontryagin bundle.
pub fn energy(spec: &SystemSpec, state: &PontryaginState) -> Result<f64> {
    spec.check_row_dim(&state.p)?;
    Ok(pairing(&state.p, &state.v) - lagrangian(spec, &state.q, &state.v)?)
}

/// Legendre transform p = dL/dv = (M(q) v)^T.
pub fn legendre(spec: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<RowDVector<f64>> {
    spec.check_dim(q)?;
    spec.check_dim(v)?;
    Ok((spec.mass_at(q) * v).transpose())
}

/// Inverse Legendre transform v = M(q)^{-1} p^T.
pub fn legendre_inv(spec: &SystemSpec, q: &DVector<f64>, p: &RowDVector<f64>) -> Result<DVector<f64>> {
    spec.check_dim(q)?;
    spec.check_row_dim(p)?;
    let chol = spec.mass_cholesky(q)?;
    Ok(chol.solve(&p.transpose()))
}
