//! Hamiltonian-side dynamics and the Lagrangian/Hamiltonian cross-check.
//!
//! For the mechanical systems handled here the Legendre transform is a
//! global diffeomorphism, H(q, p) = p M(q)^{-1} p^T / 2 + V(q), and the
//! constrained Hamilton equations in multiplier form read
//!
//! ```text
//! qdot = M(q)^{-1} p^T
//! pdot = -dH/dq + lambda^T mu(q)
//! ```
//!
//! with lambda fixed by d/dt (mu(q) qdot) = 0. The right-hand side below is
//! written directly in (q, p) variables rather than routed through the
//! Lagrangian solver, so agreement between the two integrations is a real
//! consistency check and not a tautology.

use nalgebra::{Cholesky, DVector, RowDVector};

use crate::constraints::project_velocity;
use crate::error::{Error, Result};
use crate::model::{legendre, PontryaginState, SystemSpec, Tolerances, Trajectory};

/// A cotangent-bundle state with a time stamp.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianState {
    pub t: f64,
    pub q: DVector<f64>,
    pub p: RowDVector<f64>,
}

impl HamiltonianState {
    pub fn new(t: f64, q: DVector<f64>, p: RowDVector<f64>) -> Self {
        Self { t, q, p }
    }

    /// Forget the velocity slot of a Pontryagin state.
    pub fn from_pontryagin(s: &PontryaginState) -> Self {
        Self {
            t: s.t,
            q: s.q.clone(),
            p: s.p.clone(),
        }
    }

    /// Rebuild the full state with v = M(q)^{-1} p^T.
    pub fn to_pontryagin(&self, spec: &SystemSpec) -> Result<PontryaginState> {
        let v = crate::model::legendre_inv(spec, &self.q, &self.p)?;
        Ok(PontryaginState::new(self.t, self.q.clone(), v, self.p.clone()))
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.q.iter().all(|x| x.is_finite())
            && self.p.iter().all(|x| x.is_finite())
    }
}

/// H(q, p) = p M(q)^{-1} p^T / 2 + V(q).
pub fn hamiltonian(spec: &SystemSpec, q: &DVector<f64>, p: &RowDVector<f64>) -> Result<f64> {
    spec.check_dim(q)?;
    spec.check_row_dim(p)?;
    let chol = spec.mass_cholesky(q)?;
    let v = chol.solve(&p.transpose());
    Ok(0.5 * crate::model::pairing(p, &v) + spec.potential_at(q))
}

/// (qdot, pdot) of the constrained Hamilton equations at (q, p), plus the
/// multipliers.
fn hamiltonian_rhs(
    spec: &SystemSpec,
    q: &DVector<f64>,
    p: &RowDVector<f64>,
) -> Result<(DVector<f64>, RowDVector<f64>, DVector<f64>)> {
    let n = spec.dim();
    let m = spec.constraint_count();
    let chol_m = spec.mass_cholesky(q)?;
    let v = chol_m.solve(&p.transpose());

    let dm = spec.mass_gradient_at(q);
    // dH/dq_i = -v^T (dM/dq_i) v / 2 + dV/dq_i, with v = M^{-1} p^T.
    let mut dh_dq = spec.potential_gradient_at(q);
    for i in 0..n {
        dh_dq[i] -= 0.5 * v.dot(&(&dm[i] * &v));
    }

    if m == 0 {
        return Ok((v, (-&dh_dq).transpose(), DVector::zeros(0)));
    }

    let mu = spec.constraints_at(q);
    let dmu = spec.constraints_gradient_at(q);
    // Mdot v and mudot v along qdot = v.
    let mut mdot_v = DVector::zeros(n);
    let mut mudot_v = DVector::zeros(m);
    for k in 0..n {
        mdot_v += v[k] * (&dm[k] * &v);
        mudot_v += v[k] * (&dmu[k] * &v);
    }

    // d/dt (mu v) = 0 with vdot = M^{-1}(pdot^T - Mdot v) yields
    // (mu M^{-1} mu^T) lambda = mu M^{-1} (dH/dq + Mdot v) - mudot v.
    let minv_mut = chol_m.solve(&mu.transpose());
    let gram = &mu * &minv_mut;
    let chol_g = Cholesky::new(gram).ok_or(Error::RankDrop {
        expected: m,
        found: crate::model::row_rank(&mu),
    })?;
    let rhs = &mu * chol_m.solve(&(&dh_dq + &mdot_v)) - mudot_v;
    let lambda = chol_g.solve(&rhs);
    let pdot = (mu.transpose() * &lambda - dh_dq).transpose();
    Ok((v, pdot, lambda))
}

/// One RK4 step of the constrained Hamilton equations, followed by a
/// momentum projection keeping M^{-1} p^T on the distribution.
pub fn hamiltonian_step(
    spec: &SystemSpec,
    s: &HamiltonianState,
    h: f64,
    tol: &Tolerances,
) -> Result<HamiltonianState> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidStepSize { h });
    }

    let (k1_q, k1_p, _) = hamiltonian_rhs(spec, &s.q, &s.p)?;
    let (k2_q, k2_p, _) = hamiltonian_rhs(spec, &(&s.q + 0.5 * h * &k1_q), &(&s.p + 0.5 * h * &k1_p))?;
    let (k3_q, k3_p, _) = hamiltonian_rhs(spec, &(&s.q + 0.5 * h * &k2_q), &(&s.p + 0.5 * h * &k2_p))?;
    let (k4_q, k4_p, _) = hamiltonian_rhs(spec, &(&s.q + h * &k3_q), &(&s.p + h * &k3_p))?;

    let q_new = &s.q + (h / 6.0) * (k1_q + 2.0 * k2_q + 2.0 * k3_q + k4_q);
    let p_raw = &s.p + (h / 6.0) * (k1_p + 2.0 * k2_p + 2.0 * k3_p + k4_p);

    let t_new = s.t + h;
    if q_new.iter().chain(p_raw.iter()).any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { t: t_new });
    }

    // Momentum projection through the metric: raise, project, lower.
    let chol = spec.mass_cholesky(&q_new)?;
    let v_raw = chol.solve(&p_raw.transpose());
    let v_new = project_velocity(spec, &q_new, &v_raw)?;
    let p_new = legendre(spec, &q_new, &v_new)?;

    let state = HamiltonianState::new(t_new, q_new, p_new);
    if !state.is_finite() {
        return Err(Error::BlowUp { t: t_new });
    }
    let residual = constraint_residual_h(spec, &state)?;
    if residual > 10.0 * tol.tol_constraint {
        return Err(Error::StepRejected {
            t: t_new,
            residual,
            tolerance: tol.tol_constraint,
        });
    }
    Ok(state)
}

/// |mu(q) M(q)^{-1} p^T|_inf, the Hamiltonian-side constraint residual.
pub fn constraint_residual_h(spec: &SystemSpec, s: &HamiltonianState) -> Result<f64> {
    if spec.constraint_count() == 0 {
        return Ok(0.0);
    }
    let chol = spec.mass_cholesky(&s.q)?;
    let v = chol.solve(&s.p.transpose());
    Ok((spec.constraints_at(&s.q) * v).amax())
}

/// Max over paired sample times of |q_L - q_H|_inf + |p_L - p_H|_inf.
///
/// The two trajectories must be structurally identical: same impact count,
/// same samples per arc, sample times agreeing to rounding. Anything else
/// is a structural mismatch, reported rather than absorbed into the
/// deviation.
pub fn equivalence_check(
    _spec: &SystemSpec,
    traj_l: &Trajectory,
    traj_h: &Trajectory,
) -> Result<f64> {
    if traj_l.events.len() != traj_h.events.len() {
        return Err(Error::StructuralMismatch {
            reason: format!(
                "impact counts differ: {} on the Lagrangian side, {} on the Hamiltonian side",
                traj_l.events.len(),
                traj_h.events.len()
            ),
        });
    }
    if traj_l.arcs.len() != traj_h.arcs.len() {
        return Err(Error::StructuralMismatch {
            reason: format!(
                "arc counts differ: {} vs {}",
                traj_l.arcs.len(),
                traj_h.arcs.len()
            ),
        });
    }
    let mut deviation: f64 = 0.0;
    for (ai, (arc_l, arc_h)) in traj_l.arcs.iter().zip(&traj_h.arcs).enumerate() {
        if arc_l.len() != arc_h.len() {
            return Err(Error::StructuralMismatch {
                reason: format!(
                    "arc {ai} sample counts differ: {} vs {}",
                    arc_l.len(),
                    arc_h.len()
                ),
            });
        }
        for (sl, sh) in arc_l.iter().zip(arc_h) {
            if (sl.t - sh.t).abs() > 1e-9 * sl.t.abs().max(1.0) {
                return Err(Error::StructuralMismatch {
                    reason: format!("sample times diverge: {} vs {}", sl.t, sh.t),
                });
            }
            deviation = deviation.max((&sl.q - &sh.q).amax() + (&sl.p - &sh.p).amax());
        }
    }
    Ok(deviation)
}
