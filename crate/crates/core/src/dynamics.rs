//! Smooth-phase dynamics between impacts.
//!
//! The equations of motion in multiplier form are
//!
//! ```text
//! M(q) a = -Mdot(q,v) v + c(q,v) - grad V(q) + mu(q)^T lambda
//! mu(q) a = -(mudot(q,v)) v
//! ```
//!
//! with Mdot = sum_k v_k dM/dq_k, c_i = v^T (dM/dq_i) v / 2, and
//! mudot = sum_k v_k dmu/dq_k. The second block is the once-differentiated
//! velocity constraint, which turns the differential-algebraic system into
//! a saddle problem solvable by a Schur complement on the mass matrix.
//!
//! Stepping is classical RK4 on (q, v) followed by an M-orthogonal velocity
//! projection onto the distribution, which keeps the constraint residual at
//! rounding level instead of letting it drift.

use nalgebra::{Cholesky, DVector};

use crate::constraints::project_velocity;
use crate::error::{Error, Result};
use crate::model::{energy, legendre, PontryaginState, SystemSpec, Tolerances};

/// Residuals checked on every accepted step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResiduals {
    /// |mu(q) v|_inf of the accepted state.
    pub constraint: f64,
    /// |p - (M v)^T|_inf of the accepted state.
    pub legendre: f64,
}

/// One accepted smooth step: the new state, the constraint-force
/// coefficients at the pre-step state, the energy of the new state, and the
/// accepted residuals.
#[derive(Debug, Clone)]
pub struct SmoothStepResult {
    pub state: PontryaginState,
    pub multipliers: DVector<f64>,
    pub energy: f64,
    pub residuals: StepResiduals,
}

/// Acceleration and constraint-force coefficients at (q, v).
///
/// Solves the saddle system by eliminating a: with f the force covector and
/// g the hidden-constraint right-hand side,
/// (mu M^{-1} mu^T) lambda = g - mu M^{-1} f and M a = f + mu^T lambda.
pub fn constrained_acceleration(
    spec: &SystemSpec,
    q: &DVector<f64>,
    v: &DVector<f64>,
) -> Result<(DVector<f64>, DVector<f64>)> {
    spec.check_dim(q)?;
    spec.check_dim(v)?;
    let n = spec.dim();
    let m = spec.constraint_count();

    let chol_m = spec.mass_cholesky(q)?;
    let dm = spec.mass_gradient_at(q);
    // f = -Mdot v + c - grad V.
    let mut f = -spec.potential_gradient_at(q);
    for k in 0..n {
        let dmv = &dm[k] * v;
        f[k] += 0.5 * v.dot(&dmv);
        f -= v[k] * &dmv;
    }

    if m == 0 {
        let a = chol_m.solve(&f);
        return Ok((a, DVector::zeros(0)));
    }

    let mu = spec.constraints_at(q);
    let dmu = spec.constraints_gradient_at(q);
    // g = -(sum_k v_k dmu/dq_k) v.
    let mut g = DVector::zeros(m);
    for k in 0..n {
        g -= v[k] * (&dmu[k] * v);
    }

    let minv_mut = chol_m.solve(&mu.transpose());
    let minv_f = chol_m.solve(&f);
    let gram = &mu * &minv_mut;
    let chol_g = Cholesky::new(gram).ok_or(Error::RankDrop {
        expected: m,
        found: crate::model::row_rank(&mu),
    })?;
    let lambda = chol_g.solve(&(g - &mu * &minv_f));
    let a = minv_f + minv_mut * &lambda;
    Ok((a, lambda))
}

/// One RK4 step of length h from s, with post-step velocity projection and
/// momentum refresh on the Legendre graph.
pub fn step(spec: &SystemSpec, s: &PontryaginState, h: f64, tol: &Tolerances) -> Result<SmoothStepResult> {
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::InvalidStepSize { h });
    }

    let (k1_a, lambda) = constrained_acceleration(spec, &s.q, &s.v)?;
    let k1_q = s.v.clone();

    let q2 = &s.q + 0.5 * h * &k1_q;
    let v2 = &s.v + 0.5 * h * &k1_a;
    let (k2_a, _) = constrained_acceleration(spec, &q2, &v2)?;
    let k2_q = v2;

    let q3 = &s.q + 0.5 * h * &k2_q;
    let v3 = &s.v + 0.5 * h * &k2_a;
    let (k3_a, _) = constrained_acceleration(spec, &q3, &v3)?;
    let k3_q = v3;

    let q4 = &s.q + h * &k3_q;
    let v4 = &s.v + h * &k3_a;
    let (k4_a, _) = constrained_acceleration(spec, &q4, &v4)?;
    let k4_q = v4;

    let q_new = &s.q + (h / 6.0) * (k1_q + 2.0 * k2_q + 2.0 * k3_q + k4_q);
    let v_raw = &s.v + (h / 6.0) * (k1_a + 2.0 * k2_a + 2.0 * k3_a + k4_a);

    let t_new = s.t + h;
    if q_new.iter().chain(v_raw.iter()).any(|x| !x.is_finite()) {
        return Err(Error::BlowUp { t: t_new });
    }

    let v_new = project_velocity(spec, &q_new, &v_raw)?;
    let p_new = legendre(spec, &q_new, &v_new)?;
    let state = PontryaginState::new(t_new, q_new, v_new, p_new);
    if !state.is_finite() {
        return Err(Error::BlowUp { t: t_new });
    }

    let residuals = StepResiduals {
        constraint: constraint_residual(spec, &state),
        legendre: legendre_residual(spec, &state)?,
    };
    if residuals.constraint > 10.0 * tol.tol_constraint {
        return Err(Error::StepRejected {
            t: t_new,
            residual: residuals.constraint,
            tolerance: tol.tol_constraint,
        });
    }
    if residuals.legendre > 10.0 * tol.tol_legendre {
        return Err(Error::StepRejected {
            t: t_new,
            residual: residuals.legendre,
            tolerance: tol.tol_legendre,
        });
    }

    let energy = energy(spec, &state)?;
    Ok(SmoothStepResult {
        state,
        multipliers: lambda,
        energy,
        residuals,
    })
}

/// |mu(q) v|_inf for a state (0 for unconstrained systems).
pub fn constraint_residual(spec: &SystemSpec, s: &PontryaginState) -> f64 {
    if spec.constraint_count() == 0 {
        return 0.0;
    }
    (spec.constraints_at(&s.q) * &s.v).amax()
}

/// |p - (M(q) v)^T|_inf for a state.
pub fn legendre_residual(spec: &SystemSpec, s: &PontryaginState) -> Result<f64> {
    Ok((&s.p - legendre(spec, &s.q, &s.v)?).amax())
}

/// Max |E(t) - E(t0)| over a smooth arc. Energy is monitored, never
/// enforced; the equations conserve it on their own.
pub fn energy_monitor(spec: &SystemSpec, arc: &[PontryaginState]) -> Result<f64> {
    let first = arc
        .first()
        .ok_or_else(|| Error::Specification("energy monitor needs a nonempty arc".into()))?;
    let e0 = energy(spec, first)?;
    let mut drift: f64 = 0.0;
    for s in arc {
        drift = drift.max((energy(spec, s)? - e0).abs());
    }
    Ok(drift)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::distribution_at;
    use crate::model::SystemSpec;
    use crate::scenarios;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, RowDVector};
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn free_particle(dim: usize) -> SystemSpec {
        SystemSpec::builder(dim)
            .constant_mass(DMatrix::identity(dim, dim))
            .boundary(|q: &DVector<f64>| q[0] - 100.0)
            .boundary_gradient(move |q: &DVector<f64>| {
                let mut db = RowDVector::zeros(q.len());
                db[0] = 1.0;
                db
            })
            .build()
            .unwrap()
    }

    /// Disk velocity on the distribution from the two free components.
    fn disk_velocity(r: f64, phi: f64, v_theta: f64, v_phi: f64) -> DVector<f64> {
        DVector::from_vec(vec![
            r * v_theta * phi.cos(),
            r * v_theta * phi.sin(),
            v_theta,
            v_phi,
        ])
    }

    #[test]
    fn free_particle_zero_acceleration() {
        let spec = free_particle(3);
        let q = DVector::zeros(3);
        let v = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (a, lambda) = constrained_acceleration(&spec, &q, &v).unwrap();
        assert!(a.amax() <= 1e-15);
        assert_eq!(lambda.len(), 0);
    }

    #[test]
    fn disk_acceleration_closed_form() {
        // Differentiating v_x = R v_theta cos(phi), v_y = R v_theta sin(phi)
        // along the flow with constant v_theta, v_phi gives
        // a = (-R v_theta v_phi sin(phi), R v_theta v_phi cos(phi), 0, 0).
        let r = 0.8;
        let disk = scenarios::disk_scenario(1.3, 0.7, 2.1, r, 10.0).unwrap();
        let mut rng = StdRng::seed_from_u64(41);
        for _ in 0..50 {
            let phi = rng.random_range(-3.0..3.0);
            let q = DVector::from_vec(vec![
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                phi,
            ]);
            let v_theta = rng.random_range(-2.0..2.0);
            let v_phi = rng.random_range(-2.0..2.0);
            let v = disk_velocity(r, phi, v_theta, v_phi);
            let (a, _) = constrained_acceleration(&disk.spec, &q, &v).unwrap();
            let expected = DVector::from_vec(vec![
                -r * v_theta * v_phi * phi.sin(),
                r * v_theta * v_phi * phi.cos(),
                0.0,
                0.0,
            ]);
            assert!((a - expected).amax() <= 1e-10);
        }
    }

    #[test]
    fn disk_straight_rolling_has_zero_acceleration() {
        let disk = scenarios::disk_scenario(1.0, 1.0, 1.0, 1.0, 10.0).unwrap();
        let q = DVector::from_vec(vec![0.2, 0.1, 0.0, 0.7]);
        let v = disk_velocity(1.0, 0.7, 1.5, 0.0);
        let (a, _) = constrained_acceleration(&disk.spec, &q, &v).unwrap();
        assert!(a.amax() <= 1e-12);
    }

    #[test]
    fn saddle_system_residuals_vanish() {
        // Both blocks of the saddle system hold at the returned (a, lambda).
        let disk = scenarios::disk_scenario(2.0, 3.0, 4.0, 1.1, 10.0).unwrap();
        let spec = &disk.spec;
        let q = DVector::from_vec(vec![0.5, -0.2, 1.0, 0.9]);
        let v = disk_velocity(1.1, 0.9, 1.2, -0.6);
        let (a, lambda) = constrained_acceleration(spec, &q, &v).unwrap();

        let mm = spec.mass_at(&q);
        let dm = spec.mass_gradient_at(&q);
        let mu = spec.constraints_at(&q);
        let dmu = spec.constraints_gradient_at(&q);
        let mut f = -spec.potential_gradient_at(&q);
        for k in 0..4 {
            let dmv = &dm[k] * &v;
            f[k] += 0.5 * v.dot(&dmv);
            f -= v[k] * &dmv;
        }
        let block1 = &mm * &a - &f - mu.transpose() * &lambda;
        assert!(block1.amax() <= 1e-10);
        let mut g = DVector::zeros(2);
        for k in 0..4 {
            g -= v[k] * (&dmu[k] * &v);
        }
        let block2 = &mu * &a - g;
        assert!(block2.amax() <= 1e-10);
    }

    #[test]
    fn constraint_force_lies_in_annihilator() {
        let disk = scenarios::disk_scenario(1.0, 2.0, 0.5, 0.9, 10.0).unwrap();
        let q = DVector::from_vec(vec![0.0, 0.0, 0.0, 1.2]);
        let v = disk_velocity(0.9, 1.2, 0.8, 0.3);
        let (_, lambda) = constrained_acceleration(&disk.spec, &q, &v).unwrap();
        let mu = disk.spec.constraints_at(&q);
        let force = mu.transpose() * lambda;
        let basis = distribution_at(&disk.spec, &q).unwrap();
        let pairing = force.transpose() * basis.tangent_basis;
        assert!(pairing.amax() <= 1e-12);
    }

    #[test]
    fn free_particle_step_is_exact_linear_flow() {
        let spec = free_particle(2);
        let tol = Tolerances::default();
        let v = DVector::from_vec(vec![1.5, -0.25]);
        let s0 = PontryaginState::from_velocity(&spec, 0.0, DVector::zeros(2), v.clone()).unwrap();
        let h = 0.1;
        let result = step(&spec, &s0, h, &tol).unwrap();
        assert!((&result.state.q - h * &v).amax() <= 1e-15);
        assert!((&result.state.v - &v).amax() <= 1e-15);
        let e0 = energy(&spec, &s0).unwrap();
        assert_abs_diff_eq!(result.energy, e0, epsilon = 1e-14);
    }

    #[test]
    fn nonpositive_step_sizes_rejected() {
        let spec = free_particle(1);
        let tol = Tolerances::default();
        let s = PontryaginState::from_velocity(&spec, 0.0, DVector::zeros(1), DVector::zeros(1))
            .unwrap();
        assert!(matches!(
            step(&spec, &s, 0.0, &tol),
            Err(Error::InvalidStepSize { .. })
        ));
        assert!(matches!(
            step(&spec, &s, -1e-3, &tol),
            Err(Error::InvalidStepSize { .. })
        ));
    }

    #[test]
    fn disk_circular_rolling_returns_home() {
        // With unit parameters and v_theta = v_phi = 1 from the origin the
        // contact point traces x(t) = sin t, y(t) = 1 - cos t.
        let disk = scenarios::disk_scenario(1.0, 1.0, 1.0, 1.0, 10.0).unwrap();
        let tol = Tolerances::default();
        let h = 1e-3;
        let v0 = disk_velocity(1.0, 0.0, 1.0, 1.0);
        let mut s = PontryaginState::from_velocity(&disk.spec, 0.0, DVector::zeros(4), v0).unwrap();
        let e0 = energy(&disk.spec, &s).unwrap();
        let steps = (2.0 * std::f64::consts::PI / h).round() as usize;
        let mut max_constraint: f64 = 0.0;
        let mut max_energy: f64 = 0.0;
        for _ in 0..steps {
            let r = step(&disk.spec, &s, h, &tol).unwrap();
            max_constraint = max_constraint.max(r.residuals.constraint);
            max_energy = max_energy.max((r.energy - e0).abs());
            s = r.state;
        }
        let t = s.t;
        assert!((s.q[0] - t.sin()).abs() <= 1e-9);
        assert!((s.q[1] - (1.0 - t.cos())).abs() <= 1e-9);
        assert!((s.q[2] - t).abs() <= 1e-9);
        assert!((s.q[3] - t).abs() <= 1e-9);
        assert!(max_constraint <= 1e-12);
        assert!(max_energy <= 1e-10);
    }

    #[test]
    fn unconstrained_step_matches_plain_rk4() {
        // Harmonic potential, identity mass: compare one projected step
        // against a hand-rolled RK4 on (q, v).
        let spec = SystemSpec::builder(2)
            .constant_mass(DMatrix::identity(2, 2))
            .potential(|q: &DVector<f64>| 0.5 * q.norm_squared())
            .potential_gradient(|q: &DVector<f64>| q.clone())
            .boundary(|q: &DVector<f64>| q[0] - 100.0)
            .boundary_gradient(|_q: &DVector<f64>| RowDVector::from_vec(vec![1.0, 0.0]))
            .build()
            .unwrap();
        let tol = Tolerances::default();
        let q0 = DVector::from_vec(vec![1.0, 0.3]);
        let v0 = DVector::from_vec(vec![0.0, -0.4]);
        let s0 = PontryaginState::from_velocity(&spec, 0.0, q0.clone(), v0.clone()).unwrap();
        let h = 0.05;
        let result = step(&spec, &s0, h, &tol).unwrap();

        let acc = |q: &DVector<f64>| -q.clone();
        let k1q = v0.clone();
        let k1v = acc(&q0);
        let k2q = &v0 + 0.5 * h * &k1v;
        let k2v = acc(&(&q0 + 0.5 * h * &k1q));
        let k3q = &v0 + 0.5 * h * &k2v;
        let k3v = acc(&(&q0 + 0.5 * h * &k2q));
        let k4q = &v0 + h * &k3v;
        let k4v = acc(&(&q0 + h * &k3q));
        let q_ref = &q0 + (h / 6.0) * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        let v_ref = &v0 + (h / 6.0) * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);

        assert!((&result.state.q - q_ref).amax() <= 1e-13);
        assert!((&result.state.v - v_ref).amax() <= 1e-13);
    }

    #[test]
    fn accepted_steps_satisfy_state_invariants() {
        let disk = scenarios::disk_scenario(1.4, 0.6, 1.7, 1.2, 10.0).unwrap();
        let tol = Tolerances::default();
        let v0 = disk_velocity(1.2, 0.4, 1.1, 0.9);
        let q0 = DVector::from_vec(vec![0.0, 0.0, 0.0, 0.4]);
        let mut s = PontryaginState::from_velocity(&disk.spec, 0.0, q0, v0).unwrap();
        for _ in 0..200 {
            let r = step(&disk.spec, &s, 5e-3, &tol).unwrap();
            assert!(r.residuals.constraint <= tol.tol_constraint);
            assert!(r.residuals.legendre <= tol.tol_legendre);
            s = r.state;
        }
    }

    #[test]
    fn energy_monitor_constant_state_is_zero() {
        let spec = free_particle(1);
        let s = PontryaginState::from_velocity(
            &spec,
            0.0,
            DVector::zeros(1),
            DVector::from_vec(vec![2.0]),
        )
        .unwrap();
        let arc = vec![s.clone(), s.clone(), s];
        assert_eq!(energy_monitor(&spec, &arc).unwrap(), 0.0);
    }

    #[test]
    fn energy_monitor_rejects_empty_arc() {
        let spec = free_particle(1);
        assert!(energy_monitor(&spec, &[]).is_err());
    }
}
