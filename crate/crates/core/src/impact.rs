//! Boundary-crossing detection and elastic-impact resolution.
//!
//! An impact happens at a boundary point with outward velocity. The
//! post-impact momentum differs from the pre-impact momentum by a covector
//! in the jump space spanned by db(q) and the constraint rows, subject to
//! three conditions: the post velocity is the metric raise of the post
//! momentum, it satisfies the velocity constraints, and energy is
//! conserved. Within the jump space exactly one direction w has its raise
//! inside the distribution (transversality), so the admissible posts form
//! a one-parameter family p(s) = p_base + s w and the energy condition is
//! a scalar quadratic in s: one root is the trivial no-jump solution, the
//! other the reflection.

use nalgebra::{Cholesky, DVector, RowDVector};

use crate::constraints::{impact_subspaces, project_velocity, rowspace_nullspace_split};
use crate::dynamics::step;
use crate::error::{Error, Result};
use crate::model::{
    energy, legendre, pairing, ImpactEvent, ImpactResiduals, PontryaginState, SystemSpec,
    Tolerances,
};

/// Boundary proximity and normal speed of a candidate impact state.
#[derive(Debug, Clone)]
pub struct GuardEvaluation {
    pub q: DVector<f64>,
    pub b_value: f64,
    /// db(q) . v, positive when the motion points out of the chart.
    pub normal_speed: f64,
}

impl GuardEvaluation {
    pub fn evaluate(spec: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<Self> {
        spec.check_dim(q)?;
        spec.check_dim(v)?;
        let db = spec.boundary_gradient_at(q);
        Ok(Self {
            q: q.clone(),
            b_value: spec.boundary_at(q),
            normal_speed: pairing(&db, v),
        })
    }

    /// The guard is active on boundary points with outward velocity.
    pub fn is_active(&self, tol: &Tolerances) -> bool {
        self.b_value.abs() <= tol.tol_boundary && self.normal_speed > 0.0
    }
}

/// db(q) . v scaled by |db||v|; zero when either factor vanishes. Used for
/// the grazing decision so that the threshold is unit-free.
pub fn normalized_normal_speed(spec: &SystemSpec, q: &DVector<f64>, v: &DVector<f64>) -> Result<f64> {
    spec.check_dim(q)?;
    spec.check_dim(v)?;
    let db = spec.boundary_gradient_at(q);
    let scale = db.norm() * v.norm();
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok(pairing(&db, v) / scale)
}

/// Locate the boundary crossing bracketed by two consecutive integrator
/// states, re-integrating trial sub-steps from `s_before` with the smooth
/// Lagrangian step map.
pub fn locate_crossing(
    spec: &SystemSpec,
    s_before: &PontryaginState,
    s_after: &PontryaginState,
    tol_t: f64,
    tol: &Tolerances,
) -> Result<(f64, PontryaginState)> {
    locate_crossing_with(spec, s_before, s_after, tol_t, tol, &|s, dt| {
        Ok(step(spec, s, dt, tol)?.state)
    })
}

/// Bisection on the sub-step length, generic over the step map so the
/// Hamiltonian integrator localizes events with its own dynamics.
///
/// The returned state is integrated to the upper bisection bound (first
/// known non-interior time), its configuration clamped onto the boundary by
/// one Newton correction along db, and its velocity re-projected onto the
/// distribution there.
pub fn locate_crossing_with<F>(
    spec: &SystemSpec,
    s_before: &PontryaginState,
    s_after: &PontryaginState,
    tol_t: f64,
    tol: &Tolerances,
    stepper: &F,
) -> Result<(f64, PontryaginState)>
where
    F: Fn(&PontryaginState, f64) -> Result<PontryaginState>,
{
    let h = s_after.t - s_before.t;
    if h <= 0.0 || !h.is_finite() {
        return Err(Error::EventLocalization {
            reason: format!("bracket has nonpositive width {h}"),
        });
    }
    let b_lo = spec.boundary_at(&s_before.q);
    let b_hi = spec.boundary_at(&s_after.q);
    if b_lo >= 0.0 || b_hi < 0.0 {
        return Err(Error::EventLocalization {
            reason: format!(
                "no boundary sign change bracketed by the step: b = {b_lo:.3e} .. {b_hi:.3e}"
            ),
        });
    }

    let mut lo = 0.0_f64;
    let mut hi = h;
    let mut s_hi = s_after.clone();
    let mut iterations = 0usize;
    // Bisect to a quarter of the requested tolerance so two independent
    // localizations of the same event stay within tol_t of each other.
    while hi - lo > 0.25 * tol_t {
        iterations += 1;
        if iterations > 128 {
            return Err(Error::EventLocalization {
                reason: format!(
                    "bisection did not converge within 128 iterations (bracket width {:.3e})",
                    hi - lo
                ),
            });
        }
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        let s_mid = stepper(s_before, mid)?;
        if spec.boundary_at(&s_mid.q) >= 0.0 {
            hi = mid;
            s_hi = s_mid;
        } else {
            lo = mid;
        }
    }

    let t_star = s_before.t + hi;
    let mut q = s_hi.q.clone();
    let b = spec.boundary_at(&q);
    let db = spec.boundary_gradient_at(&q);
    let denom = db.norm_squared();
    if denom == 0.0 {
        return Err(Error::DegenerateBoundary);
    }
    q -= db.transpose() * (b / denom);
    let b_clamped = spec.boundary_at(&q);
    if b_clamped.abs() > tol.tol_boundary {
        return Err(Error::EventLocalization {
            reason: format!(
                "boundary residual {:.3e} after Newton clamp exceeds tolerance {:.3e}",
                b_clamped.abs(),
                tol.tol_boundary
            ),
        });
    }
    let v = project_velocity(spec, &q, &s_hi.v)?;
    let p = legendre(spec, &q, &v)?;
    Ok((t_star, PontryaginState::new(t_star, q, v, p)))
}

/// Resolve one elastic impact at a boundary state with outward velocity.
///
/// The jump direction w is the unique (up to scale) covector in the jump
/// space whose metric raise satisfies the velocity constraints; the jump
/// size solves the energy quadratic along p_base + s w, and the reflecting
/// root is selected by demanding an inward post velocity and a genuinely
/// nonzero jump.
pub fn resolve_impact(spec: &SystemSpec, s_pre: &PontryaginState, tol: &Tolerances) -> Result<ImpactEvent> {
    spec.check_dim(&s_pre.q)?;
    spec.check_dim(&s_pre.v)?;
    spec.check_row_dim(&s_pre.p)?;

    let b = spec.boundary_at(&s_pre.q);
    if b.abs() > tol.tol_boundary {
        return Err(Error::ImpactInfeasible {
            t: s_pre.t,
            reason: format!(
                "pre-impact configuration is off the boundary: |b| = {:.3e}",
                b.abs()
            ),
        });
    }
    let normalized = normalized_normal_speed(spec, &s_pre.q, &s_pre.v)?;
    if normalized <= tol.tol_graze {
        return Err(Error::GrazingImpact {
            t: s_pre.t,
            speed: normalized,
        });
    }

    let sub = impact_subspaces(spec, &s_pre.q)?;
    let w_basis = &sub.jump_basis;
    let k = w_basis.nrows();
    let chol_m = spec.mass_cholesky(&s_pre.q)?;
    let minv_wt = chol_m.solve(&w_basis.transpose());
    let m_constraints = spec.constraint_count();

    // Coefficients on the jump-basis rows: a particular part restoring
    // mu v = 0 exactly (zero for on-constraint input) plus the span of the
    // single reflecting direction d.
    let (c_part, d) = if m_constraints == 0 {
        (DVector::zeros(k), DVector::from_element(k, 1.0))
    } else {
        let mu = spec.constraints_at(&s_pre.q);
        let a = &mu * &minv_wt;
        let (_, null_basis) = rowspace_nullspace_split(&a);
        if null_basis.ncols() != 1 {
            return Err(Error::ImpactInfeasible {
                t: s_pre.t,
                reason: format!(
                    "jump space admits {} reflecting directions, expected exactly 1",
                    null_basis.ncols()
                ),
            });
        }
        let d = null_basis.column(0).into_owned();
        let gram = &a * a.transpose();
        let chol_a = Cholesky::new(gram).ok_or(Error::RankDrop {
            expected: m_constraints,
            found: crate::model::row_rank(&mu),
        })?;
        let rhs = -(&mu * &s_pre.v);
        let c_part = a.transpose() * chol_a.solve(&rhs);
        (c_part, d)
    };

    let w: RowDVector<f64> = (w_basis.transpose() * &d).transpose();
    let p_base: RowDVector<f64> = &s_pre.p + (w_basis.transpose() * &c_part).transpose();
    let v_base = chol_m.solve(&p_base.transpose());
    let v_w = chol_m.solve(&w.transpose());

    let e_pre = energy(spec, s_pre)?;
    let a2 = 0.5 * pairing(&w, &v_w);
    let a1 = pairing(&w, &v_base);
    let a0 = 0.5 * pairing(&p_base, &v_base) + spec.potential_at(&s_pre.q) - e_pre;
    if a2 <= 0.0 {
        return Err(Error::ImpactInfeasible {
            t: s_pre.t,
            reason: "jump direction has nonpositive kinetic norm".into(),
        });
    }
    let disc = a1 * a1 - 4.0 * a2 * a0;
    if disc < 0.0 {
        return Err(Error::ImpactInfeasible {
            t: s_pre.t,
            reason: "energy condition has no real root along the jump direction".into(),
        });
    }
    let sqrt_disc = disc.sqrt();
    let sign = if a1 >= 0.0 { 1.0 } else { -1.0 };
    let qq = -0.5 * (a1 + sign * sqrt_disc);
    let s_big = qq / a2;
    let s_small = if qq != 0.0 { a0 / qq } else { 0.0 };

    let db = &sub.boundary_annihilator;
    let p_scale = s_pre.p.amax().max(1.0);
    let admissible = |s: f64| -> Option<(RowDVector<f64>, DVector<f64>)> {
        let p_post = &p_base + s * &w;
        let v_post = chol_m.solve(&p_post.transpose());
        let jump = (&p_post - &s_pre.p).amax();
        if pairing(db, &v_post) < 0.0 && jump > tol.tol_impact * p_scale {
            Some((p_post, v_post))
        } else {
            None
        }
    };
    // Preference for the root away from zero, which is the reflection
    // continuous with the orthogonal-incidence solution; the near-zero root
    // is the excluded trivial branch.
    let (p_post, v_post) = admissible(s_big)
        .or_else(|| admissible(s_small))
        .ok_or_else(|| Error::ImpactInfeasible {
            t: s_pre.t,
            reason: "no nontrivial root with inward post-impact velocity".into(),
        })?;

    let post = PontryaginState::new(s_pre.t, s_pre.q.clone(), v_post, p_post);
    let e_post = energy(spec, &post)?;
    let delta_p = &post.p - &s_pre.p;
    let multipliers = w_basis * delta_p.transpose();
    let reconstructed: RowDVector<f64> = (w_basis.transpose() * &multipliers).transpose();
    let constraint = if m_constraints == 0 {
        0.0
    } else {
        (spec.constraints_at(&post.q) * &post.v).amax()
    };
    let residuals = ImpactResiduals {
        boundary: b.abs(),
        energy: (e_post - e_pre).abs(),
        jump_subspace: (delta_p - reconstructed).amax(),
        constraint,
    };
    if residuals.energy > tol.tol_impact * e_pre.abs().max(1.0) {
        return Err(Error::ImpactInfeasible {
            t: s_pre.t,
            reason: format!("energy residual {:.3e} exceeds tolerance", residuals.energy),
        });
    }
    if residuals.jump_subspace > tol.tol_impact || residuals.constraint > tol.tol_impact {
        return Err(Error::ImpactInfeasible {
            t: s_pre.t,
            reason: format!(
                "impact residuals (jump {:.3e}, constraint {:.3e}) exceed tolerance",
                residuals.jump_subspace, residuals.constraint
            ),
        });
    }

    Ok(ImpactEvent {
        t_impact: s_pre.t,
        q_impact: s_pre.q.clone(),
        pre: s_pre.clone(),
        post,
        multipliers,
        residuals,
    })
}

/// Sliding-window impact-count safeguard over time-ordered event times.
pub fn zeno_guard_times(times: &[f64], window: f64, max_impacts: usize) -> Result<()> {
    if times.windows(2).any(|w| w[1] < w[0]) {
        return Err(Error::Specification(
            "event times passed to the Zeno guard are not ordered".into(),
        ));
    }
    let mut start = 0usize;
    for end in 0..times.len() {
        while times[end] - times[start] > window {
            start += 1;
        }
        let count = end - start + 1;
        if count > max_impacts {
            return Err(Error::ZenoSuspicion {
                count,
                window,
                limit: max_impacts,
            });
        }
    }
    Ok(())
}

/// Sliding-window safeguard on resolved events.
pub fn zeno_guard(events: &[ImpactEvent], window: f64, max_impacts: usize) -> Result<()> {
    let times: Vec<f64> = events.iter().map(|e| e.t_impact).collect();
    zeno_guard_times(&times, window, max_impacts)
}
