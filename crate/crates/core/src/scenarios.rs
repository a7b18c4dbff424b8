//! Built-in systems with analytic derivatives and golden expectations.
//!
//! The registry exposes two scenarios: a vertically rolling disk whose
//! contact point is constrained to roll without slipping, bouncing off a
//! wall, and an unconstrained particle in a half space, optionally pulled
//! toward the wall by a uniform force so it can bounce repeatedly.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::error::{Error, Result};
use crate::model::{PontryaginState, SystemSpec, Tolerances};

/// One pinned expectation shipped with a scenario.
#[derive(Debug, Clone)]
pub struct GoldenRecord {
    pub description: String,
    pub expected: Vec<f64>,
    pub tolerance: f64,
}

/// A named, fully parametrized system with a default initial state.
#[derive(Debug, Clone)]
pub struct ScenarioSpec {
    pub name: String,
    /// Resolved parameter values, defaults merged with overrides.
    pub parameters: BTreeMap<String, f64>,
    pub spec: SystemSpec,
    pub default_initial: PontryaginState,
    pub golden: Vec<GoldenRecord>,
}

impl ScenarioSpec {
    /// Structural invariants at the default initial configuration.
    pub fn validate(&self, tol: &Tolerances) -> Result<()> {
        self.spec.validate_at(&self.default_initial.q, tol)?;
        if self.spec.constraint_count() > 0 {
            let residual =
                (self.spec.constraints_at(&self.default_initial.q) * &self.default_initial.v).amax();
            if residual > tol.tol_constraint {
                return Err(Error::Specification(format!(
                    "default initial velocity violates the constraints: residual {residual:.3e}"
                )));
            }
        }
        Ok(())
    }
}

/// Rolling disk in the vertical plane: coordinates (x, y, theta, phi) for
/// the contact point, rolling angle, and heading. The contact point rolls
/// without slipping (v_x = R v_theta cos phi, v_y = R v_theta sin phi) and
/// the chart ends at the wall y + R sin phi = wall.
pub fn disk_scenario(m: f64, i: f64, j: f64, r: f64, wall: f64) -> Result<ScenarioSpec> {
    for (name, value) in [("m", m), ("I", i), ("J", j), ("R", r)] {
        if value <= 0.0 || !value.is_finite() {
            return Err(Error::Specification(format!(
                "disk parameter {name} must be positive and finite, got {value}"
            )));
        }
    }
    if !wall.is_finite() {
        return Err(Error::Specification(format!(
            "disk parameter wall must be finite, got {wall}"
        )));
    }

    let spec = SystemSpec::builder(4)
        .constant_mass(DMatrix::from_diagonal(&DVector::from_vec(vec![m, m, i, j])))
        .constraint_forms(2, move |q: &DVector<f64>| {
            let phi = q[3];
            DMatrix::from_row_slice(
                2,
                4,
                &[
                    1.0,
                    0.0,
                    -r * phi.cos(),
                    0.0,
                    0.0,
                    1.0,
                    -r * phi.sin(),
                    0.0,
                ],
            )
        })
        .constraint_derivatives(move |q: &DVector<f64>| {
            let phi = q[3];
            let mut by_phi = DMatrix::zeros(2, 4);
            by_phi[(0, 2)] = r * phi.sin();
            by_phi[(1, 2)] = -r * phi.cos();
            vec![
                DMatrix::zeros(2, 4),
                DMatrix::zeros(2, 4),
                DMatrix::zeros(2, 4),
                by_phi,
            ]
        })
        .boundary(move |q: &DVector<f64>| q[1] + r * q[3].sin() - wall)
        .boundary_gradient(move |q: &DVector<f64>| {
            RowDVector::from_vec(vec![0.0, 1.0, 0.0, r * q[3].cos()])
        })
        .build()?;

    // Head-on run at the wall: phi = pi/2, unit rolling rate.
    let q0 = DVector::from_vec(vec![0.0, 0.0, 0.0, std::f64::consts::FRAC_PI_2]);
    let v0 = DVector::from_vec(vec![0.0, r, 1.0, 0.0]);
    let default_initial = PontryaginState::from_velocity(&spec, 0.0, q0, v0)?;

    let parameters = BTreeMap::from([
        ("m".to_string(), m),
        ("I".to_string(), i),
        ("J".to_string(), j),
        ("R".to_string(), r),
        ("wall".to_string(), wall),
    ]);
    let golden = vec![GoldenRecord {
        description: "post-impact momentum (p_x, p_y, p_theta, p_phi) after the head-on wall hit \
                      from the default initial state"
            .to_string(),
        expected: vec![0.0, -m * r, -i, 0.0],
        tolerance: 1e-9,
    }];

    Ok(ScenarioSpec {
        name: "disk".to_string(),
        parameters,
        spec,
        default_initial,
        golden,
    })
}

/// Unconstrained particle in the half space q_1 <= wall with identity mass.
/// With gravity = 0 this is the free baseline; a positive gravity adds the
/// potential V = -gravity * q_1, a uniform pull toward the wall that makes
/// the particle bounce periodically.
pub fn bouncing_particle_scenario(n: usize, wall: f64, gravity: f64) -> Result<ScenarioSpec> {
    if n < 1 {
        return Err(Error::Specification(
            "bouncing particle needs dimension n >= 1".into(),
        ));
    }
    if !wall.is_finite() || !gravity.is_finite() || gravity < 0.0 {
        return Err(Error::Specification(format!(
            "bouncing particle needs finite wall and gravity >= 0, got wall = {wall}, gravity = {gravity}"
        )));
    }

    let spec = SystemSpec::builder(n)
        .constant_mass(DMatrix::identity(n, n))
        .potential(move |q: &DVector<f64>| -gravity * q[0])
        .potential_gradient(move |q: &DVector<f64>| {
            let mut g = DVector::zeros(q.len());
            g[0] = -gravity;
            g
        })
        .boundary(move |q: &DVector<f64>| q[0] - wall)
        .boundary_gradient(move |q: &DVector<f64>| {
            let mut db = RowDVector::zeros(q.len());
            db[0] = 1.0;
            db
        })
        .build()?;

    let q0 = DVector::zeros(n);
    let mut v0 = DVector::zeros(n);
    v0[0] = 1.0;
    let default_initial = PontryaginState::from_velocity(&spec, 0.0, q0, v0)?;

    let parameters = BTreeMap::from([
        ("n".to_string(), n as f64),
        ("wall".to_string(), wall),
        ("gravity".to_string(), gravity),
    ]);
    let mut golden = Vec::new();
    if gravity == 0.0 {
        golden.push(GoldenRecord {
            description: "first impact time from the default initial state, unit approach speed"
                .to_string(),
            expected: vec![wall],
            tolerance: 1e-9,
        });
    }

    Ok(ScenarioSpec {
        name: "bouncing-particle".to_string(),
        parameters,
        spec,
        default_initial,
        golden,
    })
}

/// Expected post state of a disk impact at orthogonal incidence
/// (phi = pi/2): p_x stays zero, p_y and p_theta flip sign, p_phi is
/// unchanged. The velocity is the metric raise of the reflected momentum.
pub fn golden_disk_orthogonal_impact(
    scenario: &ScenarioSpec,
    pre: &PontryaginState,
) -> Result<PontryaginState> {
    if scenario.name != "disk" {
        return Err(Error::Specification(format!(
            "orthogonal-impact golden data applies to the disk scenario, not {}",
            scenario.name
        )));
    }
    let phi = pre.q[3];
    let quarter_turn = (phi - std::f64::consts::FRAC_PI_2).abs();
    if quarter_turn > 1e-9 {
        return Err(Error::Specification(format!(
            "orthogonal incidence requires phi = pi/2, got phi off by {quarter_turn:.3e}"
        )));
    }
    if pre.p[0].abs() > 1e-9 {
        return Err(Error::Specification(format!(
            "at phi = pi/2 the constraints force p_x = 0, got {:.3e}",
            pre.p[0]
        )));
    }
    let p_post = RowDVector::from_vec(vec![0.0, -pre.p[1], -pre.p[2], pre.p[3]]);
    let v_post = crate::model::legendre_inv(&scenario.spec, &pre.q, &p_post)?;
    Ok(PontryaginState::new(pre.t, pre.q.clone(), v_post, p_post))
}

/// Names accepted by [`build`].
pub fn names() -> Vec<&'static str> {
    vec!["disk", "bouncing-particle"]
}

/// Build a registered scenario from a parameter map; unknown names and
/// unknown parameter keys are configuration errors.
pub fn build(name: &str, overrides: &BTreeMap<String, f64>) -> Result<ScenarioSpec> {
    match name {
        "disk" => {
            let allowed = ["m", "I", "J", "R", "wall"];
            check_keys(name, overrides, &allowed)?;
            let get = |key: &str, default: f64| *overrides.get(key).unwrap_or(&default);
            disk_scenario(
                get("m", 1.0),
                get("I", 1.0),
                get("J", 1.0),
                get("R", 1.0),
                get("wall", 10.0),
            )
        }
        "bouncing-particle" => {
            let allowed = ["n", "wall", "gravity"];
            check_keys(name, overrides, &allowed)?;
            let n_raw = *overrides.get("n").unwrap_or(&1.0);
            if n_raw.fract() != 0.0 || !(1.0..=64.0).contains(&n_raw) {
                return Err(Error::Config(format!(
                    "bouncing-particle parameter n must be an integer in 1..=64, got {n_raw}"
                )));
            }
            bouncing_particle_scenario(
                n_raw as usize,
                *overrides.get("wall").unwrap_or(&1.0),
                *overrides.get("gravity").unwrap_or(&0.0),
            )
        }
        other => Err(Error::Config(format!(
            "unknown scenario '{other}'; available: {}",
            names().join(", ")
        ))),
    }
}

fn check_keys(name: &str, overrides: &BTreeMap<String, f64>, allowed: &[&str]) -> Result<()> {
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "unknown parameter '{key}' for scenario '{name}'; allowed: {}",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}
