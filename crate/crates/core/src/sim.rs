//! Simulation orchestration: configuration, the smooth-arc/impact loop,
//! and the Lagrangian/Hamiltonian comparison.
//!
//! The run loop integrates smooth arcs until the boundary function changes
//! sign across a step, localizes the crossing, resolves the impact, and
//! continues from the post-impact state. Safeguards halt the run on
//! grazing contact and on impact pile-ups, carrying the partial trajectory
//! and the complete event log for post-mortem output.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::step;
use crate::error::{Error, Result};
use crate::hamiltonian::{equivalence_check, hamiltonian_step, HamiltonianState};
use crate::impact::{locate_crossing_with, normalized_normal_speed, resolve_impact, zeno_guard};
use crate::model::{PontryaginState, Tolerances, Trajectory};
use crate::scenarios::{self, ScenarioSpec};

/// Scenario selection: a registry name plus parameter overrides.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    #[serde(default)]
    pub parameters: BTreeMap<String, f64>,
}

/// Initial condition override; the momentum is always derived from the
/// velocity through the Legendre transform.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct InitialConfig {
    pub q: Vec<f64>,
    pub v: Vec<f64>,
}

/// Output destinations and sampling stride. With no paths set the run is
/// in-memory only. A stride of s records every s-th accepted step; arc
/// endpoints are always recorded.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub trajectory_path: Option<PathBuf>,
    pub events_path: Option<PathBuf>,
    pub stride: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            trajectory_path: None,
            events_path: None,
            stride: 1,
        }
    }
}

fn default_h() -> f64 {
    1e-3
}

fn default_max_impacts() -> usize {
    10_000
}

fn default_zeno_window() -> f64 {
    1.0
}

/// Full simulation configuration, deserialized strictly from JSON: unknown
/// keys are rejected.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub scenario: ScenarioConfig,
    #[serde(default)]
    pub initial: Option<InitialConfig>,
    #[serde(default)]
    pub t0: f64,
    pub t1: f64,
    #[serde(default = "default_h")]
    pub h: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    /// Impact-count limit, enforced both inside every Zeno window and over
    /// the whole run.
    #[serde(default = "default_max_impacts")]
    pub max_impacts: usize,
    #[serde(default = "default_zeno_window")]
    pub zeno_window: f64,
    #[serde(default)]
    pub output: OutputConfig,
}

impl SimConfig {
    /// Parse a configuration file, rejecting unknown keys. Read failures
    /// are configuration errors: the input file is the user's to fix.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    /// Validate the configuration and produce the scenario and the initial
    /// state (momentum derived via the Legendre transform).
    pub fn prepare(&self) -> Result<(ScenarioSpec, PontryaginState)> {
        self.tolerances.validate()?;
        if !self.t0.is_finite() || !self.t1.is_finite() {
            return Err(Error::Config(format!(
                "t0 and t1 must be finite, got t0 = {}, t1 = {}",
                self.t0, self.t1
            )));
        }
        if self.t1 <= self.t0 {
            return Err(Error::Config(format!(
                "need t1 > t0, got t0 = {}, t1 = {}",
                self.t0, self.t1
            )));
        }
        if self.h <= 0.0 || !self.h.is_finite() {
            return Err(Error::Config(format!("step size h must be positive, got {}", self.h)));
        }
        if self.output.stride == 0 {
            return Err(Error::Config("output stride must be at least 1".into()));
        }
        if self.zeno_window <= 0.0 || !self.zeno_window.is_finite() {
            return Err(Error::Config(format!(
                "zeno_window must be positive, got {}",
                self.zeno_window
            )));
        }

        let scenario = scenarios::build(&self.scenario.name, &self.scenario.parameters)?;
        let spec = &scenario.spec;
        let initial = match &self.initial {
            None => {
                let mut s = scenario.default_initial.clone();
                s.t = self.t0;
                s
            }
            Some(init) => {
                if init.q.len() != spec.dim() || init.v.len() != spec.dim() {
                    return Err(Error::Config(format!(
                        "initial q and v must have length {}, got {} and {}",
                        spec.dim(),
                        init.q.len(),
                        init.v.len()
                    )));
                }
                if init.q.iter().chain(init.v.iter()).any(|x| !x.is_finite()) {
                    return Err(Error::Config("initial state has non-finite entries".into()));
                }
                let q = nalgebra::DVector::from_vec(init.q.clone());
                let v = nalgebra::DVector::from_vec(init.v.clone());
                PontryaginState::from_velocity(spec, self.t0, q, v)?
            }
        };

        spec.validate_at(&initial.q, &self.tolerances)?;
        let b0 = spec.boundary_at(&initial.q);
        if b0 > self.tolerances.tol_boundary {
            return Err(Error::Config(format!(
                "initial configuration lies outside the chart: b(q0) = {b0:.6e}"
            )));
        }
        if spec.constraint_count() > 0 {
            let residual = (spec.constraints_at(&initial.q) * &initial.v).amax();
            if residual > self.tolerances.tol_constraint {
                return Err(Error::Config(format!(
                    "initial velocity violates the constraints: |mu(q0) v0| = {residual:.6e}"
                )));
            }
        }
        Ok((scenario, initial))
    }
}

/// A failed run with everything integrated so far, for post-mortem output.
#[derive(Debug)]
pub struct SimFailure {
    pub error: Error,
    pub partial: Trajectory,
}

impl fmt::Display for SimFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.error)
    }
}

impl std::error::Error for SimFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

/// Which equations of motion drive the smooth arcs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Lagrangian,
    Hamiltonian,
}

/// One smooth step of either formulation, as driven by the run loop.
type StepFn = dyn Fn(&PontryaginState, f64) -> Result<PontryaginState>;

/// Run the configured simulation with the Lagrangian integrator.
pub fn run_simulation(config: &SimConfig) -> std::result::Result<Trajectory, Box<SimFailure>> {
    run_formulation(config, Formulation::Lagrangian)
}

/// Run with a chosen formulation. Both produce Pontryagin-bundle samples;
/// the Hamiltonian side reconstructs velocities through the inverse
/// Legendre transform, and both share one impact solver.
pub fn run_formulation(
    config: &SimConfig,
    formulation: Formulation,
) -> std::result::Result<Trajectory, Box<SimFailure>> {
    let (scenario, initial) = config.prepare().map_err(|error| {
        Box::new(SimFailure {
            error,
            partial: Trajectory::default(),
        })
    })?;
    let spec = scenario.spec.clone();
    let tol = config.tolerances;
    let stepper: Box<StepFn> = match formulation {
        Formulation::Lagrangian => Box::new({
            let spec = spec.clone();
            move |s: &PontryaginState, dt: f64| Ok(step(&spec, s, dt, &tol)?.state)
        }),
        Formulation::Hamiltonian => Box::new({
            let spec = spec.clone();
            move |s: &PontryaginState, dt: f64| {
                let hs = HamiltonianState::from_pontryagin(s);
                hamiltonian_step(&spec, &hs, dt, &tol)?.to_pontryagin(&spec)
            }
        }),
    };
    run_loop(&spec, initial, config, &*stepper)
}

fn run_loop(
    spec: &crate::model::SystemSpec,
    initial: PontryaginState,
    config: &SimConfig,
    stepper: &StepFn,
) -> std::result::Result<Trajectory, Box<SimFailure>> {
    let tol = &config.tolerances;
    let stride = config.output.stride;
    let time_eps = tol.tol_t.max(1e-12 * config.t1.abs().max(1.0));

    let mut arcs: Vec<Vec<PontryaginState>> = Vec::new();
    let mut events = Vec::new();
    let mut arc = vec![initial.clone()];
    let mut s = initial;
    let mut steps_in_arc = 0usize;

    let fail = |error: Error, mut arcs: Vec<Vec<PontryaginState>>, arc: Vec<PontryaginState>, events| {
        if !arc.is_empty() {
            arcs.push(arc);
        }
        Box::new(SimFailure {
            error,
            partial: Trajectory { arcs, events },
        })
    };

    // A start on the boundary is either an immediate impact (outward),
    // a grazing halt (tangential), or an ordinary interior start (inward).
    let b0 = spec.boundary_at(&s.q);
    if b0.abs() <= tol.tol_boundary {
        let ns = match normalized_normal_speed(spec, &s.q, &s.v) {
            Ok(ns) => ns,
            Err(e) => return Err(fail(e, arcs, arc, events)),
        };
        if ns > tol.tol_graze {
            match resolve_impact(spec, &s, tol) {
                Ok(event) => {
                    events.push(event.clone());
                    arcs.push(std::mem::take(&mut arc));
                    arc = vec![event.post.clone()];
                    s = event.post;
                }
                Err(e) => return Err(fail(e, arcs, arc, events)),
            }
        } else if ns.abs() <= tol.tol_graze {
            return Err(fail(
                Error::GrazingImpact { t: s.t, speed: ns },
                arcs,
                arc,
                events,
            ));
        }
    }

    while config.t1 - s.t > time_eps {
        let dt = config.h.min(config.t1 - s.t);
        let s_next = match stepper(&s, dt) {
            Ok(next) => next,
            Err(e) => return Err(fail(e, arcs, arc, events)),
        };
        let b_prev = spec.boundary_at(&s.q);
        let b_next = spec.boundary_at(&s_next.q);
        if b_next >= 0.0 {
            if b_prev >= 0.0 {
                return Err(fail(
                    Error::EventLocalization {
                        reason: format!(
                            "trajectory failed to re-enter the interior after the impact at t = {} \
                             (possible sliding contact below step resolution)",
                            s.t
                        ),
                    },
                    arcs,
                    arc,
                    events,
                ));
            }
            let located = locate_crossing_with(spec, &s, &s_next, tol.tol_t, tol, &|state, sub| {
                stepper(state, sub)
            });
            let (_, s_star) = match located {
                Ok(found) => found,
                Err(e) => return Err(fail(e, arcs, arc, events)),
            };
            arc.push(s_star.clone());
            let event = match resolve_impact(spec, &s_star, tol) {
                Ok(event) => event,
                Err(e) => return Err(fail(e, arcs, arc, events)),
            };
            events.push(event.clone());
            if events.len() > config.max_impacts {
                return Err(fail(
                    Error::ZenoSuspicion {
                        count: events.len(),
                        window: config.t1 - config.t0,
                        limit: config.max_impacts,
                    },
                    arcs,
                    arc,
                    events,
                ));
            }
            if let Err(e) = zeno_guard(&events, config.zeno_window, config.max_impacts) {
                return Err(fail(e, arcs, arc, events));
            }
            arcs.push(std::mem::take(&mut arc));
            arc = vec![event.post.clone()];
            s = event.post;
            steps_in_arc = 0;
        } else {
            steps_in_arc += 1;
            if steps_in_arc.is_multiple_of(stride) {
                arc.push(s_next.clone());
            }
            s = s_next;
        }
    }

    let last_recorded = arc.last().map(|state| state.t);
    if last_recorded != Some(s.t) {
        arc.push(s);
    }
    arcs.push(arc);

    let trajectory = Trajectory { arcs, events };
    if let Err(error) = trajectory.validate(config.max_impacts) {
        let partial = trajectory.clone();
        return Err(Box::new(SimFailure { error, partial }));
    }
    Ok(trajectory)
}

/// One row of the per-event comparison table.
#[derive(Debug, Clone, Serialize)]
pub struct EventComparison {
    pub index: usize,
    pub t_lagrangian: f64,
    pub t_hamiltonian: f64,
    pub time_difference: f64,
    /// |p_post_L - p_post_H|_inf across the event.
    pub momentum_difference: f64,
}

/// Result of running both formulations on one configuration.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    /// Max over samples of |q_L - q_H|_inf + |p_L - p_H|_inf.
    pub max_deviation: f64,
    pub event_count: usize,
    pub events: Vec<EventComparison>,
}

/// Run both integrators on the same configuration and compare them sample
/// by sample and event by event. Structural differences (event or sample
/// counts) are surfaced as errors, not folded into the deviation.
pub fn compare_formulations(config: &SimConfig) -> Result<ComparisonReport> {
    let traj_l = run_formulation(config, Formulation::Lagrangian).map_err(|f| f.error)?;
    let traj_h = run_formulation(config, Formulation::Hamiltonian).map_err(|f| f.error)?;
    let (scenario, _) = config.prepare()?;
    let max_deviation = equivalence_check(&scenario.spec, &traj_l, &traj_h)?;
    let events = traj_l
        .events
        .iter()
        .zip(&traj_h.events)
        .enumerate()
        .map(|(index, (el, eh))| EventComparison {
            index,
            t_lagrangian: el.t_impact,
            t_hamiltonian: eh.t_impact,
            time_difference: (el.t_impact - eh.t_impact).abs(),
            momentum_difference: (&el.post.p - &eh.post.p).amax(),
        })
        .collect();
    Ok(ComparisonReport {
        max_deviation,
        event_count: traj_l.events.len(),
        events,
    })
}
