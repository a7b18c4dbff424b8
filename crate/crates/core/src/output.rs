//! Trajectory and event serialization.
//!
//! Trajectories go to CSV with 17 significant digits so a parse-back
//! reproduces every sample bit for bit; events go to JSON. The event
//! writer re-validates impact residuals before touching the file, so a
//! record that stopped satisfying its contract can never be published.

use std::fs::File;
use std::io::{BufWriter, Write as _};
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{energy, ImpactResiduals, SystemSpec, Tolerances, Trajectory};

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Write every recorded sample as CSV with header `t,q1..qn,v1..vn,p1..pn,E`.
/// Arcs are concatenated in order; the impact-time sample ends one arc and
/// the post-impact sample opens the next.
pub fn write_trajectory(spec: &SystemSpec, trajectory: &Trajectory, path: &Path) -> Result<()> {
    let n = spec.dim();
    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);

    let mut header = String::from("t");
    for prefix in ["q", "v", "p"] {
        for i in 1..=n {
            header.push_str(&format!(",{prefix}{i}"));
        }
    }
    header.push_str(",E");
    writeln!(out, "{header}").map_err(|e| io_error(path, e))?;

    let mut row = String::new();
    for arc in &trajectory.arcs {
        for state in arc {
            let e = energy(spec, state)?;
            row.clear();
            row.push_str(&format!("{:.16e}", state.t));
            for x in state.q.iter().chain(state.v.iter()).chain(state.p.iter()) {
                row.push_str(&format!(",{x:.16e}"));
            }
            row.push_str(&format!(",{e:.16e}"));
            writeln!(out, "{row}").map_err(|e| io_error(path, e))?;
        }
    }
    out.flush().map_err(|e| io_error(path, e))
}

#[derive(Serialize)]
struct EventRecord {
    t: f64,
    q: Vec<f64>,
    p_pre: Vec<f64>,
    p_post: Vec<f64>,
    v_pre: Vec<f64>,
    v_post: Vec<f64>,
    multipliers: Vec<f64>,
    residuals: ImpactResiduals,
}

/// Write the event log as a JSON array. Every event is re-validated
/// against the tolerances first; a violation fails the whole write.
pub fn write_events(
    spec: &SystemSpec,
    trajectory: &Trajectory,
    tol: &Tolerances,
    path: &Path,
) -> Result<()> {
    let mut records = Vec::with_capacity(trajectory.events.len());
    for (k, event) in trajectory.events.iter().enumerate() {
        event.validate(tol).map_err(|e| {
            Error::Specification(format!("refusing to write event {k}: {e}"))
        })?;
        let e_pre = energy(spec, &event.pre)?;
        let scale = e_pre.abs().max(1.0);
        if event.residuals.energy > tol.tol_impact * scale
            || event.residuals.jump_subspace > tol.tol_impact
            || event.residuals.constraint > tol.tol_impact
        {
            return Err(Error::Specification(format!(
                "refusing to write event {k}: residuals (energy {:.3e}, jump {:.3e}, \
                 constraint {:.3e}) exceed the impact tolerance",
                event.residuals.energy, event.residuals.jump_subspace, event.residuals.constraint
            )));
        }
        records.push(EventRecord {
            t: event.t_impact,
            q: event.q_impact.iter().copied().collect(),
            p_pre: event.pre.p.iter().copied().collect(),
            p_post: event.post.p.iter().copied().collect(),
            v_pre: event.pre.v.iter().copied().collect(),
            v_post: event.post.v.iter().copied().collect(),
            multipliers: event.multipliers.iter().copied().collect(),
            residuals: event.residuals,
        });
    }

    let file = File::create(path).map_err(|e| io_error(path, e))?;
    let mut out = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut out, &records)
        .map_err(|e| Error::Specification(format!("event serialization failed: {e}")))?;
    out.write_all(b"\n").map_err(|e| io_error(path, e))?;
    out.flush().map_err(|e| io_error(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{run_simulation, InitialConfig, OutputConfig, ScenarioConfig, SimConfig};
    use std::collections::BTreeMap;

    fn particle_run() -> (SystemSpec, Trajectory, Tolerances) {
        let config = SimConfig {
            scenario: ScenarioConfig {
                name: "bouncing-particle".into(),
                parameters: BTreeMap::from([("wall".to_string(), 1.0)]),
            },
            initial: Some(InitialConfig {
                q: vec![0.0],
                v: vec![1.0],
            }),
            t0: 0.0,
            t1: 1.5,
            h: 1e-2,
            tolerances: Tolerances::default(),
            max_impacts: 10,
            zeno_window: 1.0,
            output: OutputConfig::default(),
        };
        let (scenario, _) = config.prepare().unwrap();
        let traj = run_simulation(&config).unwrap();
        (scenario.spec, traj, config.tolerances)
    }

    #[test]
    fn csv_round_trips_bit_for_bit() {
        let (spec, traj, _) = particle_run();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("trajectory.csv");
        write_trajectory(&spec, &traj, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "t,q1,v1,p1,E");
        let states: Vec<&crate::model::PontryaginState> =
            traj.arcs.iter().flatten().collect();
        let mut rows = 0;
        for (line, state) in lines.zip(&states) {
            let fields: Vec<f64> = line
                .split(',')
                .map(|f| f.parse::<f64>().unwrap())
                .collect();
            assert_eq!(fields.len(), 5);
            assert_eq!(fields[0].to_bits(), state.t.to_bits());
            assert_eq!(fields[1].to_bits(), state.q[0].to_bits());
            assert_eq!(fields[2].to_bits(), state.v[0].to_bits());
            assert_eq!(fields[3].to_bits(), state.p[0].to_bits());
            let e = energy(&spec, state).unwrap();
            assert_eq!(fields[4].to_bits(), e.to_bits());
            rows += 1;
        }
        assert_eq!(rows, states.len());
    }

    #[test]
    fn empty_trajectory_writes_header_only() {
        let (spec, _, _) = particle_run();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.csv");
        write_trajectory(&spec, &Trajectory::default(), &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "t,q1,v1,p1,E\n");
    }

    #[test]
    fn event_log_has_full_records() {
        let (spec, traj, tol) = particle_run();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.json");
        write_events(&spec, &traj, &tol, &path).unwrap();

        let text = std::fs::read_to_string(&path).unwrap();
        let parsed: serde_json::Value = serde_json::from_str(&text).unwrap();
        let records = parsed.as_array().unwrap();
        assert_eq!(records.len(), 1);
        let record = &records[0];
        for key in [
            "t",
            "q",
            "p_pre",
            "p_post",
            "v_pre",
            "v_post",
            "multipliers",
            "residuals",
        ] {
            assert!(record.get(key).is_some(), "missing key {key}");
        }
        assert!((record["t"].as_f64().unwrap() - 1.0).abs() <= 1e-9);
        assert!(record["residuals"]["energy"].as_f64().unwrap() <= 1e-9);
        let p_pre = record["p_pre"].as_array().unwrap();
        let p_post = record["p_post"].as_array().unwrap();
        assert_eq!(p_pre[0].as_f64().unwrap(), 1.0);
        assert_eq!(p_post[0].as_f64().unwrap(), -1.0);
    }

    #[test]
    fn corrupted_event_is_refused() {
        let (spec, mut traj, tol) = particle_run();
        traj.events[0].residuals.energy = 1.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("events.json");
        let err = write_events(&spec, &traj, &tol, &path).unwrap_err();
        assert!(err.is_config_error());
        assert!(!path.exists());
    }

    #[test]
    fn missing_directory_reports_path() {
        let (spec, traj, _) = particle_run();
        let path = Path::new("/nonexistent-dir-for-test/out.csv");
        let err = write_trajectory(&spec, &traj, path).unwrap_err();
        match err {
            Error::Io { path, .. } => assert!(path.contains("nonexistent-dir-for-test")),
            other => panic!("expected io error, got {other}"),
        }
    }
}
