//! Command line front end: simulate, compare formulations, list scenarios,
//! and validate configurations.
//!
//! Exit codes: 0 on success, 2 for configuration problems, 3 for numerical
//! failures, 4 when a safeguard (Zeno or grazing) halts the run. On a halt
//! the partial trajectory and the complete event log are still written to
//! the configured paths for post-mortem inspection.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nonholo_core::{
    compare_formulations, energy, run_simulation, scenarios, write_events, write_trajectory,
    Error, SimConfig, Trajectory,
};

/// When set, output files keep their names but land in this directory.
const OUTPUT_DIR_VAR: &str = "NONHOLO_OUTPUT_DIR";

#[derive(Parser)]
#[command(
    name = "nonholo",
    version,
    about = "Simulate mechanical systems with velocity constraints and elastic impacts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Integrate a configuration and write trajectory and event files.
    Simulate {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Run both the Lagrangian and the Hamiltonian integrator and compare.
    Compare {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Print the built-in scenarios with their default parameters.
    ListScenarios,
    /// Check a configuration and its initial state without integrating.
    Validate {
        /// JSON configuration file.
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate { config } => simulate(&config),
        Command::Compare { config } => compare(&config),
        Command::ListScenarios => list_scenarios(),
        Command::Validate { config } => validate(&config),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(error) => {
            eprintln!("error: {error}");
            if error.is_config_error() {
                ExitCode::from(2)
            } else if error.is_safeguard_halt() {
                ExitCode::from(4)
            } else {
                ExitCode::from(3)
            }
        }
    }
}

fn simulate(config_path: &Path) -> Result<(), Error> {
    let config = SimConfig::load(config_path)?;
    match run_simulation(&config) {
        Ok(trajectory) => {
            report_run(&config, &trajectory)?;
            write_outputs(&config, &trajectory)?;
            Ok(())
        }
        Err(failure) => {
            // The run failed, but everything integrated so far is still
            // written out before the halt is reported.
            eprintln!(
                "run halted after {} samples and {} events",
                failure.partial.sample_count(),
                failure.partial.events.len()
            );
            if let Err(write_error) = write_outputs(&config, &failure.partial) {
                eprintln!("post-mortem output failed: {write_error}");
            }
            Err(failure.error)
        }
    }
}

fn report_run(config: &SimConfig, trajectory: &Trajectory) -> Result<(), Error> {
    let (scenario, _) = config.prepare()?;
    let spec = &scenario.spec;
    let e0 = trajectory
        .first_state()
        .map(|s| energy(spec, s))
        .transpose()?
        .unwrap_or(0.0);
    let mut drift: f64 = 0.0;
    for state in trajectory.arcs.iter().flatten() {
        drift = drift.max((energy(spec, state)? - e0).abs());
    }
    println!(
        "scenario '{}': {} samples, {} impacts, energy drift {:.3e}",
        scenario.name,
        trajectory.sample_count(),
        trajectory.events.len(),
        drift
    );
    for (k, event) in trajectory.events.iter().enumerate() {
        println!(
            "  impact {k} at t = {:.12}, energy residual {:.3e}",
            event.t_impact, event.residuals.energy
        );
    }
    Ok(())
}

/// Re-root a configured output path when the directory override is set.
fn resolve_output_path(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_VAR) {
        Some(dir) if !dir.is_empty() => match path.file_name() {
            Some(name) => Path::new(&dir).join(name),
            None => Path::new(&dir).to_path_buf(),
        },
        _ => path.to_path_buf(),
    }
}

fn write_outputs(config: &SimConfig, trajectory: &Trajectory) -> Result<(), Error> {
    let (scenario, _) = config.prepare()?;
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_VAR) {
        if !dir.is_empty() {
            std::fs::create_dir_all(&dir).map_err(|e| Error::Io {
                path: Path::new(&dir).display().to_string(),
                source: e,
            })?;
        }
    }
    if let Some(path) = &config.output.trajectory_path {
        let path = resolve_output_path(path);
        write_trajectory(&scenario.spec, trajectory, &path)?;
        println!("wrote trajectory to {}", path.display());
    }
    if let Some(path) = &config.output.events_path {
        let path = resolve_output_path(path);
        write_events(&scenario.spec, trajectory, &config.tolerances, &path)?;
        println!("wrote events to {}", path.display());
    }
    Ok(())
}

fn compare(config_path: &Path) -> Result<(), Error> {
    let config = SimConfig::load(config_path)?;
    let report = compare_formulations(&config)?;
    println!(
        "max state deviation {:.3e} across {} events",
        report.max_deviation, report.event_count
    );
    for row in &report.events {
        println!(
            "  event {}: t_lagrangian = {:.12}, t_hamiltonian = {:.12}, |dt| = {:.3e}, |dp| = {:.3e}",
            row.index, row.t_lagrangian, row.t_hamiltonian, row.time_difference, row.momentum_difference
        );
    }
    Ok(())
}

fn list_scenarios() -> Result<(), Error> {
    for name in scenarios::names() {
        let scenario = scenarios::build(name, &BTreeMap::new())?;
        let params: Vec<String> = scenario
            .parameters
            .iter()
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        println!("{name}: {}", params.join(" "));
    }
    Ok(())
}

fn validate(config_path: &Path) -> Result<(), Error> {
    let config = SimConfig::load(config_path)?;
    let (scenario, initial) = config.prepare()?;
    scenario.validate(&config.tolerances)?;
    println!(
        "configuration ok: scenario '{}', dimension {}, {} constraints, t in [{}, {}], h = {}",
        scenario.name,
        scenario.spec.dim(),
        scenario.spec.constraint_count(),
        config.t0,
        config.t1,
        config.h
    );
    println!(
        "initial state: b(q0) = {:.6e}, |p0| = {:.6}",
        scenario.spec.boundary_at(&initial.q),
        initial.p.amax()
    );
    Ok(())
}
