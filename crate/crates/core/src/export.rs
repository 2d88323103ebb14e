//! Plot-ready run artifacts: trajectory, per-step and coverage CSVs, the JSON
//! summary and the mode transition log.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::sim::SimulationLog;
use crate::vehicle::{su, sx};

pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const STEPS_FILE: &str = "steps.csv";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const SUMMARY_FILE: &str = "summary.json";
pub const TRANSITIONS_FILE: &str = "transitions.log";

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("cannot serialize summary: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ExportError + '_ {
    move |source| ExportError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_writer(path: &Path) -> Result<csv::Writer<File>, ExportError> {
    csv::Writer::from_path(path).map_err(|source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    })
}

pub fn trajectory_header() -> Vec<String> {
    let mut h = vec!["step".to_string(), "time".into(), "agent".into()];
    h.extend(sx::NAMES.iter().map(|s| s.to_string()));
    h.extend(su::NAMES.iter().map(|s| s.to_string()));
    h.extend(["mode", "soc", "u_b", "i_b", "segment"].map(String::from));
    h
}

/// Write every artifact into `dir`, creating it if needed.
pub fn write_all(log: &SimulationLog, dir: &Path) -> Result<(), ExportError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_trajectory(log, &dir.join(TRAJECTORY_FILE))?;
    write_steps(log, &dir.join(STEPS_FILE))?;
    write_coverage(log, &dir.join(COVERAGE_FILE))?;
    write_transitions(log, &dir.join(TRANSITIONS_FILE))?;
    let path = dir.join(SUMMARY_FILE);
    let json = serde_json::to_string_pretty(&log.summary)?;
    fs::write(&path, json + "\n").map_err(io_err(&path))?;
    Ok(())
}

/// One row per agent and time: the initial state (step 0, zero input) and
/// the state after each applied input.
pub fn write_trajectory(log: &SimulationLog, path: &Path) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(trajectory_header()).map_err(csv_err)?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for (i, x) in log.initial.iter().enumerate() {
        let mut row = vec!["0".to_string(), "0".into(), i.to_string()];
        row.extend(x.to_vector().iter().map(|v| v.to_string()));
        row.extend((0..su::NAMES.len()).map(|_| "0".to_string()));
        row.extend(["0", "", "", "", ""].map(String::from));
        rows.push(row);
    }
    for s in &log.steps {
        let t = (s.step + 1) as f64 * log.dt;
        for a in &s.agents {
            let mut row = vec![(s.step + 1).to_string(), t.to_string(), a.agent.to_string()];
            row.extend(a.state.to_vector().iter().map(|v| v.to_string()));
            row.extend(a.input.to_vector().iter().map(|v| v.to_string()));
            row.push(a.mode.code().to_string());
            row.push(a.telemetry.soc.to_string());
            row.push(a.telemetry.u_b.to_string());
            row.push(a.telemetry.i_b.to_string());
            row.push(a.segment.to_string());
            rows.push(row);
        }
    }
    for r in rows {
        w.write_record(&r).map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_steps(log: &SimulationLog, path: &Path) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record([
        "step",
        "status",
        "objective",
        "term_slack",
        "term_target",
        "term_coverage",
        "solve_seconds",
        "nodes",
        "recovery",
        "uncovered",
    ])
    .map_err(csv_err)?;
    for s in &log.steps {
        let status = s
            .status
            .map(|st| serde_json::to_value(st).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .unwrap_or_default();
        w.write_record([
            s.step.to_string(),
            status,
            s.objective.map_or(String::new(), |o| o.to_string()),
            s.terms[0].to_string(),
            s.terms[1].to_string(),
            s.terms[2].to_string(),
            s.solve_seconds.to_string(),
            s.nodes.to_string(),
            s.recovery.to_string(),
            s.uncovered.iter().filter(|&&u| u).count().to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

/// Coverage timeline `(step, waypoint, phi)` with `phi = 1` while uncovered;
/// step 0 is the initial coverage.
pub fn write_coverage(log: &SimulationLog, path: &Path) -> Result<(), ExportError> {
    let mut w = csv_writer(path)?;
    let csv_err = |source| ExportError::Csv {
        path: path.to_path_buf(),
        source,
    };
    w.write_record(["step", "waypoint", "phi"]).map_err(csv_err)?;
    let frames = std::iter::once((0, &log.initial_uncovered)).chain(log.steps.iter().map(|s| (s.step + 1, &s.uncovered)));
    for (step, uncovered) in frames {
        for (wp, &u) in uncovered.iter().enumerate() {
            w.write_record([step.to_string(), wp.to_string(), u8::from(u).to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}

pub fn write_transitions(log: &SimulationLog, path: &Path) -> Result<(), ExportError> {
    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    for t in &log.transitions {
        let actions: Vec<String> = t
            .transition
            .actions
            .iter()
            .map(|a| serde_json::to_value(a).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default())
            .collect();
        writeln!(
            w,
            "t={:.1}s step={} agent={} mode {} -> {} actions=[{}]",
            t.time,
            t.step,
            t.transition.agent,
            t.transition.from.code(),
            t.transition.to.code(),
            actions.join(",")
        )
        .map_err(io_err(path))?;
    }
    if let Some(d) = &log.summary.diagnostic {
        writeln!(w, "aborted: {d}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    Ok(())
}
