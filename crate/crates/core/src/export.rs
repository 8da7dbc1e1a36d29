//! CSV and key-value output. Headers are fixed strings; floats are written
//! in their shortest round-trip form, so identical runs give identical bytes.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::Serialize;

use crate::adjoint::AdjointTrajectory;
use crate::control::ControlField;
use crate::domain::{Particle, PhaseGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::forward::{DiagnosticsSeries, ELECTRONS, IONS};
use crate::gradient::GradientField;
use crate::optimizer::{IterationRecord, OptimizationReport};

pub const DIAGNOSTICS_HEADER: [&str; 9] = [
    "k",
    "t",
    "electric_energy",
    "mean_x_e",
    "var_x_e",
    "maxdev_e",
    "mean_x_i",
    "var_x_i",
    "maxdev_i",
];
pub const PHASE_HEADER: [&str; 4] = ["x", "v1", "v2", "species"];
pub const FIELDS_HEADER: [&str; 3] = ["t", "x", "E"];
pub const ADJOINT_HEADER: [&str; 6] = ["k", "t", "N_lambda_e", "N_lambda_i", "created", "clamped"];
pub const GRADIENT_HEADER: [&str; 7] = ["k", "i", "t", "x", "G", "grad_L2", "grad_V"];
pub const CONTROL_HEADER: [&str; 5] = ["k", "i", "t", "x", "B"];
pub const ITERATIONS_HEADER: [&str; 11] = [
    "iteration",
    "cost",
    "grad_norm_v",
    "sigma",
    "beta",
    "evaluations",
    "clamped",
    "restarted",
    "step_norm",
    "max_slope_t",
    "max_slope_x",
];

fn writer(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_diagnostics(path: &Path, d: &DiagnosticsSeries) -> Result<()> {
    let mut w = writer(path, &DIAGNOSTICS_HEADER)?;
    for k in 0..d.t.len() {
        w.write_record([
            k.to_string(),
            num(d.t[k]),
            num(d.electric_energy[k]),
            num(d.mean_x[ELECTRONS][k]),
            num(d.var_x[ELECTRONS][k]),
            num(d.max_deviation[ELECTRONS][k]),
            num(d.mean_x[IONS][k]),
            num(d.var_x[IONS][k]),
            num(d.max_deviation[IONS][k]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Both species at one level; `species` is `e` or `i`.
pub fn write_phase_dump(path: &Path, state: &[Vec<Particle>; 2]) -> Result<()> {
    let mut w = writer(path, &PHASE_HEADER)?;
    for (s, tag) in [(ELECTRONS, "e"), (IONS, "i")] {
        for p in &state[s] {
            w.write_record([num(p.x), num(p.v1), num(p.v2), tag.to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Electric field at the cell centres, one row per level and cell.
pub fn write_fields(
    path: &Path,
    efield: &[Vec<f64>],
    time: &TimeGrid,
    grid: &PhaseGrid,
) -> Result<()> {
    let mut w = writer(path, &FIELDS_HEADER)?;
    for (k, e) in efield.iter().enumerate() {
        for (i, v) in e.iter().enumerate() {
            w.write_record([num(time.t(k)), num(grid.x_center(i)), num(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Adjoint particle counts per level, with the particles created and the
/// cells clamped during the step that ends at level `k` (empty at `n_t`).
pub fn write_adjoint(path: &Path, adj: &AdjointTrajectory, time: &TimeGrid) -> Result<()> {
    let mut w = writer(path, &ADJOINT_HEADER)?;
    for (k, c) in adj.counts.iter().enumerate() {
        let created = adj
            .created
            .get(k)
            .map(|v| v.to_string())
            .unwrap_or_default();
        let clamped = adj
            .clamped
            .get(k)
            .map(|v| v.to_string())
            .unwrap_or_default();
        w.write_record([
            k.to_string(),
            num(time.t(k)),
            c[ELECTRONS].to_string(),
            c[IONS].to_string(),
            created,
            clamped,
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_gradient(path: &Path, g: &GradientField, control: &ControlField) -> Result<()> {
    let mut w = writer(path, &GRADIENT_HEADER)?;
    let n_x = control.n_x;
    for k in 0..control.time.levels() {
        for i in 0..n_x {
            let j = k * n_x + i;
            w.write_record([
                k.to_string(),
                i.to_string(),
                num(control.time.t(k)),
                num((i as f64 + 0.5) * control.dx()),
                num(g.g[j]),
                num(g.grad_l2[j]),
                num(g.grad_v[j]),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_control(path: &Path, control: &ControlField) -> Result<()> {
    let mut w = writer(path, &CONTROL_HEADER)?;
    for k in 0..control.time.levels() {
        for i in 0..control.n_x {
            w.write_record([
                k.to_string(),
                i.to_string(),
                num(control.time.t(k)),
                num((i as f64 + 0.5) * control.dx()),
                num(control.get(k, i)),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

fn record_fields(r: &IterationRecord) -> [String; 11] {
    [
        r.iteration.to_string(),
        num(r.cost),
        num(r.grad_norm_v),
        num(r.sigma),
        num(r.beta),
        r.evaluations.to_string(),
        r.clamped.to_string(),
        r.restarted.to_string(),
        num(r.step_norm),
        num(r.max_slope_t),
        num(r.max_slope_x),
    ]
}

/// Iteration table as CSV plus the same records as `key=value` lines.
pub fn write_optimization(
    csv_path: &Path,
    log_path: &Path,
    report: &OptimizationReport,
) -> Result<()> {
    let mut w = writer(csv_path, &ITERATIONS_HEADER)?;
    for r in &report.iterations {
        w.write_record(record_fields(r))?;
    }
    w.flush()?;

    let mut log = BufWriter::new(File::create(log_path)?);
    for r in &report.iterations {
        let line: Vec<String> = ITERATIONS_HEADER
            .iter()
            .zip(record_fields(r))
            .map(|(k, v)| format!("{k}={v}"))
            .collect();
        writeln!(log, "{}", line.join(" "))?;
    }
    writeln!(
        log,
        "stop={:?} final_cost={}",
        report.stop,
        num(report.final_cost())
    )?;
    log.flush()?;
    Ok(())
}

/// Any serializable summary as a TOML file.
pub fn write_summary<T: Serialize>(path: &Path, summary: &T) -> Result<()> {
    let text = toml::to_string(summary)
        .map_err(|e| Error::ConfigInvalid(format!("cannot serialize summary: {e}")))?;
    std::fs::write(path, text)?;
    Ok(())
}
