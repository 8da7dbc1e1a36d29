//! Entry points behind the command line: forward runs, optimization runs and
//! the finite-difference gradient check, each writing into an output
//! directory.

use std::fs;
use std::path::Path;
use std::time::Instant;

use log::{info, warn};
use rand::Rng;
use serde::Serialize;

use crate::analysis::{fit_damping_rate, growth_summary, label_cell_correlation};
use crate::config::{ExperimentConfig, Mode, Preset};
use crate::control::ControlField;
use crate::domain::{PhaseGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::export;
use crate::fields::electric_energy;
use crate::forward::{forward_solve_with, ForwardTrajectory, ELECTRONS, IONS};
use crate::gradient::ControlProblem;
use crate::optimizer::{ncg_minimize, StopReason};
use crate::rng::Purpose;

/// Run `f` on a pool of `threads` workers (0: one per core).
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::ConfigInvalid(format!("threads: {e}")))?;
    pool.install(f)
}

/// Contents of `summary.toml`. Fields that do not apply to a run are left out.
#[derive(Debug, Clone, Default, Serialize)]
pub struct Summary {
    pub preset: String,
    pub mode: String,
    pub seed: u64,
    pub t_final: f64,
    pub n_t: usize,
    pub final_maxdev_e: f64,
    pub final_maxdev_i: f64,
    pub max_neutrality_error: f64,
    pub max_escaped_fraction: f64,
    pub damping_rate: Option<f64>,
    pub damping_r_squared: Option<f64>,
    pub damping_peaks: Option<usize>,
    pub damping_error: Option<String>,
    pub growth_factor: Option<f64>,
    pub t_saturation: Option<f64>,
    pub envelope_monotone: Option<bool>,
    pub worst_envelope_ratio: Option<f64>,
    pub mixing_correlation: Option<f64>,
    pub initial_cost: Option<f64>,
    pub final_cost: Option<f64>,
    pub iterations: Option<usize>,
    /// Accepted iterations with a strictly smaller cost than the previous one.
    pub decreasing_iterations: Option<usize>,
    pub stop_reason: Option<String>,
    pub initial_maxdev_e: Option<f64>,
    pub initial_maxdev_i: Option<f64>,
    pub max_abs_control: Option<f64>,
}

fn preset_name(p: Preset) -> String {
    toml::Value::try_from(p)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

fn base_summary(cfg: &ExperimentConfig, traj: &ForwardTrajectory) -> Summary {
    let d = &traj.diagnostics;
    let max_escaped = traj
        .escaped
        .iter()
        .zip(&traj.counts)
        .flat_map(|(e, c)| {
            (0..2).map(move |s| {
                if c[s] > 0 {
                    e[s] as f64 / c[s] as f64
                } else {
                    0.0
                }
            })
        })
        .fold(0.0, f64::max);
    Summary {
        preset: preset_name(cfg.preset),
        mode: match cfg.mode {
            Mode::Forward => "forward".into(),
            Mode::Optimize => "optimize".into(),
        },
        seed: cfg.seed,
        t_final: cfg.time.t_final,
        n_t: cfg.time.n_t,
        final_maxdev_e: *d.max_deviation[ELECTRONS].last().unwrap_or(&0.0),
        final_maxdev_i: *d.max_deviation[IONS].last().unwrap_or(&0.0),
        max_neutrality_error: d.neutrality_error.iter().copied().fold(0.0, f64::max),
        max_escaped_fraction: max_escaped,
        ..Default::default()
    }
}

/// Result of a forward-mode run.
#[derive(Debug, Clone)]
pub struct ForwardRun {
    pub trajectory: ForwardTrajectory,
    pub summary: Summary,
}

/// Run the configured experiment and write its outputs into `out`.
pub fn run(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    fs::create_dir_all(out)?;
    let start = Instant::now();
    let summary = with_threads(cfg.threads, || match cfg.mode {
        Mode::Forward => run_forward(cfg, out).map(|r| r.summary),
        Mode::Optimize => run_optimize(cfg, out),
    })?;
    export::write_summary(&out.join("summary.toml"), &summary)?;
    info!("finished in {:.1?}", start.elapsed());
    Ok(summary)
}

/// One forward solve under the initial control, with the configured
/// analyses of the field energy.
pub fn run_forward(cfg: &ExperimentConfig, out: &Path) -> Result<ForwardRun> {
    let init = cfg.initial_particles()?;
    let control = cfg.initial_control();
    let labels: Vec<f64> = init[ELECTRONS]
        .particles
        .iter()
        .map(|p| p.v1.signum())
        .collect();
    let grid = cfg.grid;
    let mut best_energy = f64::NEG_INFINITY;
    let mut mixing = None;
    let mut dump_error = None;
    let trajectory = forward_solve_with(
        &init,
        &control,
        &cfg.grid,
        &cfg.time,
        &cfg.forward_config(),
        |k, state, e| {
            if cfg.analysis.mixing {
                // the correlation at the first level of maximal energy
                let energy = electric_energy(e, grid.dx());
                if energy > best_energy {
                    best_energy = energy;
                    mixing = Some(label_cell_correlation(
                        &state[ELECTRONS],
                        &labels,
                        grid.p_max,
                        grid.v_max,
                        grid.n_x,
                        grid.n_v,
                    ));
                }
            }
            if cfg.export.phase_dumps.contains(&k) && dump_error.is_none() {
                if let Err(err) =
                    export::write_phase_dump(&out.join(format!("phase_{k:05}.csv")), state)
                {
                    dump_error = Some(err);
                }
            }
        },
    )?;
    if let Some(err) = dump_error {
        return Err(err);
    }
    write_trajectory(cfg, out, &trajectory, "diagnostics.csv", "fields.csv")?;
    if cfg.export.control {
        export::write_control(&out.join("control.csv"), &control)?;
    }

    let mut summary = base_summary(cfg, &trajectory);
    let d = &trajectory.diagnostics;
    if let Some([t0, t1]) = cfg.analysis.damping_window {
        match fit_damping_rate(&d.t, &d.electric_energy, (t0, t1)) {
            Ok(fit) => {
                info!(
                    "damping rate {:.4} (r^2 {:.3}, {} peaks)",
                    fit.rate,
                    fit.r_squared,
                    fit.peaks.len()
                );
                summary.damping_rate = Some(fit.rate);
                summary.damping_r_squared = Some(fit.r_squared);
                summary.damping_peaks = Some(fit.peaks.len());
            }
            Err(e) => {
                warn!("damping fit failed: {e}");
                summary.damping_error = Some(e.to_string());
            }
        }
    }
    if let Some(block) = cfg.analysis.growth_block {
        let g = growth_summary(&d.t, &d.electric_energy, block);
        info!(
            "energy grows by {:.3e} until t = {}",
            g.growth_factor, g.t_saturation
        );
        summary.growth_factor = Some(g.growth_factor);
        summary.t_saturation = Some(g.t_saturation);
        summary.envelope_monotone = Some(g.envelope_monotone(0.0));
        summary.worst_envelope_ratio = Some(g.worst_envelope_ratio);
    }
    summary.mixing_correlation = mixing;
    Ok(ForwardRun {
        trajectory,
        summary,
    })
}

fn write_trajectory(
    cfg: &ExperimentConfig,
    out: &Path,
    traj: &ForwardTrajectory,
    diagnostics: &str,
    fields: &str,
) -> Result<()> {
    if cfg.export.diagnostics {
        export::write_diagnostics(&out.join(diagnostics), &traj.diagnostics)?;
    }
    if cfg.export.fields {
        export::write_fields(&out.join(fields), &traj.efield, &traj.time, &traj.grid)?;
    }
    Ok(())
}

/// Nonlinear CG from the initial control.
pub fn run_optimize(cfg: &ExperimentConfig, out: &Path) -> Result<Summary> {
    let problem = cfg.control_problem()?;
    let b0 = cfg.initial_control();
    let initial = problem.simulate(&b0)?;
    write_trajectory(
        cfg,
        out,
        &initial,
        "diagnostics_initial.csv",
        "fields_initial.csv",
    )?;

    let report = ncg_minimize(&problem, &b0, &cfg.ncg)?;
    export::write_optimization(
        &out.join("optimization.csv"),
        &out.join("optimization.log"),
        &report,
    )?;
    let fin = match report.final_trajectory {
        Some(ref t) => t.clone(),
        None => problem.simulate(&report.final_control)?,
    };
    write_trajectory(cfg, out, &fin, "diagnostics.csv", "fields.csv")?;
    if cfg.export.control {
        export::write_control(&out.join("control.csv"), &report.final_control)?;
    }
    for &k in &cfg.export.phase_dumps {
        export::write_phase_dump(&out.join(format!("phase_{k:05}.csv")), fin.particles(k)?)?;
    }
    if cfg.export.gradient || cfg.export.adjoint {
        let (field, adj) = problem.gradient_at(&report.final_control, &fin)?;
        if cfg.export.gradient {
            export::write_gradient(&out.join("gradient.csv"), &field, &report.final_control)?;
        }
        if cfg.export.adjoint {
            export::write_adjoint(&out.join("adjoint.csv"), &adj, &cfg.time)?;
        }
    }

    let mut summary = base_summary(cfg, &fin);
    let costs: Vec<f64> = report.iterations.iter().map(|r| r.cost).collect();
    summary.initial_cost = costs.first().copied();
    summary.final_cost = Some(report.final_cost());
    summary.iterations = Some(report.iterations.len().saturating_sub(1));
    summary.decreasing_iterations = Some(costs.windows(2).filter(|w| w[1] < w[0]).count());
    summary.stop_reason = Some(
        match report.stop {
            StopReason::Stationary => "stationary",
            StopReason::Converged => "converged",
            StopReason::MaxIterations => "max_iterations",
            StopReason::LineSearchFailed => "line_search_failed",
        }
        .into(),
    );
    summary.initial_maxdev_e = initial.diagnostics.max_deviation[ELECTRONS].last().copied();
    summary.initial_maxdev_i = initial.diagnostics.max_deviation[IONS].last().copied();
    summary.max_abs_control = Some(report.final_control.max_abs());
    Ok(summary)
}

/// Random smooth direction: a cosine series with `modes` terms per axis and
/// coefficients uniform in `[-1, 1]`, scaled to `max |H| = 1`.
pub fn random_direction(
    rng: &mut impl Rng,
    time: TimeGrid,
    grid: &PhaseGrid,
    modes: usize,
) -> ControlField {
    let coef: Vec<f64> = (0..modes * modes)
        .map(|_| rng.random::<f64>() * 2.0 - 1.0)
        .collect();
    let (t_final, p_max) = (time.t_final, grid.p_max);
    let h = ControlField::from_fn(time, grid, |t, x| {
        let mut s = 0.0;
        for a in 0..modes {
            for b in 0..modes {
                s += coef[a * modes + b]
                    * (std::f64::consts::PI * a as f64 * t / t_final).cos()
                    * (std::f64::consts::PI * b as f64 * x / p_max).cos();
            }
        }
        s
    });
    let m = h.max_abs();
    let values = h.values.iter().map(|v| v / m).collect();
    h.with_values(values)
}

#[derive(Debug, Clone, Serialize)]
pub struct DirectionCheck {
    pub direction: usize,
    /// `(grad_V, H)_V` from the adjoint.
    pub adjoint: f64,
    /// `(J(B + eps H) - J(B - eps H)) / (2 eps)`.
    pub finite_difference: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub cost: f64,
    pub epsilon: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub worst_relative_error: f64,
    pub directions: Vec<DirectionCheck>,
}

/// Directional derivatives of the adjoint gradient against central
/// differences of the reduced cost, all with frozen noise.
pub fn gradient_check(cfg: &ExperimentConfig, problem: &ControlProblem) -> Result<GradcheckReport> {
    let g = &cfg.gradcheck;
    let base = g.base_control.build(cfg.time, &cfg.grid);
    let eval = problem.cost_and_gradient(&base)?;
    let (field, _) = eval.gradient.as_ref().expect("gradient requested");
    let mut rng = cfg.streams().key(Purpose::Directions, None).rng(0);
    let mut directions = Vec::with_capacity(g.directions);
    for j in 0..g.directions {
        let h = random_direction(&mut rng, cfg.time, &cfg.grid, g.modes);
        let adjoint = problem.metric.inner_v(&field.grad_v, &h.values);
        let jp = problem.cost(&base.step(g.epsilon, &h.values))?.cost.total();
        let jm = problem
            .cost(&base.step(-g.epsilon, &h.values))?
            .cost
            .total();
        let fd = (jp - jm) / (2.0 * g.epsilon);
        let relative_error = (adjoint - fd).abs() / fd.abs();
        info!("direction {j}: adjoint {adjoint:.6e}, difference quotient {fd:.6e}, relative error {relative_error:.3}");
        directions.push(DirectionCheck {
            direction: j,
            adjoint,
            finite_difference: fd,
            relative_error,
        });
    }
    let worst = directions
        .iter()
        .map(|d| d.relative_error)
        .fold(0.0, f64::max);
    Ok(GradcheckReport {
        cost: eval.cost.total(),
        epsilon: g.epsilon,
        tolerance: g.tolerance,
        passed: directions.iter().all(|d| d.relative_error <= g.tolerance),
        worst_relative_error: worst,
        directions,
    })
}

/// Gradient check on the configured problem; writes `gradcheck.csv` and
/// `gradcheck.toml`, plus the gradient dump when enabled.
pub fn run_gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<GradcheckReport> {
    fs::create_dir_all(out)?;
    with_threads(cfg.threads, || {
        let problem = cfg.control_problem()?;
        let report = gradient_check(cfg, &problem)?;
        let mut w = csv::Writer::from_path(out.join("gradcheck.csv"))?;
        w.write_record([
            "direction",
            "adjoint",
            "finite_difference",
            "relative_error",
        ])?;
        for d in &report.directions {
            w.write_record([
                d.direction.to_string(),
                format!("{}", d.adjoint),
                format!("{}", d.finite_difference),
                format!("{}", d.relative_error),
            ])?;
        }
        w.flush()?;
        if cfg.export.gradient {
            let base = cfg.gradcheck.base_control.build(cfg.time, &cfg.grid);
            let fwd = problem.simulate(&base)?;
            let (field, adj) = problem.gradient_at(&base, &fwd)?;
            export::write_gradient(&out.join("gradient.csv"), &field, &base)?;
            if cfg.export.adjoint {
                export::write_adjoint(&out.join("adjoint.csv"), &adj, &cfg.time)?;
            }
        }
        #[derive(Serialize)]
        struct Flat {
            cost: f64,
            epsilon: f64,
            tolerance: f64,
            passed: bool,
            worst_relative_error: f64,
        }
        export::write_summary(
            &out.join("gradcheck.toml"),
            &Flat {
                cost: report.cost,
                epsilon: report.epsilon,
                tolerance: report.tolerance,
                passed: report.passed,
                worst_relative_error: report.worst_relative_error,
            },
        )?;
        Ok(report)
    })
}
