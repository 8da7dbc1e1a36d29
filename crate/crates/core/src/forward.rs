//! Time marching of the two-species state system and its diagnostics.
//!
//! Step `k` (from `t^k` to `t^{k+1}`): count particles per spatial cell,
//! compute the charge density and `E^k`, then push every particle with
//! `E^k` and the control at the step midpoint, both linearly interpolated
//! to the particle position.

use log::warn;
use rayon::prelude::*;

use crate::control::ControlField;
use crate::domain::{Particle, PhaseGrid, SpeciesKind, SpeciesParticles, TimeGrid};
use crate::error::{Error, Result};
use crate::fields::{
    charge_density_from_counts, electric_energy, electric_field, interpolation_stencil,
    spatial_counts, DEFAULT_NEUTRALITY_TOL,
};
use crate::pusher::{boris_push, LocalFields};

/// Species order used throughout: electrons first, ions second.
pub const ELECTRONS: usize = 0;
pub const IONS: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForwardConfig {
    /// Keep every particle snapshot (needed by the adjoint and the cost).
    pub store_particles: bool,
    /// Ions are sampled once and never pushed.
    pub static_ions: bool,
    /// Largest tolerated fraction of particles outside the velocity domain.
    pub escape_limit: f64,
    pub neutrality_tol: f64,
}

impl Default for ForwardConfig {
    fn default() -> Self {
        Self {
            store_particles: true,
            static_ions: false,
            escape_limit: 0.01,
            neutrality_tol: DEFAULT_NEUTRALITY_TOL,
        }
    }
}

/// Per-level diagnostics; index `s` is the species (electrons, ions).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DiagnosticsSeries {
    pub t: Vec<f64>,
    pub electric_energy: Vec<f64>,
    pub mean_x: [Vec<f64>; 2],
    pub var_x: [Vec<f64>; 2],
    pub max_deviation: [Vec<f64>; 2],
    /// Net charge `|sum rho dx|` relative to `sum |rho| dx`.
    pub neutrality_error: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ForwardTrajectory {
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    /// Species parameters and per-particle masses of the two lists.
    pub species: [SpeciesParticles; 2],
    /// Particle snapshots per level, when stored; `snapshots[k][s]`.
    pub snapshots: Option<Vec<[Vec<Particle>; 2]>>,
    /// Electric field at cell centres per level.
    pub efield: Vec<Vec<f64>>,
    pub diagnostics: DiagnosticsSeries,
    /// Particles outside the velocity domain per level and species.
    pub escaped: Vec<[usize; 2]>,
    /// Particle counts per level and species.
    pub counts: Vec<[usize; 2]>,
    /// Ions were held fixed.
    pub static_ions: bool,
}

impl ForwardTrajectory {
    pub fn particles(&self, k: usize) -> Result<&[Vec<Particle>; 2]> {
        self.snapshots
            .as_ref()
            .map(|s| &s[k])
            .ok_or(Error::MissingSnapshots("particle"))
    }
}

/// Position statistics of one particle list: mean, variance, and the largest
/// distance from the domain centre.
pub fn position_stats(particles: &[Particle], p_max: f64) -> (f64, f64, f64) {
    if particles.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = particles.len() as f64;
    let mean = particles.iter().map(|p| p.x).sum::<f64>() / n;
    let var = particles
        .iter()
        .map(|p| (p.x - mean) * (p.x - mean))
        .sum::<f64>()
        / n;
    let maxdev = particles
        .iter()
        .map(|p| (p.x - 0.5 * p_max).abs())
        .fold(0.0, f64::max);
    (mean, var, maxdev)
}

fn velocity_escapes(particles: &[Particle], v_max: f64) -> usize {
    particles
        .par_iter()
        .filter(|p| !(p.v1.abs() < v_max && p.v2.abs() < v_max))
        .count()
}

/// Electric field of the current particle state.
pub fn field_of(
    state: &[Vec<Particle>; 2],
    masses: [f64; 2],
    grid: &PhaseGrid,
    tol: f64,
) -> Result<(Vec<f64>, f64)> {
    let ne = spatial_counts(&state[ELECTRONS], grid);
    let ni = spatial_counts(&state[IONS], grid);
    let rho = charge_density_from_counts(&ni, masses[IONS], &ne, masses[ELECTRONS], grid.dx())?;
    let net = rho.iter().sum::<f64>().abs() * grid.dx();
    let scale = rho.iter().map(|r| r.abs()).sum::<f64>() * grid.dx();
    let e = electric_field(&rho, grid.dx(), tol)?;
    Ok((e, if scale > 0.0 { net / scale } else { 0.0 }))
}

/// Push a particle list one step with frozen field arrays.
pub fn push_all(
    particles: &mut [Particle],
    species: &crate::domain::SpeciesParams,
    efield: &[f64],
    bfield: &[f64],
    grid: &PhaseGrid,
    dt: f64,
) {
    let (n_x, dx, p_max) = (grid.n_x, grid.dx(), grid.p_max);
    particles.par_iter_mut().for_each(|p| {
        let (idx, w) = interpolation_stencil(n_x, dx, p.x);
        let fields = LocalFields {
            e: w[0] * efield[idx[0]] + w[1] * efield[idx[1]],
            b: w[0] * bfield[idx[0]] + w[1] * bfield[idx[1]],
        };
        *p = boris_push(*p, fields, species, dt, p_max);
    });
}

/// Run the forward solver from the given initial lists.
///
/// `observer` sees the state at every level `k = 0..=n_t` together with the
/// electric field at that level.
pub fn forward_solve_with(
    init: &[SpeciesParticles; 2],
    control: &ControlField,
    grid: &PhaseGrid,
    time: &TimeGrid,
    cfg: &ForwardConfig,
    mut observer: impl FnMut(usize, &[Vec<Particle>; 2], &[f64]),
) -> Result<ForwardTrajectory> {
    control.check_shape(time, grid)?;
    if init[ELECTRONS].species.kind != SpeciesKind::Electrons
        || init[IONS].species.kind != SpeciesKind::Ions
    {
        return Err(Error::ConfigInvalid(
            "initial lists must be ordered (electrons, ions)".into(),
        ));
    }
    let masses = [init[ELECTRONS].mass, init[IONS].mass];
    let mut state = [
        init[ELECTRONS].particles.clone(),
        init[IONS].particles.clone(),
    ];
    let dt = time.dt();
    let levels = time.levels();

    let mut diagnostics = DiagnosticsSeries::default();
    let mut snapshots = cfg.store_particles.then(|| Vec::with_capacity(levels));
    let mut efield = Vec::with_capacity(levels);
    let mut escaped = Vec::with_capacity(levels);
    let mut counts = Vec::with_capacity(levels);
    let mut warned = false;

    for k in 0..levels {
        let (e, neutrality) = field_of(&state, masses, grid, cfg.neutrality_tol)?;

        let mut esc = [0usize; 2];
        for s in 0..2 {
            esc[s] = velocity_escapes(&state[s], grid.v_max);
            let n = state[s].len();
            if esc[s] > 0 && !warned {
                warn!(
                    "{} of {} {} particles outside the velocity domain at step {k}",
                    esc[s],
                    n,
                    init[s].species.kind.label()
                );
                warned = true;
            }
            if n > 0 && esc[s] as f64 > cfg.escape_limit * n as f64 {
                return Err(Error::EscapeThresholdExceeded {
                    species: init[s].species.kind.label(),
                    escaped: esc[s],
                    total: n,
                    limit: cfg.escape_limit,
                });
            }
        }

        diagnostics.t.push(time.t(k));
        diagnostics
            .electric_energy
            .push(electric_energy(&e, grid.dx()));
        diagnostics.neutrality_error.push(neutrality);
        for s in 0..2 {
            let (m, v, d) = position_stats(&state[s], grid.p_max);
            diagnostics.mean_x[s].push(m);
            diagnostics.var_x[s].push(v);
            diagnostics.max_deviation[s].push(d);
        }
        observer(k, &state, &e);
        escaped.push(esc);
        counts.push([state[0].len(), state[1].len()]);
        if let Some(snaps) = snapshots.as_mut() {
            snaps.push(state.clone());
        }

        if k + 1 < levels {
            let b = control.step_row(k);
            push_all(
                &mut state[ELECTRONS],
                &init[ELECTRONS].species,
                &e,
                &b,
                grid,
                dt,
            );
            if !cfg.static_ions {
                push_all(&mut state[IONS], &init[IONS].species, &e, &b, grid, dt);
            }
        }
        efield.push(e);
    }

    Ok(ForwardTrajectory {
        grid: *grid,
        time: *time,
        species: [
            SpeciesParticles::new(init[0].species, Vec::new(), masses[0]),
            SpeciesParticles::new(init[1].species, Vec::new(), masses[1]),
        ],
        snapshots,
        efield,
        diagnostics,
        escaped,
        counts,
        static_ions: cfg.static_ions,
    })
}

pub fn forward_solve(
    init: &[SpeciesParticles; 2],
    control: &ControlField,
    grid: &PhaseGrid,
    time: &TimeGrid,
    cfg: &ForwardConfig,
) -> Result<ForwardTrajectory> {
    forward_solve_with(init, control, grid, time, cfg, |_, _, _| {})
}
