//! Backward solver for the adjoint densities `lambda+-`.
//!
//! The adjoint is carried by particles of one mass per species. One backward
//! step from level `k + 1` to `k`:
//!
//! 1. transport: every particle is pulled back through the inverse of the
//!    forward step `k` (same `E^k`, same control), giving `lambda~^k`;
//! 2. reaction and source: new particles are created cell by cell for the
//!    mass `dt (|theta^k| - R^k)`, where the reaction term `R` couples the
//!    adjoint to the electric field response of the forward state.
//!
//! Fractional particle numbers are resolved by stochastic rounding. Cells
//! where the mass is negative are either clamped (nothing created, tallied)
//! or filled with negative-mass particles, depending on [`NegativeSource`].

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::ControlField;
use crate::domain::{cell_index, OccupationTensor, Particle, PhaseGrid, SpeciesParams, TimeGrid};
use crate::error::{Error, Result};
use crate::fields::{assemble_occupation, interpolate_periodic, symmetric_antiderivative};
use crate::forward::{ForwardTrajectory, IONS};
use crate::pusher::{boris_pull, LocalFields};
use crate::rng::{Purpose, StreamKey, Streams};
use crate::sampling::{sample_direct, DensitySpec};
use crate::tracking::{truncated_normal, TrackingWeights};

/// Finite difference used for velocity derivatives of occupation tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VelocityStencil {
    /// `(u[l+1] - u[l]) / dv`.
    Forward,
    /// `(u[l+1] - u[l-1]) / (2 dv)`.
    Central,
    /// `(8 (u[l+1] - u[l-1]) - (u[l+2] - u[l-2])) / (12 dv)`.
    Central4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    /// Create nothing where the source mass is negative.
    Clamp,
    /// Create negative-mass particles where the source mass is negative.
    Signed,
}

/// How the particles representing `lambda(T) = -phi` are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminalSampling {
    /// Independent draws from the normalized Gaussian.
    Iid,
    /// Cell by cell like the sources: the mass of every cell rounded
    /// stochastically to whole particles, placed inside the cell from the
    /// Gaussian restricted to it.
    Stratified,
}

/// How the forward density enters the velocity integrals `int lambda d_v f dv`
/// of the reaction term and of `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ForwardQuadrature {
    /// Velocity differences of the forward occupation tensor against `lambda`.
    Tensor,
    /// Summed by parts onto `lambda`: forward particles sample
    /// `-int f d_v lambda dv`, with `d_v lambda` from the piecewise quadratic
    /// reconstruction of the `lambda` occupation numbers at each particle.
    Particles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdjointConfig {
    /// Particles representing the terminal condition, per species.
    pub n_terminal: usize,
    pub stencil: VelocityStencil,
    pub negative_source: NegativeSource,
    /// Include the electric-field reaction term.
    pub reaction: bool,
    pub quadrature: ForwardQuadrature,
    pub terminal: TerminalSampling,
}

impl AdjointConfig {
    pub fn validate(&self) -> Result<()> {
        if self.quadrature == ForwardQuadrature::Particles
            && self.stencil == VelocityStencil::Forward
        {
            return Err(Error::ConfigInvalid(
                "adjoint.quadrature = \"particles\" needs a central adjoint.stencil".into(),
            ));
        }
        Ok(())
    }
}

impl Default for AdjointConfig {
    fn default() -> Self {
        Self {
            n_terminal: 100_000,
            stencil: VelocityStencil::Central,
            negative_source: NegativeSource::Signed,
            reaction: true,
            quadrature: ForwardQuadrature::Particles,
            terminal: TerminalSampling::Stratified,
        }
    }
}

/// Particles of mass `+m` and `-m`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SignedList {
    pub pos: Vec<Particle>,
    pub neg: Vec<Particle>,
}

impl SignedList {
    pub fn len(&self) -> usize {
        self.pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Signed occupation numbers `count(pos) - count(neg)`.
    pub fn tensor(&self, grid: &PhaseGrid) -> OccupationTensor {
        let mut t = assemble_occupation(&self.pos, grid);
        if !self.neg.is_empty() {
            let n = assemble_occupation(&self.neg, grid);
            t.counts
                .iter_mut()
                .zip(&n.counts)
                .for_each(|(a, b)| *a -= b);
            t.escaped
                .iter_mut()
                .zip(&n.escaped)
                .for_each(|(a, b)| *a -= b);
        }
        t
    }
}

#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    /// Mass of one adjoint particle per species.
    pub masses: [f64; 2],
    /// `lambda^k` occupation numbers for `k = 0..=n_t`.
    pub levels: Vec<[OccupationTensor; 2]>,
    /// `lambda~^k` (transported, before creation) for `k = 0..n_t`.
    pub transported: Vec<[OccupationTensor; 2]>,
    /// Adjoint particles per level and species.
    pub counts: Vec<[usize; 2]>,
    /// Particles created during the step ending at level `k`, for `k < n_t`.
    pub created: Vec<usize>,
    /// Cells with negative source mass during that step.
    pub clamped: Vec<usize>,
}

/// Occupation tensors of the forward lists at every level.
pub fn forward_tensors(fwd: &ForwardTrajectory) -> Result<Vec<[OccupationTensor; 2]>> {
    (0..fwd.time.levels())
        .map(|k| {
            let s = fwd.particles(k)?;
            Ok([
                assemble_occupation(&s[0], &fwd.grid),
                assemble_occupation(&s[1], &fwd.grid),
            ])
        })
        .collect()
}

/// Per-particle adjoint mass: `C_phi / n`, or `C_theta T / n` without a
/// terminal term.
pub fn adjoint_mass(c_theta: f64, c_phi: f64, t_final: f64, n_terminal: usize) -> f64 {
    if n_terminal == 0 {
        return 0.0;
    }
    if c_phi > 0.0 {
        c_phi / n_terminal as f64
    } else {
        c_theta * t_final / n_terminal as f64
    }
}

/// Particles representing `lambda(T) = -phi` for one species.
pub fn terminal_condition(
    c_phi: f64,
    mean: [f64; 3],
    var: [f64; 3],
    n_terminal: usize,
    p_max: f64,
    key: StreamKey,
) -> Result<Vec<Particle>> {
    if c_phi == 0.0 || n_terminal == 0 {
        return Ok(Vec::new());
    }
    sample_direct(&DensitySpec::Gaussian { mean, var }, n_terminal, p_max, key)
}

/// Difference of `u` along `v1` (axis 1) or `v2` (axis 2) at cell `(l, m)` of
/// one spatial column, with zero values outside the velocity domain.
#[inline]
pub fn velocity_difference(
    column: &[f64],
    n_v: usize,
    l: usize,
    m: usize,
    axis: usize,
    stencil: VelocityStencil,
) -> f64 {
    let at = |l: isize, m: isize| -> f64 {
        if l < 0 || m < 0 || l >= n_v as isize || m >= n_v as isize {
            0.0
        } else {
            column[l as usize * n_v + m as usize]
        }
    };
    let (l, m) = (l as isize, m as isize);
    let (dl, dm) = if axis == 1 { (1, 0) } else { (0, 1) };
    match stencil {
        VelocityStencil::Forward => at(l + dl, m + dm) - at(l, m),
        VelocityStencil::Central => 0.5 * (at(l + dl, m + dm) - at(l - dl, m - dm)),
        VelocityStencil::Central4 => {
            (8.0 * (at(l + dl, m + dm) - at(l - dl, m - dm))
                - (at(l + 2 * dl, m + 2 * dm) - at(l - 2 * dl, m - 2 * dm)))
                / 12.0
        }
    }
}

/// Weights of the quadratic that reproduces the averages of three adjacent
/// cells, at offset `xi` in `[-1/2, 1/2)` from the middle centre, in cell
/// units: values, then first derivatives.
fn quadratic_weights(xi: f64) -> ([f64; 3], [f64; 3]) {
    let c = 0.5 * xi * xi - 1.0 / 24.0;
    (
        [c - 0.5 * xi, 1.0 - 2.0 * c, c + 0.5 * xi],
        [xi - 0.5, -2.0 * xi, xi + 0.5],
    )
}

/// Gradient `(d_x, d_v1, d_v2)` at `p` of the piecewise quadratic
/// reconstruction of a tensor of cell averages, periodic in `x` and zero
/// outside the velocity domain. In tensor units per unit length; `None`
/// outside the velocity domain.
pub fn reconstructed_gradient(t: &OccupationTensor, p: &Particle) -> Option<[f64; 3]> {
    let grid = &t.grid;
    let c = cell_index(p, grid).ok()?;
    let (n_x, n_v, dx, dv) = (grid.n_x, grid.n_v, grid.dx(), grid.dv());
    let nv2 = n_v * n_v;
    let (wx, dwx) = quadratic_weights((p.x - grid.x_center(c.i)) / dx);
    let (w1, dw1) = quadratic_weights((p.v1 - grid.v_center(c.l)) / dv);
    let (w2, dw2) = quadratic_weights((p.v2 - grid.v_center(c.m)) / dv);
    let mut g = [0.0; 3];
    for a in 0..3 {
        let i = (c.i as isize + a as isize - 1).rem_euclid(n_x as isize) as usize;
        for b in 0..3 {
            let l = c.l as isize + b as isize - 1;
            if l < 0 || l >= n_v as isize {
                continue;
            }
            for d in 0..3 {
                let m = c.m as isize + d as isize - 1;
                if m < 0 || m >= n_v as isize {
                    continue;
                }
                let u = t.counts[i * nv2 + l as usize * n_v + m as usize];
                if u == 0.0 {
                    continue;
                }
                g[0] += dwx[a] * w1[b] * w2[d] * u;
                g[1] += wx[a] * dw1[b] * w2[d] * u;
                g[2] += wx[a] * w1[b] * dw2[d] * u;
            }
        }
    }
    Some([g[0] / dx, g[1] / dv, g[2] / dv])
}

/// Same integrand as [`reaction_integrand`], with the forward density
/// sampled by its particles (see [`ForwardQuadrature::Particles`]).
pub fn reaction_integrand_particles(
    lambda: &[OccupationTensor; 2],
    lambda_mass: [f64; 2],
    f: &[Vec<Particle>; 2],
    f_mass: [f64; 2],
    species: [&SpeciesParams; 2],
) -> Result<Vec<f64>> {
    let grid = lambda[0].grid;
    lambda[1].check_grid(&grid)?;
    let (dx, vol) = (grid.dx(), grid.cell_volume());
    let mut a = vec![0.0; grid.n_x];
    for s in 0..2 {
        let scale = -species[s].mu_v * f_mass[s] * (lambda_mass[s] / vol) / dx;
        if scale == 0.0 {
            continue;
        }
        for p in &f[s] {
            if let Some(d) = reconstructed_gradient(&lambda[s], p) {
                a[grid.x_index(p.x)] += scale * d[1];
            }
        }
    }
    Ok(a)
}

/// `a(x_i) = sum_s mu_v^s int lambda_s d_v1 f_s dv` per spatial cell, in
/// density units.
pub fn reaction_integrand(
    lambda: &[OccupationTensor; 2],
    lambda_mass: [f64; 2],
    f: &[OccupationTensor; 2],
    f_mass: [f64; 2],
    species: [&SpeciesParams; 2],
    stencil: VelocityStencil,
) -> Result<Vec<f64>> {
    let grid = f[0].grid;
    for t in lambda.iter().chain(f) {
        t.check_grid(&grid)?;
    }
    let (n_x, n_v, dv, vol) = (grid.n_x, grid.n_v, grid.dv(), grid.cell_volume());
    let nv2 = n_v * n_v;
    Ok((0..n_x)
        .map(|i| {
            let mut a = 0.0;
            for s in 0..2 {
                let scale = species[s].mu_v * (lambda_mass[s] / vol) * (f_mass[s] / vol) * dv;
                if scale == 0.0 {
                    continue;
                }
                let fc = &f[s].counts[i * nv2..(i + 1) * nv2];
                let lc = &lambda[s].counts[i * nv2..(i + 1) * nv2];
                let mut sum = 0.0;
                for l in 0..n_v {
                    for m in 0..n_v {
                        let lam = lc[l * n_v + m];
                        if lam != 0.0 {
                            sum += lam * velocity_difference(fc, n_v, l, m, 1, stencil);
                        }
                    }
                }
                a += scale * sum;
            }
            a
        })
        .collect())
}

/// Reaction terms `R^s(x_i) = -sign_s K[a](x_i)` for (electrons, ions), with
/// `K` the symmetrized cumulative quadrature used for the electric field.
pub fn reaction_field(
    lambda: &[OccupationTensor; 2],
    lambda_mass: [f64; 2],
    f: &[OccupationTensor; 2],
    f_mass: [f64; 2],
    species: [&SpeciesParams; 2],
    stencil: VelocityStencil,
) -> Result<[Vec<f64>; 2]> {
    let a = reaction_integrand(lambda, lambda_mass, f, f_mass, species, stencil)?;
    Ok(reaction_from_integrand(&a, f[0].grid.dx(), species))
}

/// `R^s = -sign_s K[a]`.
pub fn reaction_from_integrand(a: &[f64], dx: f64, species: [&SpeciesParams; 2]) -> [Vec<f64>; 2] {
    let k = symmetric_antiderivative(a, dx);
    [0, 1].map(|s| k.iter().map(|v| -species[s].sign() * v).collect())
}

/// Particles created in one step for one species, and the number of cells
/// with negative mass.
pub struct Creation {
    pub pos: Vec<Particle>,
    pub neg: Vec<Particle>,
    pub clamped: usize,
}

/// Diagonal Gaussian `(mean, var)` that `|theta|` is proportional to.
pub type GaussianShape = ([f64; 3], [f64; 3]);

/// Create particles for the cell masses `dt (|theta| cell mass - R(x_i) vol)`.
///
/// With [`NegativeSource::Clamp`] the net mass of each cell is placed
/// uniformly in the cell and nothing is created where it is negative. With
/// [`NegativeSource::Signed`] the two parts are created separately: the
/// tracking part inside each cell from `shape` when given (uniformly
/// otherwise), and the reaction part uniformly with the sign of `-R`.
/// `clamped` counts the cells with negative net mass in both modes.
#[allow(clippy::too_many_arguments)]
pub fn create_reaction_source_particles(
    theta_masses: &[f64],
    shape: Option<GaussianShape>,
    reaction: Option<&[f64]>,
    dt: f64,
    particle_mass: f64,
    grid: &PhaseGrid,
    mode: NegativeSource,
    key: StreamKey,
    step: usize,
) -> Creation {
    let (n_x, n_v, dx, dv) = (grid.n_x, grid.n_v, grid.dx(), grid.dv());
    let nv2 = n_v * n_v;
    let vol = grid.cell_volume();
    let columns: Vec<Creation> = (0..n_x)
        .into_par_iter()
        .map(|i| {
            let mut rng = key.rng((step * n_x + i) as u64);
            let mut out = Creation {
                pos: Vec::new(),
                neg: Vec::new(),
                clamped: 0,
            };
            let r = reaction.map_or(0.0, |r| r[i]);
            let x0 = i as f64 * dx;
            for c in 0..nv2 {
                let (l, m) = (c / n_v, c % n_v);
                let lo = [x0, -grid.v_max + l as f64 * dv, -grid.v_max + m as f64 * dv];
                let theta = dt * theta_masses[i * nv2 + c];
                let react = -dt * r * vol;
                if theta + react < 0.0 {
                    out.clamped += 1;
                }
                match mode {
                    NegativeSource::Clamp => {
                        let count =
                            round_stochastic((theta + react).max(0.0) / particle_mass, &mut rng);
                        push_uniform(&mut out.pos, count, lo, [dx, dv, dv], &mut rng);
                    }
                    NegativeSource::Signed => {
                        let count = round_stochastic(theta / particle_mass, &mut rng);
                        match shape {
                            Some((mean, var)) => {
                                for _ in 0..count {
                                    let z: [f64; 3] = std::array::from_fn(|d| {
                                        let h = if d == 0 { dx } else { dv };
                                        truncated_normal(
                                            mean[d],
                                            var[d].sqrt(),
                                            lo[d],
                                            lo[d] + h,
                                            rng.random(),
                                        )
                                    });
                                    out.pos.push(Particle::new(z[0], z[1], z[2]));
                                }
                            }
                            None => push_uniform(&mut out.pos, count, lo, [dx, dv, dv], &mut rng),
                        }
                        let count = round_stochastic(react.abs() / particle_mass, &mut rng);
                        let target = if react > 0.0 {
                            &mut out.pos
                        } else {
                            &mut out.neg
                        };
                        push_uniform(target, count, lo, [dx, dv, dv], &mut rng);
                    }
                }
            }
            out
        })
        .collect();
    let mut all = Creation {
        pos: Vec::new(),
        neg: Vec::new(),
        clamped: 0,
    };
    for c in columns {
        all.pos.extend(c.pos);
        all.neg.extend(c.neg);
        all.clamped += c.clamped;
    }
    all
}

/// `floor(n)` plus one with probability `frac(n)`.
fn round_stochastic(n: f64, rng: &mut impl Rng) -> usize {
    if n <= 0.0 {
        return 0;
    }
    let whole = n.floor();
    whole as usize + usize::from(rng.random::<f64>() < n - whole)
}

fn push_uniform(
    out: &mut Vec<Particle>,
    count: usize,
    lo: [f64; 3],
    h: [f64; 3],
    rng: &mut impl Rng,
) {
    for _ in 0..count {
        out.push(Particle::new(
            lo[0] + rng.random::<f64>() * h[0],
            lo[1] + rng.random::<f64>() * h[1],
            lo[2] + rng.random::<f64>() * h[2],
        ));
    }
}

fn pull_all(
    list: &mut [Particle],
    species: &SpeciesParams,
    efield: &[f64],
    bfield: &[f64],
    grid: &PhaseGrid,
    dt: f64,
) {
    let dx = grid.dx();
    list.par_iter_mut().for_each(|p| {
        *p = boris_pull(
            *p,
            |x| LocalFields {
                e: interpolate_periodic(efield, dx, x),
                b: interpolate_periodic(bfield, dx, x),
            },
            species,
            dt,
            grid.p_max,
        );
    });
}

/// Backward sweep from `lambda(T) = -phi` to `t = 0`.
pub fn adjoint_solve(
    fwd: &ForwardTrajectory,
    f_tensors: &[[OccupationTensor; 2]],
    control: &ControlField,
    weights: &TrackingWeights,
    cfg: &AdjointConfig,
    streams: &Streams,
) -> Result<AdjointTrajectory> {
    cfg.validate()?;
    let (grid, time): (PhaseGrid, TimeGrid) = (fwd.grid, fwd.time);
    control.check_shape(&time, &grid)?;
    if f_tensors.len() != time.levels() {
        return Err(Error::GridMismatch(format!(
            "{} forward tensors for {} levels",
            f_tensors.len(),
            time.levels()
        )));
    }
    let species = [&fwd.species[0].species, &fwd.species[1].species];
    let f_mass = [fwd.species[0].mass, fwd.species[1].mass];
    let dt = time.dt();
    let masses: [f64; 2] = [0, 1].map(|s| {
        let w = weights.get(s);
        adjoint_mass(w.c_theta, w.c_phi, time.t_final, cfg.n_terminal)
    });

    let mut lists: [SignedList; 2] = Default::default();
    for s in 0..2 {
        let w = weights.get(s);
        let key = streams.key(Purpose::AdjointTerminal, Some(species[s].kind));
        lists[s].pos = match cfg.terminal {
            TerminalSampling::Iid => terminal_condition(
                w.c_phi,
                w.target_terminal,
                w.sigma_phi,
                cfg.n_terminal,
                grid.p_max,
                key,
            )?,
            TerminalSampling::Stratified if masses[s] > 0.0 && w.c_phi > 0.0 => {
                create_reaction_source_particles(
                    &w.phi_cell_masses(&grid),
                    Some((w.target_terminal, w.sigma_phi)),
                    None,
                    1.0,
                    masses[s],
                    &grid,
                    NegativeSource::Signed,
                    key,
                    0,
                )
                .pos
            }
            TerminalSampling::Stratified => Vec::new(),
        };
    }

    let n = time.n_t;
    let mut levels: Vec<Option<[OccupationTensor; 2]>> = vec![None; n + 1];
    let mut transported: Vec<Option<[OccupationTensor; 2]>> = vec![None; n];
    let mut counts = vec![[0usize; 2]; n + 1];
    let mut created = vec![0usize; n];
    let mut clamped = vec![0usize; n];

    levels[n] = Some([lists[0].tensor(&grid), lists[1].tensor(&grid)]);
    counts[n] = [lists[0].len(), lists[1].len()];

    for k in (0..n).rev() {
        let b = control.step_row(k);
        for s in 0..2 {
            if s == IONS && fwd.static_ions {
                continue;
            }
            pull_all(&mut lists[s].pos, species[s], &fwd.efield[k], &b, &grid, dt);
            pull_all(&mut lists[s].neg, species[s], &fwd.efield[k], &b, &grid, dt);
        }
        let lt = [lists[0].tensor(&grid), lists[1].tensor(&grid)];

        let reaction = match (cfg.reaction, cfg.quadrature) {
            (false, _) => None,
            (true, ForwardQuadrature::Tensor) => Some(reaction_field(
                &lt,
                masses,
                &f_tensors[k],
                f_mass,
                species,
                cfg.stencil,
            )?),
            (true, ForwardQuadrature::Particles) => {
                let a =
                    reaction_integrand_particles(&lt, masses, fwd.particles(k)?, f_mass, species)?;
                Some(reaction_from_integrand(&a, grid.dx(), species))
            }
        };
        for s in 0..2 {
            if masses[s] == 0.0 {
                continue;
            }
            let w = weights.get(s);
            let theta = w.theta_cell_masses(time.t(k), &grid);
            let key = streams.key(Purpose::AdjointCreation, Some(species[s].kind));
            let c = create_reaction_source_particles(
                &theta,
                Some((w.target_at(time.t(k)), w.sigma_theta)),
                reaction.as_ref().map(|r| r[s].as_slice()),
                dt,
                masses[s],
                &grid,
                cfg.negative_source,
                key,
                k,
            );
            created[k] += c.pos.len() + c.neg.len();
            clamped[k] += c.clamped;
            lists[s].pos.extend(c.pos);
            lists[s].neg.extend(c.neg);
        }
        transported[k] = Some(lt);
        levels[k] = Some([lists[0].tensor(&grid), lists[1].tensor(&grid)]);
        counts[k] = [lists[0].len(), lists[1].len()];
    }

    Ok(AdjointTrajectory {
        masses,
        levels: levels.into_iter().map(Option::unwrap).collect(),
        transported: transported.into_iter().map(Option::unwrap).collect(),
        counts,
        created,
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{SpeciesParticles, TimeGrid};
    use crate::forward::{forward_solve, ForwardConfig};
    use crate::sampling::{maxwellian_uniform, sample_direct};
    use crate::tracking::{cell_masses, SpeciesTracking};

    fn grid() -> PhaseGrid {
        PhaseGrid::new(8.0, 4.0, 8, 8).unwrap()
    }

    fn forward(time: TimeGrid, mu: f64) -> ForwardTrajectory {
        forward_with(time, mu, ForwardConfig::default())
    }

    fn forward_with(time: TimeGrid, mu: f64, cfg: ForwardConfig) -> ForwardTrajectory {
        let g = grid();
        let spec = maxwellian_uniform(8.0).spec;
        let ps = sample_direct(&spec, 4000, 8.0, Streams::new(2).key(Purpose::Test, None)).unwrap();
        let init = [
            SpeciesParticles::with_total_mass(SpeciesParams::electrons(), ps.clone(), 8.0),
            SpeciesParticles::with_total_mass(SpeciesParams::ions(mu, mu).unwrap(), ps, 8.0),
        ];
        forward_solve(&init, &ControlField::zeros(time, &g), &g, &time, &cfg).unwrap()
    }

    #[test]
    fn no_tracking_no_adjoint() {
        let t = TimeGrid::new(0.5, 5).unwrap();
        let fwd = forward(t, 0.05);
        let ft = forward_tensors(&fwd).unwrap();
        let adj = adjoint_solve(
            &fwd,
            &ft,
            &ControlField::zeros(t, &grid()),
            &TrackingWeights::off(),
            &AdjointConfig::default(),
            &Streams::new(1),
        )
        .unwrap();
        assert!(adj.counts.iter().all(|c| *c == [0, 0]));
        assert!(adj
            .levels
            .iter()
            .all(|l| l[0].total() == 0.0 && l[1].total() == 0.0));
    }

    #[test]
    fn terminal_only_keeps_count() {
        let t = TimeGrid::new(0.5, 5).unwrap();
        let fwd = forward(t, 0.05);
        let ft = forward_tensors(&fwd).unwrap();
        let mut w = TrackingWeights::off();
        w.electrons = SpeciesTracking::stationary(0.0, 2.0, [4.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let cfg = AdjointConfig {
            n_terminal: 3000,
            reaction: false,
            terminal: TerminalSampling::Iid,
            ..Default::default()
        };
        let adj = adjoint_solve(
            &fwd,
            &ft,
            &ControlField::zeros(t, &grid()),
            &w,
            &cfg,
            &Streams::new(1),
        )
        .unwrap();
        assert!(adj.counts.iter().all(|c| *c == [3000, 0]));
        assert!(adj.created.iter().all(|c| *c == 0));
    }

    #[test]
    fn stratified_terminal_matches_cell_masses() {
        let t = TimeGrid::new(0.5, 5).unwrap();
        let fwd = forward(t, 0.05);
        let ft = forward_tensors(&fwd).unwrap();
        let mut w = TrackingWeights::off();
        w.electrons = SpeciesTracking::stationary(0.0, 2.0, [4.0, 0.0, 0.0], [1.0, 1.0, 1.0]);
        let cfg = AdjointConfig {
            n_terminal: 20_000,
            reaction: false,
            ..Default::default()
        };
        let adj = adjoint_solve(
            &fwd,
            &ft,
            &ControlField::zeros(t, &grid()),
            &w,
            &cfg,
            &Streams::new(1),
        )
        .unwrap();
        let g = grid();
        let masses = w.electrons.phi_cell_masses(&g);
        let top = &adj.levels[t.n_t][0];
        // every cell within one particle of its expected count
        for (c, m) in masses.iter().enumerate() {
            let expected = m / adj.masses[0];
            assert!(
                (top.counts[c] - expected).abs() < 1.0,
                "cell {c}: {} vs {expected}",
                top.counts[c]
            );
        }
        let inside: f64 = masses.iter().sum::<f64>() / adj.masses[0];
        assert!((adj.counts[t.n_t][0] as f64 - inside).abs() < 4.0 * inside.sqrt());
    }

    #[test]
    fn terminal_samples_are_centred() {
        let key = Streams::new(4).key(Purpose::Test, None);
        let n = 20_000;
        let ps = terminal_condition(1.0, [4.0, 0.5, -0.5], [0.25, 1.0, 1.0], n, 8.0, key).unwrap();
        let m = ps.iter().map(|p| p.x).sum::<f64>() / n as f64;
        assert!((m - 4.0).abs() < 3.0 * 0.5 / (n as f64).sqrt());
        assert!(terminal_condition(0.0, [0.0; 3], [1.0; 3], 10, 8.0, key)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn zero_lambda_or_flat_f_gives_no_reaction() {
        let g = grid();
        let s = [
            SpeciesParams::electrons(),
            SpeciesParams::ions(0.1, 0.1).unwrap(),
        ];
        let zero = [OccupationTensor::zeros(g), OccupationTensor::zeros(g)];
        let mut flat = OccupationTensor::zeros(g);
        flat.counts.iter_mut().for_each(|c| *c = 3.0);
        let mut lam = OccupationTensor::zeros(g);
        lam.counts[g.flat(2, 3, 3)] = 5.0;
        for stencil in [VelocityStencil::Forward, VelocityStencil::Central] {
            let r = reaction_field(
                &zero,
                [1.0; 2],
                &[flat.clone(), flat.clone()],
                [1.0; 2],
                [&s[0], &s[1]],
                stencil,
            )
            .unwrap();
            assert!(r.iter().flatten().all(|v| *v == 0.0));
            let r = reaction_field(
                &[lam.clone(), lam.clone()],
                [1.0; 2],
                &[flat.clone(), flat.clone()],
                [1.0; 2],
                [&s[0], &s[1]],
                stencil,
            )
            .unwrap();
            assert!(r.iter().flatten().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_cell_reaction_by_hand() {
        let g = grid();
        let (dx, dv, vol) = (g.dx(), g.dv(), g.cell_volume());
        let s = [
            SpeciesParams::electrons(),
            SpeciesParams::ions(0.1, 0.2).unwrap(),
        ];
        let mut lam = OccupationTensor::zeros(g);
        lam.counts[g.flat(2, 3, 4)] = 2.0;
        let mut f = OccupationTensor::zeros(g);
        f.counts[g.flat(2, 4, 4)] = 7.0;
        f.counts[g.flat(2, 3, 4)] = 3.0;
        let zero = OccupationTensor::zeros(g);
        let (ml, mf) = (0.5, 0.25);
        let r = reaction_field(
            &[lam.clone(), zero.clone()],
            [ml, ml],
            &[f.clone(), zero.clone()],
            [mf, mf],
            [&s[0], &s[1]],
            VelocityStencil::Forward,
        )
        .unwrap();
        // a_2 = mu_v^- * lambda * (f_{l+1} - f_l)/dv * dv^2 with densities
        let a2 = -(2.0 * ml / vol) * ((7.0 - 3.0) * mf / vol) / dv * dv * dv;
        let mut expect = vec![0.0; g.n_x];
        for (i, e) in expect.iter_mut().enumerate() {
            *e = match i.cmp(&2) {
                std::cmp::Ordering::Less => -0.5 * a2 * dx,
                std::cmp::Ordering::Equal => 0.0,
                std::cmp::Ordering::Greater => 0.5 * a2 * dx,
            };
        }
        for i in 0..g.n_x {
            // electrons: R = +K[a]; ions: R = -K[a]
            assert!((r[0][i] - expect[i]).abs() < 1e-12);
            assert!((r[1][i] + expect[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn source_creation_matches_gaussian_cell_masses() {
        let g = grid();
        let theta = cell_masses(5.0, [4.1, 0.0, 0.0], [0.04, 0.04, 0.04], &g);
        let (dt, mass) = (0.1, 1e-4);
        let key = Streams::new(9).key(Purpose::Test, None);
        let c = create_reaction_source_particles(
            &theta,
            None,
            None,
            dt,
            mass,
            &g,
            NegativeSource::Clamp,
            key,
            0,
        );
        let t = assemble_occupation(&c.pos, &g);
        for (cell, m) in theta.iter().enumerate() {
            let expect = m * dt / mass;
            assert!((t.counts[cell] - expect).abs() <= 1.0, "cell {cell}");
        }
        let total = 5.0 * dt / mass;
        let cells = theta.iter().filter(|m| **m > 0.0).count() as f64;
        assert!((c.pos.len() as f64 - total).abs() <= cells.sqrt() * 3.0 + 1.0);
        assert_eq!(c.clamped, 0);
    }

    #[test]
    fn negative_source_is_clamped_or_signed() {
        let g = grid();
        let theta = vec![0.0; g.n_cells()];
        let mut r = vec![0.0; g.n_x];
        r[3] = 10.0;
        let key = Streams::new(9).key(Purpose::Test, None);
        let c = create_reaction_source_particles(
            &theta,
            None,
            Some(&r),
            0.1,
            0.01,
            &g,
            NegativeSource::Clamp,
            key,
            0,
        );
        assert!(c.pos.is_empty() && c.neg.is_empty());
        assert_eq!(c.clamped, g.n_v * g.n_v);
        let c = create_reaction_source_particles(
            &theta,
            None,
            Some(&r),
            0.1,
            0.01,
            &g,
            NegativeSource::Signed,
            key,
            0,
        );
        assert!(c.pos.is_empty());
        let expect = 0.1 * 10.0 * g.cell_volume() / 0.01 * (g.n_v * g.n_v) as f64;
        assert!((c.neg.len() as f64 - expect).abs() <= (g.n_v * g.n_v) as f64);
        assert!(c.neg.iter().all(|p| g.x_index(p.x) == 3));
    }

    #[test]
    fn reconstruction_is_exact_for_quadratics() {
        let g = grid();
        let q = |x: f64, v1: f64, v2: f64| {
            1.0 + 0.3 * x - 0.2 * x * x + 0.5 * v1 * v2 - 0.7 * v1 * v1 + 0.1 * x * v2
        };
        // cell averages of a quadratic: centre value plus h^2/12 per squared axis
        let mut t = OccupationTensor::zeros(g);
        let (dx, dv) = (g.dx(), g.dv());
        for i in 0..g.n_x {
            for l in 0..g.n_v {
                for m in 0..g.n_v {
                    let (x, v1, v2) = (g.x_center(i), g.v_center(l), g.v_center(m));
                    t.counts[g.flat(i, l, m)] =
                        q(x, v1, v2) - 0.2 * dx * dx / 12.0 - 0.7 * dv * dv / 12.0;
                }
            }
        }
        for p in [
            Particle::new(3.3, -0.2, 0.9),
            Particle::new(4.9, 1.4, -1.1),
            Particle::new(2.01, 0.6, 0.0),
        ] {
            let d = reconstructed_gradient(&t, &p).unwrap();
            let expect = [
                0.3 - 0.4 * p.x + 0.1 * p.v2,
                0.5 * p.v2 - 1.4 * p.v1,
                0.5 * p.v1 + 0.1 * p.x,
            ];
            for k in 0..3 {
                assert!(
                    (d[k] - expect[k]).abs() < 1e-12,
                    "{p:?} axis {k}: {} vs {}",
                    d[k],
                    expect[k]
                );
            }
        }
        assert!(reconstructed_gradient(&t, &Particle::new(1.0, 5.0, 0.0)).is_none());
    }

    #[test]
    fn shaped_creation_follows_the_gaussian_inside_cells() {
        let g = grid();
        let (mean, var) = ([4.5, 0.25, -0.25], [0.01, 0.01, 0.01]);
        let theta = cell_masses(1.0, mean, var, &g);
        let key = Streams::new(3).key(Purpose::Test, None);
        let c = create_reaction_source_particles(
            &theta,
            Some((mean, var)),
            None,
            1.0,
            1e-4,
            &g,
            NegativeSource::Signed,
            key,
            0,
        );
        let n = c.pos.len() as f64;
        assert!((n - 1e4).abs() < 400.0);
        let mx = c.pos.iter().map(|p| p.x).sum::<f64>() / n;
        let sx = (c.pos.iter().map(|p| (p.x - mx).powi(2)).sum::<f64>() / n).sqrt();
        assert!((mx - 4.5).abs() < 0.01, "{mx}");
        assert!((sx - 0.1).abs() < 0.01, "{sx}");
        let uniform = create_reaction_source_particles(
            &theta,
            None,
            None,
            1.0,
            1e-4,
            &g,
            NegativeSource::Signed,
            key,
            0,
        );
        let su = (uniform.pos.iter().map(|p| (p.x - 4.5).powi(2)).sum::<f64>()
            / uniform.pos.len() as f64)
            .sqrt();
        assert!(su > 0.2);
    }
}
