//! Reduced cost, its `L^2` gradient, and the `V` gradient.
//!
//! For a perturbation `H` of the control,
//!
//! ```text
//! J'(B) H = alpha (B, H)_V + int int H G dx dt,
//! G(t, x) = sum_s mu_x mu_v int lambda_s (v2 d_v1 f_s - v1 d_v2 f_s) dv.
//! ```
//!
//! `G` is evaluated per forward step and mapped to the control lattice by
//! the transpose of the interpolation the forward solver uses. With
//! [`ForwardQuadrature::Particles`] it is the derivative of each Boris step
//! paired with `lambda^{k+1}` at the particle end points (see
//! [`g_step_particles`]); with [`ForwardQuadrature::Tensor`] the formula above
//! is averaged between the start of the step (`f^k`, transported
//! `lambda~^k`) and its end (`f^{k+1}`, `lambda^{k+1}`) on the occupation
//! tensors. Both are divided by the quadrature weights of the lattice, so
//! that `grad_L2 = alpha A B + G` and `grad_V = A^{-1} grad_L2`.

use serde::{Deserialize, Serialize};

use crate::adjoint::{
    adjoint_solve, forward_tensors, reconstructed_gradient, velocity_difference, AdjointConfig,
    AdjointTrajectory, ForwardQuadrature, VelocityStencil,
};
use crate::control::ControlField;
use crate::domain::{
    OccupationTensor, Particle, PhaseGrid, SpeciesParams, SpeciesParticles, TimeGrid,
};
use crate::elliptic::{PenaltyConfig, VMetric};
use crate::error::Result;
use crate::fields::interpolation_stencil;
use crate::forward::{forward_solve, ForwardConfig, ForwardTrajectory, IONS};
use crate::rng::Streams;
use crate::tracking::TrackingWeights;

/// Weights multiplying the velocity differences in `G`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IndexWeights {
    /// Cell-centre velocities `v1^l`, `v2^m`.
    Velocity,
    /// One-based cell indices times `dv`; kept for comparison only.
    RawIndex,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub g: Vec<f64>,
    pub grad_l2: Vec<f64>,
    pub grad_v: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    pub tracking: f64,
    pub penalty: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.tracking + self.penalty
    }
}

/// Tracking part of the cost from stored particle snapshots: left rectangle
/// rule over the running term plus the terminal term.
pub fn tracking_cost(traj: &ForwardTrajectory, weights: &TrackingWeights) -> Result<f64> {
    let time = traj.time;
    let dt = time.dt();
    let mut j = 0.0;
    for s in 0..2 {
        let w = weights.get(s);
        let m = traj.species[s].mass;
        if w.c_theta != 0.0 {
            for k in 0..time.n_t {
                let t = time.t(k);
                let sum: f64 = traj.particles(k)?[s]
                    .iter()
                    .map(|p| w.theta(t, [p.x, p.v1, p.v2]))
                    .sum();
                j += m * dt * sum;
            }
        }
        if w.c_phi != 0.0 {
            let sum: f64 = traj.particles(time.n_t)?[s]
                .iter()
                .map(|p| w.phi([p.x, p.v1, p.v2]))
                .sum();
            j += m * sum;
        }
    }
    Ok(j)
}

/// `J = tracking + (alpha/2) |B|_V^2`.
pub fn cost(
    traj: &ForwardTrajectory,
    control: &ControlField,
    weights: &TrackingWeights,
    penalty: &PenaltyConfig,
    metric: &VMetric,
) -> Result<CostBreakdown> {
    Ok(CostBreakdown {
        tracking: tracking_cost(traj, weights)?,
        penalty: 0.5 * penalty.alpha * metric.inner_v(&control.values, &control.values),
    })
}

/// `G` integrand per spatial cell for one pair of forward/adjoint tensors.
#[allow(clippy::too_many_arguments)]
pub fn g_density(
    f: &[OccupationTensor; 2],
    f_mass: [f64; 2],
    lambda: &[OccupationTensor; 2],
    lambda_mass: [f64; 2],
    species: [&SpeciesParams; 2],
    stencil: VelocityStencil,
    index_weights: IndexWeights,
) -> Vec<f64> {
    let grid = f[0].grid;
    let (n_x, n_v, dv, vol) = (grid.n_x, grid.n_v, grid.dv(), grid.cell_volume());
    let nv2 = n_v * n_v;
    let vel = |l: usize| match index_weights {
        IndexWeights::Velocity => grid.v_center(l),
        IndexWeights::RawIndex => (l + 1) as f64 * dv,
    };
    (0..n_x)
        .map(|i| {
            let mut g = 0.0;
            for s in 0..2 {
                let scale = species[s].mu_x
                    * species[s].mu_v
                    * (lambda_mass[s] / vol)
                    * (f_mass[s] / vol)
                    * dv;
                if scale == 0.0 {
                    continue;
                }
                let fc = &f[s].counts[i * nv2..(i + 1) * nv2];
                let lc = &lambda[s].counts[i * nv2..(i + 1) * nv2];
                let mut sum = 0.0;
                for l in 0..n_v {
                    for m in 0..n_v {
                        let lam = lc[l * n_v + m];
                        if lam == 0.0 {
                            continue;
                        }
                        let d1 = velocity_difference(fc, n_v, l, m, 1, stencil);
                        let d2 = velocity_difference(fc, n_v, l, m, 2, stencil);
                        sum += lam * (vel(m) * d1 - vel(l) * d2);
                    }
                }
                g += scale * sum;
            }
            g
        })
        .collect()
}

/// `G` on lattice nodes for forward step `k`, from the particles before and
/// after the step and `lambda^{k+1}`.
///
/// Differentiating one Boris step with respect to the control at the
/// particle gives the rotation `dv = mu_x mu_v dt / (1 + r^2) (v2', -v1') dB`
/// of the velocity `v'` between the two electric half kicks, followed by the
/// drift `dx = mu_x dt dv1`. Paired with `-grad lambda^{k+1}` at the end
/// point, this is the summed-by-parts form of
/// `mu_x mu_v int lambda (v2 d_v1 f - v1 d_v2 f) dv` including the drift
/// term. Contributions are spread to the nodes with the interpolation weights
/// at the start position, where the forward solver reads the control.
#[allow(clippy::too_many_arguments)]
pub fn g_step_particles(
    before: &[Particle],
    after: &[Particle],
    f_mass: f64,
    lambda: &OccupationTensor,
    lambda_mass: f64,
    sp: &SpeciesParams,
    efield: &[f64],
    brow: &[f64],
    dt: f64,
    g: &mut [f64],
) {
    let grid = lambda.grid;
    let (n_x, dx, vol) = (grid.n_x, grid.dx(), grid.cell_volume());
    let scale = -sp.mu_x * sp.mu_v * f_mass * (lambda_mass / vol) / dx;
    if scale == 0.0 {
        return;
    }
    for (p0, p1) in before.iter().zip(after) {
        let Some([d0, d1, d2]) = reconstructed_gradient(lambda, p1) else {
            continue;
        };
        let (idx, w) = interpolation_stencil(n_x, dx, p0.x);
        let e = w[0] * efield[idx[0]] + w[1] * efield[idx[1]];
        let b = w[0] * brow[idx[0]] + w[1] * brow[idx[1]];
        let r = sp.mu_x * sp.mu_v * b * 0.5 * dt;
        let v1 = p1.v1 - sp.mu_v * e * 0.5 * dt;
        let v2 = p1.v2;
        let val = scale / (1.0 + r * r) * (v2 * (d1 + sp.mu_x * dt * d0) - v1 * d2);
        g[idx[0]] += w[0] * val;
        g[idx[1]] += w[1] * val;
    }
}

/// Transpose of periodic linear interpolation from cell centres, for data
/// that is uniform within each cell.
fn interpolation_transpose(u: &[f64]) -> Vec<f64> {
    let n = u.len();
    (0..n)
        .map(|i| 0.75 * u[i] + 0.125 * (u[(i + n - 1) % n] + u[(i + 1) % n]))
        .collect()
}

/// Per-step values `G_k` onto lattice levels: the step `k` uses the control
/// midpoint of levels `k` and `k + 1`.
fn steps_to_levels(steps: &[Vec<f64>], n_x: usize) -> Vec<f64> {
    let n = steps.len();
    let mut out = Vec::with_capacity((n + 1) * n_x);
    for k in 0..=n {
        for i in 0..n_x {
            out.push(match (k, k == n) {
                (0, _) => steps[0][i],
                (_, true) => steps[n - 1][i],
                _ => 0.5 * (steps[k - 1][i] + steps[k][i]),
            });
        }
    }
    out
}

/// `G` on the control lattice from forward particle snapshots.
pub fn assemble_g_particles(
    fwd: &ForwardTrajectory,
    adj: &AdjointTrajectory,
    control: &ControlField,
) -> Result<Vec<f64>> {
    let dt = fwd.time.dt();
    let steps = (0..fwd.time.n_t)
        .map(|k| {
            let (before, after) = (fwd.particles(k)?, fwd.particles(k + 1)?);
            let brow = control.step_row(k);
            let mut g = vec![0.0; fwd.grid.n_x];
            for s in 0..2 {
                if s == IONS && fwd.static_ions {
                    continue;
                }
                g_step_particles(
                    &before[s],
                    &after[s],
                    fwd.species[s].mass,
                    &adj.levels[k + 1][s],
                    adj.masses[s],
                    &fwd.species[s].species,
                    &fwd.efield[k],
                    &brow,
                    dt,
                    &mut g,
                );
            }
            Ok(g)
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    Ok(steps_to_levels(&steps, fwd.grid.n_x))
}

/// `G` on the control lattice.
pub fn assemble_g(
    f_tensors: &[[OccupationTensor; 2]],
    f_mass: [f64; 2],
    adj: &AdjointTrajectory,
    species: [&SpeciesParams; 2],
    time: &TimeGrid,
    stencil: VelocityStencil,
    index_weights: IndexWeights,
) -> Vec<f64> {
    let n = time.n_t;
    let steps: Vec<Vec<f64>> = (0..n)
        .map(|k| {
            let a = g_density(
                &f_tensors[k],
                f_mass,
                &adj.transported[k],
                adj.masses,
                species,
                stencil,
                index_weights,
            );
            let b = g_density(
                &f_tensors[k + 1],
                f_mass,
                &adj.levels[k + 1],
                adj.masses,
                species,
                stencil,
                index_weights,
            );
            let avg: Vec<f64> = a.iter().zip(&b).map(|(x, y)| 0.5 * (x + y)).collect();
            interpolation_transpose(&avg)
        })
        .collect();
    steps_to_levels(&steps, f_tensors[0][0].grid.n_x)
}

/// `grad_L2 = alpha A B + G`.
pub fn assemble_grad_l2(
    g: &[f64],
    control: &ControlField,
    penalty: &PenaltyConfig,
    metric: &VMetric,
) -> Vec<f64> {
    metric
        .apply_operator(&control.values)
        .iter()
        .zip(g)
        .map(|(ab, gi)| penalty.alpha * ab + gi)
        .collect()
}

/// `grad_V = A^{-1} grad_L2`.
pub fn lift_to_v(grad_l2: &[f64], metric: &VMetric) -> Vec<f64> {
    metric.solve_operator(grad_l2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradientConfig {
    pub index_weights: IndexWeights,
}

impl Default for GradientConfig {
    fn default() -> Self {
        Self {
            index_weights: IndexWeights::Velocity,
        }
    }
}

/// Everything needed to evaluate the reduced cost and its gradient. The
/// initial particles are sampled once and the adjoint substreams are fixed,
/// so both are deterministic functions of the control.
#[derive(Debug, Clone)]
pub struct ControlProblem {
    pub grid: PhaseGrid,
    pub time: TimeGrid,
    pub init: [SpeciesParticles; 2],
    pub weights: TrackingWeights,
    pub penalty: PenaltyConfig,
    pub forward: ForwardConfig,
    pub adjoint: AdjointConfig,
    pub gradient: GradientConfig,
    pub streams: Streams,
    pub metric: VMetric,
}

/// Cost and gradient at one control, with the trajectories that produced them.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub cost: CostBreakdown,
    pub forward: ForwardTrajectory,
    pub gradient: Option<(GradientField, AdjointTrajectory)>,
}

impl ControlProblem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        grid: PhaseGrid,
        time: TimeGrid,
        init: [SpeciesParticles; 2],
        weights: TrackingWeights,
        penalty: PenaltyConfig,
        forward: ForwardConfig,
        adjoint: AdjointConfig,
        gradient: GradientConfig,
        streams: Streams,
    ) -> Result<Self> {
        penalty.validate()?;
        weights.validate()?;
        adjoint.validate()?;
        let metric = VMetric::new(time, grid.n_x, grid.dx(), penalty.kappa_t, penalty.kappa_x)?;
        Ok(Self {
            grid,
            time,
            init,
            weights,
            penalty,
            forward: ForwardConfig {
                store_particles: true,
                ..forward
            },
            adjoint,
            gradient,
            streams,
            metric,
        })
    }

    pub fn zero_control(&self) -> ControlField {
        ControlField::zeros(self.time, &self.grid)
    }

    pub fn simulate(&self, control: &ControlField) -> Result<ForwardTrajectory> {
        forward_solve(&self.init, control, &self.grid, &self.time, &self.forward)
    }

    pub fn cost(&self, control: &ControlField) -> Result<Evaluation> {
        let forward = self.simulate(control)?;
        let cost = cost(
            &forward,
            control,
            &self.weights,
            &self.penalty,
            &self.metric,
        )?;
        Ok(Evaluation {
            cost,
            forward,
            gradient: None,
        })
    }

    /// Cost, then adjoint and gradient at the same control.
    pub fn cost_and_gradient(&self, control: &ControlField) -> Result<Evaluation> {
        let mut eval = self.cost(control)?;
        let (field, adj) = self.gradient_at(control, &eval.forward)?;
        eval.gradient = Some((field, adj));
        Ok(eval)
    }

    pub fn gradient_at(
        &self,
        control: &ControlField,
        fwd: &ForwardTrajectory,
    ) -> Result<(GradientField, AdjointTrajectory)> {
        let ft = forward_tensors(fwd)?;
        let adj = adjoint_solve(
            fwd,
            &ft,
            control,
            &self.weights,
            &self.adjoint,
            &self.streams,
        )?;
        let species = [&fwd.species[0].species, &fwd.species[1].species];
        let f_mass = [fwd.species[0].mass, fwd.species[1].mass];
        let g = match self.adjoint.quadrature {
            ForwardQuadrature::Tensor => assemble_g(
                &ft,
                f_mass,
                &adj,
                species,
                &self.time,
                self.adjoint.stencil,
                self.gradient.index_weights,
            ),
            ForwardQuadrature::Particles => assemble_g_particles(fwd, &adj, control)?,
        };
        let grad_l2 = assemble_grad_l2(&g, control, &self.penalty, &self.metric);
        let grad_v = lift_to_v(&grad_l2, &self.metric);
        Ok((GradientField { g, grad_l2, grad_v }, adj))
    }
}
