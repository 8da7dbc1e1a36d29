//! Gaussian tracking weights `theta(t, z)` and `phi(z)` of the cost
//! functional. Both are non-positive: `-C N(z; target, Sigma)` with a
//! diagonal covariance.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erf;

use crate::domain::PhaseGrid;
use crate::error::{Error, Result};

/// One point of a piecewise-linear target path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Waypoint {
    pub t: f64,
    pub z: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpeciesTracking {
    pub c_theta: f64,
    /// Diagonal of the covariance of `theta` in `(x, v1, v2)`.
    pub sigma_theta: [f64; 3],
    /// Target `z_d(t)`, linear between waypoints and constant outside.
    pub target_path: Vec<Waypoint>,
    pub c_phi: f64,
    pub sigma_phi: [f64; 3],
    pub target_terminal: [f64; 3],
}

impl SpeciesTracking {
    /// No tracking at all.
    pub fn off() -> Self {
        Self {
            c_theta: 0.0,
            sigma_theta: [1.0; 3],
            target_path: vec![Waypoint {
                t: 0.0,
                z: [0.0; 3],
            }],
            c_phi: 0.0,
            sigma_phi: [1.0; 3],
            target_terminal: [0.0; 3],
        }
    }

    /// Same stationary target and covariance for the running and terminal terms.
    pub fn stationary(c_theta: f64, c_phi: f64, target: [f64; 3], sigma: [f64; 3]) -> Self {
        Self {
            c_theta,
            sigma_theta: sigma,
            target_path: vec![Waypoint { t: 0.0, z: target }],
            c_phi,
            sigma_phi: sigma,
            target_terminal: target,
        }
    }

    pub fn validate(&self, label: &str) -> Result<()> {
        if !(self.c_theta >= 0.0 && self.c_theta.is_finite())
            || !(self.c_phi >= 0.0 && self.c_phi.is_finite())
        {
            return Err(Error::ConfigInvalid(format!(
                "tracking.{label}: amplitudes must be non-negative"
            )));
        }
        if self
            .sigma_theta
            .iter()
            .chain(&self.sigma_phi)
            .any(|s| !(*s > 0.0 && s.is_finite()))
        {
            return Err(Error::ConfigInvalid(format!(
                "tracking.{label}: covariance entries must be positive"
            )));
        }
        if self.target_path.is_empty() {
            return Err(Error::ConfigInvalid(format!(
                "tracking.{label}.target_path needs at least one waypoint"
            )));
        }
        if self.target_path.windows(2).any(|w| !(w[0].t < w[1].t)) {
            return Err(Error::ConfigInvalid(format!(
                "tracking.{label}.target_path times must increase"
            )));
        }
        Ok(())
    }

    pub fn target_at(&self, t: f64) -> [f64; 3] {
        let path = &self.target_path;
        if t <= path[0].t {
            return path[0].z;
        }
        for w in path.windows(2) {
            if t <= w[1].t {
                let s = (t - w[0].t) / (w[1].t - w[0].t);
                return std::array::from_fn(|d| (1.0 - s) * w[0].z[d] + s * w[1].z[d]);
            }
        }
        path[path.len() - 1].z
    }

    pub fn theta(&self, t: f64, z: [f64; 3]) -> f64 {
        -self.c_theta * gaussian(z, self.target_at(t), self.sigma_theta)
    }

    pub fn phi(&self, z: [f64; 3]) -> f64 {
        -self.c_phi * gaussian(z, self.target_terminal, self.sigma_phi)
    }

    /// `int |theta(t)|` over every cell, as a tensor in cell order.
    pub fn theta_cell_masses(&self, t: f64, grid: &PhaseGrid) -> Vec<f64> {
        cell_masses(self.c_theta, self.target_at(t), self.sigma_theta, grid)
    }

    pub fn phi_cell_masses(&self, grid: &PhaseGrid) -> Vec<f64> {
        cell_masses(self.c_phi, self.target_terminal, self.sigma_phi, grid)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackingWeights {
    pub electrons: SpeciesTracking,
    pub ions: SpeciesTracking,
}

impl TrackingWeights {
    pub fn off() -> Self {
        Self {
            electrons: SpeciesTracking::off(),
            ions: SpeciesTracking::off(),
        }
    }

    /// Weights by species index (electrons, ions).
    pub fn get(&self, s: usize) -> &SpeciesTracking {
        if s == 0 {
            &self.electrons
        } else {
            &self.ions
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.electrons.validate("electrons")?;
        self.ions.validate("ions")
    }

    pub fn is_off(&self) -> bool {
        [&self.electrons, &self.ions]
            .iter()
            .all(|w| w.c_theta == 0.0 && w.c_phi == 0.0)
    }
}

/// Normalized Gaussian density with diagonal covariance `var`.
pub fn gaussian(z: [f64; 3], mean: [f64; 3], var: [f64; 3]) -> f64 {
    let mut q = 0.0;
    let mut det = 1.0;
    for d in 0..3 {
        let u = z[d] - mean[d];
        q += u * u / var[d];
        det *= var[d];
    }
    (-0.5 * q).exp() / ((2.0 * PI).powi(3) * det).sqrt()
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// Inverse-CDF draw from `N(mean, sd^2)` restricted to `[lo, hi)`, for `u`
/// uniform in `[0, 1)`. Uniform on the interval when it carries no
/// representable mass.
pub fn truncated_normal(mean: f64, sd: f64, lo: f64, hi: f64, u: f64) -> f64 {
    let (a, b) = ((lo - mean) / sd, (hi - mean) / sd);
    // work in the tail away from the mean, where the cdf keeps its precision
    let flip = a > 0.0;
    let (pa, pb) = if flip {
        (normal_cdf(-b), normal_cdf(-a))
    } else {
        (normal_cdf(a), normal_cdf(b))
    };
    if !(pb - pa > 1e-300) {
        return lo + u * (hi - lo);
    }
    let x = if flip {
        mean - sd * standard_normal().inverse_cdf(pb - u * (pb - pa))
    } else {
        mean + sd * standard_normal().inverse_cdf(pa + u * (pb - pa))
    };
    x.clamp(lo, hi.next_down())
}

fn standard_normal() -> Normal {
    Normal::standard()
}

/// Mass of `N(mean, var)` in each of `n` cells of width `h` starting at `lo`.
fn axis_masses(mean: f64, var: f64, lo: f64, h: f64, n: usize) -> Vec<f64> {
    let sd = var.sqrt();
    (0..n)
        .map(|j| {
            let a = (lo + j as f64 * h - mean) / sd;
            let b = (lo + (j + 1) as f64 * h - mean) / sd;
            // difference of upper tails is more accurate far right of the mean
            if a > 0.0 {
                normal_cdf(-a) - normal_cdf(-b)
            } else {
                normal_cdf(b) - normal_cdf(a)
            }
        })
        .collect()
}

/// `C` times the mass of a diagonal Gaussian in every phase-space cell.
pub fn cell_masses(c: f64, mean: [f64; 3], var: [f64; 3], grid: &PhaseGrid) -> Vec<f64> {
    let mx = axis_masses(mean[0], var[0], 0.0, grid.dx(), grid.n_x);
    let m1 = axis_masses(mean[1], var[1], -grid.v_max, grid.dv(), grid.n_v);
    let m2 = axis_masses(mean[2], var[2], -grid.v_max, grid.dv(), grid.n_v);
    let mut out = Vec::with_capacity(grid.n_cells());
    for a in &mx {
        for b in &m1 {
            for d in &m2 {
                out.push(c * a * b * d);
            }
        }
    }
    out
}
