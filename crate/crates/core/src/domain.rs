//! Dimensionless species parameters, phase-space and time grids, particles,
//! and occupation tensors.
//!
//! Cell indices are zero-based: cell `(i, l, m)` is centred at
//! `x = (i + 1/2) dx`, `v1 = (l + 1/2) dv - v_max`, `v2 = (m + 1/2) dv - v_max`.
//! Cells are half-open, so a coordinate lying exactly on a cell boundary
//! belongs to the higher-index cell.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Electron mass over proton mass, used for the default ion scaling.
pub const ELECTRON_PROTON_MASS_RATIO: f64 = 1.0 / 1_836.152_673_43;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpeciesKind {
    Electrons,
    Ions,
}

impl SpeciesKind {
    pub fn label(self) -> &'static str {
        match self {
            SpeciesKind::Electrons => "electrons",
            SpeciesKind::Ions => "ions",
        }
    }

    /// Short suffix used in CSV column names.
    pub fn suffix(self) -> &'static str {
        match self {
            SpeciesKind::Electrons => "e",
            SpeciesKind::Ions => "i",
        }
    }

    /// Charge sign: -1 for electrons, +1 for ions.
    pub fn sign(self) -> f64 {
        match self {
            SpeciesKind::Electrons => -1.0,
            SpeciesKind::Ions => 1.0,
        }
    }
}

/// Scaling factors of one species in the dimensionless Vlasov equation
/// `d_t f + mu_x v1 d_x f + mu_v (E + mu_x v2 B) d_v1 f - mu_x mu_v v1 B d_v2 f = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeciesParams {
    pub kind: SpeciesKind,
    pub mu_x: f64,
    pub mu_v: f64,
}

impl SpeciesParams {
    pub fn electrons() -> Self {
        Self {
            kind: SpeciesKind::Electrons,
            mu_x: 1.0,
            mu_v: -1.0,
        }
    }

    pub fn ions(mu_x: f64, mu_v: f64) -> Result<Self> {
        if !(mu_x > 0.0 && mu_x.is_finite() && mu_v > 0.0 && mu_v.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "ion scaling factors must be positive and finite, got mu_x={mu_x}, mu_v={mu_v}"
            )));
        }
        Ok(Self {
            kind: SpeciesKind::Ions,
            mu_x,
            mu_v,
        })
    }

    /// Hydrogen ions at the electron temperature:
    /// `mu_x = v_th+/v_th- = sqrt(m-/m+)` and `mu_v = m-/(mu_x m+) = mu_x`.
    pub fn hydrogen_ions() -> Self {
        let mu = ELECTRON_PROTON_MASS_RATIO.sqrt();
        Self {
            kind: SpeciesKind::Ions,
            mu_x: mu,
            mu_v: mu,
        }
    }

    pub fn sign(&self) -> f64 {
        self.kind.sign()
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            SpeciesKind::Electrons if self.mu_x != 1.0 || self.mu_v != -1.0 => {
                Err(Error::ConfigInvalid(format!(
                    "electrons require mu_x = 1 and mu_v = -1, got mu_x={}, mu_v={}",
                    self.mu_x, self.mu_v
                )))
            }
            SpeciesKind::Electrons => Ok(()),
            SpeciesKind::Ions => Self::ions(self.mu_x, self.mu_v).map(|_| ()),
        }
    }
}

/// Cell-centred discretization of `[0, p_max] x [-v_max, v_max]^2`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseGrid {
    pub p_max: f64,
    pub v_max: f64,
    pub n_x: usize,
    pub n_v: usize,
}

impl PhaseGrid {
    pub fn new(p_max: f64, v_max: f64, n_x: usize, n_v: usize) -> Result<Self> {
        let grid = Self {
            p_max,
            v_max,
            n_x,
            n_v,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_max > 0.0 && self.p_max.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "grid.p_max must be positive, got {}",
                self.p_max
            )));
        }
        if !(self.v_max > 0.0 && self.v_max.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "grid.v_max must be positive, got {}",
                self.v_max
            )));
        }
        if self.n_x < 2 {
            return Err(Error::ConfigInvalid(format!(
                "grid.n_x must be at least 2, got {}",
                self.n_x
            )));
        }
        if self.n_v < 2 {
            return Err(Error::ConfigInvalid(format!(
                "grid.n_v must be at least 2, got {}",
                self.n_v
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.p_max / self.n_x as f64
    }

    #[inline]
    pub fn dv(&self) -> f64 {
        2.0 * self.v_max / self.n_v as f64
    }

    /// Phase-space volume of one cell, `dx dv^2`.
    #[inline]
    pub fn cell_volume(&self) -> f64 {
        self.dx() * self.dv() * self.dv()
    }

    #[inline]
    pub fn x_center(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dx()
    }

    #[inline]
    pub fn v_center(&self, l: usize) -> f64 {
        (l as f64 + 0.5) * self.dv() - self.v_max
    }

    pub fn x_centers(&self) -> Vec<f64> {
        (0..self.n_x).map(|i| self.x_center(i)).collect()
    }

    pub fn v_centers(&self) -> Vec<f64> {
        (0..self.n_v).map(|l| self.v_center(l)).collect()
    }

    #[inline]
    pub fn n_cells(&self) -> usize {
        self.n_x * self.n_v * self.n_v
    }

    /// Flat index of cell `(i, l, m)`; `m` varies fastest.
    #[inline]
    pub fn flat(&self, i: usize, l: usize, m: usize) -> usize {
        (i * self.n_v + l) * self.n_v + m
    }

    /// Spatial cell of a wrapped position.
    #[inline]
    pub fn x_index(&self, x: f64) -> usize {
        let i = (x / self.dx()).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.n_x - 1)
        }
    }

    /// Velocity cell of one component, or `None` when `|v| >= v_max`.
    #[inline]
    pub fn v_index(&self, v: f64) -> Option<usize> {
        if !(v.abs() < self.v_max) {
            return None;
        }
        let l = ((v + self.v_max) / self.dv()).floor() as usize;
        Some(l.min(self.n_v - 1))
    }

    pub fn same_shape(&self, other: &PhaseGrid) -> bool {
        self == other
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub t_final: f64,
    pub n_t: usize,
}

impl TimeGrid {
    pub fn new(t_final: f64, n_t: usize) -> Result<Self> {
        let grid = Self { t_final, n_t };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_final > 0.0 && self.t_final.is_finite()) {
            return Err(Error::ConfigInvalid(format!(
                "time.t_final must be positive, got {}",
                self.t_final
            )));
        }
        if self.n_t == 0 {
            return Err(Error::ConfigInvalid("time.n_t must be at least 1".into()));
        }
        Ok(())
    }

    #[inline]
    pub fn dt(&self) -> f64 {
        self.t_final / self.n_t as f64
    }

    #[inline]
    pub fn t(&self, k: usize) -> f64 {
        k as f64 * self.dt()
    }

    /// Number of time levels, `n_t + 1`.
    #[inline]
    pub fn levels(&self) -> usize {
        self.n_t + 1
    }

    /// Trapezoid quadrature weight of time level `k`.
    #[inline]
    pub fn trapezoid_weight(&self, k: usize) -> f64 {
        if k == 0 || k == self.n_t {
            0.5 * self.dt()
        } else {
            self.dt()
        }
    }
}

/// One numerical particle in the 1D2V phase space.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Particle {
    pub x: f64,
    pub v1: f64,
    pub v2: f64,
}

impl Particle {
    pub fn new(x: f64, v1: f64, v2: f64) -> Self {
        Self { x, v1, v2 }
    }

    #[inline]
    pub fn speed(&self) -> f64 {
        self.v1.hypot(self.v2)
    }
}

/// Particle list of one species. Every particle carries the same mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesParticles {
    pub species: SpeciesParams,
    pub particles: Vec<Particle>,
    /// Mass carried by each numerical particle.
    pub mass: f64,
}

impl SpeciesParticles {
    pub fn new(species: SpeciesParams, particles: Vec<Particle>, mass: f64) -> Self {
        debug_assert!(mass >= 0.0);
        Self {
            species,
            particles,
            mass,
        }
    }

    /// List representing total mass `total_mass` with equal-mass particles.
    pub fn with_total_mass(
        species: SpeciesParams,
        particles: Vec<Particle>,
        total_mass: f64,
    ) -> Self {
        let mass = if particles.is_empty() {
            0.0
        } else {
            total_mass / particles.len() as f64
        };
        Self::new(species, particles, mass)
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Density contributed by one particle to the cell that holds it.
    pub fn density_weight(&self, grid: &PhaseGrid) -> f64 {
        self.mass / grid.cell_volume()
    }

    pub fn total_mass(&self) -> f64 {
        self.mass * self.particles.len() as f64
    }
}

/// Reduce a position into `[0, p_max)`.
#[inline]
pub fn wrap_position(x: f64, p_max: f64) -> f64 {
    let r = x.rem_euclid(p_max);
    // rem_euclid can round up to p_max for tiny negative inputs
    if r >= p_max {
        0.0
    } else {
        r
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CellIndex {
    pub i: usize,
    pub l: usize,
    pub m: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OutsideVelocityDomain;

/// Cell containing a particle whose position is already wrapped.
#[inline]
pub fn cell_index(p: &Particle, grid: &PhaseGrid) -> Result<CellIndex, OutsideVelocityDomain> {
    let l = grid.v_index(p.v1).ok_or(OutsideVelocityDomain)?;
    let m = grid.v_index(p.v2).ok_or(OutsideVelocityDomain)?;
    Ok(CellIndex {
        i: grid.x_index(p.x),
        l,
        m,
    })
}

/// Per-cell occupation numbers of one particle list at one time level.
///
/// Particles outside the velocity domain are not part of `counts`; they are
/// tallied per spatial cell in `escaped` so the charge density can still see
/// them.
#[derive(Debug, Clone, PartialEq)]
pub struct OccupationTensor {
    pub grid: PhaseGrid,
    pub counts: Vec<f64>,
    pub escaped: Vec<f64>,
}

impl OccupationTensor {
    pub fn zeros(grid: PhaseGrid) -> Self {
        Self {
            grid,
            counts: vec![0.0; grid.n_cells()],
            escaped: vec![0.0; grid.n_x],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, l: usize, m: usize) -> f64 {
        self.counts[self.grid.flat(i, l, m)]
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }

    pub fn escaped_total(&self) -> f64 {
        self.escaped.iter().sum()
    }

    /// Counts summed over velocity, including escaped particles.
    pub fn spatial_counts(&self) -> Vec<f64> {
        let nv2 = self.grid.n_v * self.grid.n_v;
        self.counts
            .chunks_exact(nv2)
            .zip(&self.escaped)
            .map(|(column, esc)| column.iter().sum::<f64>() + esc)
            .collect()
    }

    pub fn add_assign(&mut self, other: &OccupationTensor) {
        debug_assert_eq!(self.grid, other.grid);
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.escaped.iter_mut().zip(&other.escaped) {
            *a += b;
        }
    }

    pub fn check_grid(&self, other: &PhaseGrid) -> Result<()> {
        if self.grid.same_shape(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "tensor on {:?} used with {:?}",
                self.grid, other
            )))
        }
    }
}
