//! Discrete `V` inner product on the control lattice and the elliptic solve
//! that turns an `L^2` gradient into a `V` gradient.
//!
//! With trapezoid weights `w_k` in time and `dx` in space,
//!
//! ```text
//! (B, C)_V = sum_k,i  w_k dx B C
//!          + kappa_t sum_{k<n_t},i  dt dx (dB/dt)(dC/dt)
//!          + kappa_x sum_k,{i<n_x-1} w_k dx (dB/dx)(dC/dx)
//! ```
//!
//! using forward differences. Writing this as `B^T M C` with `M = W A` and
//! `W = diag(w_k dx)` gives `A = I - kappa_t d_tt - kappa_x d_xx` with
//! homogeneous Neumann closure built in. `M` is symmetric positive definite
//! with bandwidth `n_x` in time-major ordering and is factored by a banded
//! Cholesky decomposition.

use serde::{Deserialize, Serialize};

use crate::domain::TimeGrid;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PenaltyConfig {
    pub alpha: f64,
    pub kappa_t: f64,
    pub kappa_x: f64,
}

impl Default for PenaltyConfig {
    fn default() -> Self {
        Self {
            alpha: 1e-5,
            kappa_t: 0.1,
            kappa_x: 0.1,
        }
    }
}

impl PenaltyConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("penalty.alpha", self.alpha),
            ("penalty.kappa_t", self.kappa_t),
            ("penalty.kappa_x", self.kappa_x),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::ConfigInvalid(format!(
                    "{name} must be positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Lower band of a Cholesky factor: `band[j * (p + 1) + d] = L[j][j - d]`.
#[derive(Debug, Clone)]
struct BandedCholesky {
    n: usize,
    p: usize,
    band: Vec<f64>,
}

impl BandedCholesky {
    /// Factor a symmetric banded matrix given by its lower band.
    fn factor(n: usize, p: usize, mut band: Vec<f64>) -> Result<Self> {
        let w = p + 1;
        for j in 0..n {
            for d in (0..=p.min(j)).rev() {
                let r = j - d;
                // L[j][r] = (M[j][r] - sum_{q < r} L[j][q] L[r][q]) / L[r][r]
                let lo = j.saturating_sub(p).max(r.saturating_sub(p));
                let mut s = band[j * w + d];
                for q in lo..r {
                    s -= band[j * w + (j - q)] * band[r * w + (r - q)];
                }
                if d == 0 {
                    if !(s > 0.0) {
                        return Err(Error::SolverBreakdown { row: j, pivot: s });
                    }
                    band[j * w] = s.sqrt();
                } else {
                    band[j * w + d] = s / band[r * w];
                }
            }
        }
        Ok(Self { n, p, band })
    }

    fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let (n, p, w) = (self.n, self.p, self.p + 1);
        let mut y = rhs.to_vec();
        for j in 0..n {
            let mut s = y[j];
            for q in j.saturating_sub(p)..j {
                s -= self.band[j * w + (j - q)] * y[q];
            }
            y[j] = s / self.band[j * w];
        }
        for j in (0..n).rev() {
            let mut s = y[j];
            for r in j + 1..(j + p + 1).min(n) {
                s -= self.band[r * w + (r - j)] * y[r];
            }
            y[j] = s / self.band[j * w];
        }
        y
    }
}

/// The `V` metric on one control lattice, with its factored Gram matrix.
#[derive(Debug, Clone)]
pub struct VMetric {
    pub time: TimeGrid,
    pub n_x: usize,
    pub dx: f64,
    pub kappa_t: f64,
    pub kappa_x: f64,
    chol: BandedCholesky,
}

impl VMetric {
    pub fn new(time: TimeGrid, n_x: usize, dx: f64, kappa_t: f64, kappa_x: f64) -> Result<Self> {
        let levels = time.levels();
        let n = levels * n_x;
        let p = n_x;
        let w = p + 1;
        let dt = time.dt();
        let mut band = vec![0.0; n * w];
        for k in 0..levels {
            let wk = time.trapezoid_weight(k);
            let deg_t = if k == 0 || k == time.n_t { 1.0 } else { 2.0 };
            for i in 0..n_x {
                let j = k * n_x + i;
                let deg_x = if i == 0 || i == n_x - 1 { 1.0 } else { 2.0 };
                band[j * w] = wk * dx + kappa_t * dx / dt * deg_t + kappa_x * wk / dx * deg_x;
                if i > 0 {
                    band[j * w + 1] = -kappa_x * wk / dx;
                }
                if k > 0 {
                    band[j * w + p] = -kappa_t * dx / dt;
                }
            }
        }
        let chol = BandedCholesky::factor(n, p, band)?;
        Ok(Self {
            time,
            n_x,
            dx,
            kappa_t,
            kappa_x,
            chol,
        })
    }

    pub fn len(&self) -> usize {
        self.time.levels() * self.n_x
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    fn weight(&self, k: usize) -> f64 {
        self.time.trapezoid_weight(k) * self.dx
    }

    /// `(a, b)` in the weighted `L^2` product.
    pub fn inner_l2(&self, a: &[f64], b: &[f64]) -> f64 {
        let mut s = 0.0;
        for k in 0..self.time.levels() {
            let row: f64 = (0..self.n_x)
                .map(|i| a[k * self.n_x + i] * b[k * self.n_x + i])
                .sum();
            s += self.weight(k) * row;
        }
        s
    }

    /// `(a, b)_V`.
    pub fn inner_v(&self, a: &[f64], b: &[f64]) -> f64 {
        let m = self.apply_gram(b);
        a.iter().zip(&m).map(|(x, y)| x * y).sum()
    }

    pub fn norm_v(&self, a: &[f64]) -> f64 {
        self.inner_v(a, a).max(0.0).sqrt()
    }

    /// `A u = u - kappa_t d_tt u - kappa_x d_xx u` with the Neumann closure.
    pub fn apply_operator(&self, u: &[f64]) -> Vec<f64> {
        let (n_x, levels, dt, dx) = (self.n_x, self.time.levels(), self.time.dt(), self.dx);
        let at = |k: usize, i: usize| u[k * n_x + i];
        let mut out = vec![0.0; u.len()];
        for k in 0..levels {
            let wk = self.time.trapezoid_weight(k);
            for i in 0..n_x {
                let c = at(k, i);
                let mut lt = 0.0;
                if k > 0 {
                    lt += c - at(k - 1, i);
                }
                if k + 1 < levels {
                    lt += c - at(k + 1, i);
                }
                let mut lx = 0.0;
                if i > 0 {
                    lx += c - at(k, i - 1);
                }
                if i + 1 < n_x {
                    lx += c - at(k, i + 1);
                }
                out[k * n_x + i] =
                    c + self.kappa_t * lt / (dt * wk) + self.kappa_x * lx / (dx * dx);
            }
        }
        out
    }

    /// `M u = W A u`, the Gram matrix of the `V` product.
    pub fn apply_gram(&self, u: &[f64]) -> Vec<f64> {
        let mut out = self.apply_operator(u);
        for k in 0..self.time.levels() {
            let wk = self.weight(k);
            for v in &mut out[k * self.n_x..(k + 1) * self.n_x] {
                *v *= wk;
            }
        }
        out
    }

    /// Solve `A u = rhs`.
    pub fn solve_operator(&self, rhs: &[f64]) -> Vec<f64> {
        let mut b = rhs.to_vec();
        for k in 0..self.time.levels() {
            let wk = self.weight(k);
            for v in &mut b[k * self.n_x..(k + 1) * self.n_x] {
                *v *= wk;
            }
        }
        self.chol.solve(&b)
    }

    /// Solve `M u = rhs` for a dual (unweighted) right-hand side.
    pub fn solve_gram(&self, rhs: &[f64]) -> Vec<f64> {
        self.chol.solve(rhs)
    }
}
