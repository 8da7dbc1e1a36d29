//! The magnetic control `B(t, x)` on the `(n_t + 1) x n_x` lattice of time
//! levels and spatial cell centres.

use crate::domain::{PhaseGrid, TimeGrid};
use crate::error::{Error, Result};
use crate::fields::interpolate_periodic;

#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    pub time: TimeGrid,
    pub n_x: usize,
    pub p_max: f64,
    /// Row-major by time level: `values[k * n_x + i] = B^k_i`.
    pub values: Vec<f64>,
}

impl ControlField {
    pub fn zeros(time: TimeGrid, grid: &PhaseGrid) -> Self {
        Self::constant(time, grid, 0.0)
    }

    pub fn constant(time: TimeGrid, grid: &PhaseGrid, c: f64) -> Self {
        Self {
            time,
            n_x: grid.n_x,
            p_max: grid.p_max,
            values: vec![c; time.levels() * grid.n_x],
        }
    }

    pub fn from_fn(time: TimeGrid, grid: &PhaseGrid, f: impl Fn(f64, f64) -> f64) -> Self {
        let mut values = Vec::with_capacity(time.levels() * grid.n_x);
        for k in 0..time.levels() {
            for i in 0..grid.n_x {
                values.push(f(time.t(k), grid.x_center(i)));
            }
        }
        Self {
            time,
            n_x: grid.n_x,
            p_max: grid.p_max,
            values,
        }
    }

    /// Same lattice, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), self.values.len());
        Self {
            values,
            ..self.clone()
        }
    }

    pub fn check_shape(&self, time: &TimeGrid, grid: &PhaseGrid) -> Result<()> {
        if self.time != *time || self.n_x != grid.n_x || self.p_max != grid.p_max {
            return Err(Error::GridMismatch(format!(
                "control on {} levels x {} cells, solver on {} x {}",
                self.time.levels(),
                self.n_x,
                time.levels(),
                grid.n_x
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        self.p_max / self.n_x as f64
    }

    #[inline]
    pub fn get(&self, k: usize, i: usize) -> f64 {
        self.values[k * self.n_x + i]
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.n_x..(k + 1) * self.n_x]
    }

    /// Control values used during forward step `k`, i.e. at `t^k + dt/2`.
    pub fn step_row(&self, k: usize) -> Vec<f64> {
        self.row(k)
            .iter()
            .zip(self.row(k + 1))
            .map(|(a, b)| 0.5 * (a + b))
            .collect()
    }

    /// Bilinear interpolation at `(t, x)`, `t` clamped to `[0, T]`.
    pub fn eval(&self, t: f64, x: f64) -> f64 {
        let s = (t / self.time.dt()).clamp(0.0, self.time.n_t as f64);
        let k = (s.floor() as usize).min(self.time.n_t.saturating_sub(1));
        let w = s - k as f64;
        let a = interpolate_periodic(self.row(k), self.dx(), x);
        let b = interpolate_periodic(self.row(k + 1), self.dx(), x);
        (1.0 - w) * a + w * b
    }

    /// `self + s * dir`.
    pub fn step(&self, s: f64, dir: &[f64]) -> Self {
        self.with_values(
            self.values
                .iter()
                .zip(dir)
                .map(|(b, h)| b + s * h)
                .collect(),
        )
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest forward-difference slopes in `t` and `x`.
    pub fn max_slopes(&self) -> (f64, f64) {
        let (mut st, mut sx) = (0.0f64, 0.0f64);
        let (dt, dx) = (self.time.dt(), self.dx());
        for k in 0..self.time.levels() {
            for i in 0..self.n_x {
                if k + 1 < self.time.levels() {
                    st = st.max((self.get(k + 1, i) - self.get(k, i)).abs() / dt);
                }
                if i + 1 < self.n_x {
                    sx = sx.max((self.get(k, i + 1) - self.get(k, i)).abs() / dx);
                }
            }
        }
        (st, sx)
    }
}

/// Euclidean norm of the lattice difference `a - b`.
pub fn euclidean_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn setup() -> (TimeGrid, PhaseGrid) {
        (
            TimeGrid::new(2.0, 4).unwrap(),
            PhaseGrid::new(4.0, 1.0, 8, 2).unwrap(),
        )
    }

    #[test]
    fn bilinear_reproduces_affine_time_profiles() {
        let (t, g) = setup();
        let b = ControlField::from_fn(t, &g, |t, _| 1.0 + 3.0 * t);
        assert!((b.eval(0.3, 1.0) - 1.9).abs() < 1e-14);
        assert!((b.eval(2.0, 1.0) - 7.0).abs() < 1e-14);
        assert_eq!(b.step_row(1), vec![1.0 + 3.0 * 0.75; 8]);
    }

    #[test]
    fn shape_check() {
        let (t, g) = setup();
        let b = ControlField::zeros(t, &g);
        assert!(b.check_shape(&t, &g).is_ok());
        let g2 = PhaseGrid::new(4.0, 1.0, 4, 2).unwrap();
        assert!(b.check_shape(&t, &g2).is_err());
    }

    #[test]
    fn slopes_of_linear_field() {
        let (t, g) = setup();
        let b = ControlField::from_fn(t, &g, |t, x| 2.0 * t - 0.5 * x);
        let (st, sx) = b.max_slopes();
        assert!((st - 2.0).abs() < 1e-12 && (sx - 0.5).abs() < 1e-12);
    }
}
