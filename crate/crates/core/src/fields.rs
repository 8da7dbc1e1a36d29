//! Occupation tensors, charge density and the 1D electric field.

use rayon::prelude::*;

use crate::domain::{cell_index, OccupationTensor, Particle, PhaseGrid};
use crate::error::{Error, Result};

/// Default relative tolerance for the global neutrality check.
pub const DEFAULT_NEUTRALITY_TOL: f64 = 1e-10;

const CHUNK: usize = 8192;

/// Count particles per phase-space cell. Particles outside the velocity
/// domain go to the per-column `escaped` tally instead.
///
/// Counts are integers held in `f64`, so the parallel merge is exact and the
/// result does not depend on the thread count.
pub fn assemble_occupation(particles: &[Particle], grid: &PhaseGrid) -> OccupationTensor {
    particles
        .par_chunks(CHUNK)
        .fold(
            || OccupationTensor::zeros(*grid),
            |mut t, chunk| {
                for p in chunk {
                    match cell_index(p, grid) {
                        Ok(c) => t.counts[grid.flat(c.i, c.l, c.m)] += 1.0,
                        Err(_) => t.escaped[grid.x_index(p.x)] += 1.0,
                    }
                }
                t
            },
        )
        .reduce(
            || OccupationTensor::zeros(*grid),
            |mut a, b| {
                a.add_assign(&b);
                a
            },
        )
}

/// Particles per spatial cell, regardless of velocity.
pub fn spatial_counts(particles: &[Particle], grid: &PhaseGrid) -> Vec<f64> {
    particles
        .par_chunks(CHUNK)
        .fold(
            || vec![0.0; grid.n_x],
            |mut c, chunk| {
                for p in chunk {
                    c[grid.x_index(p.x)] += 1.0;
                }
                c
            },
        )
        .reduce(
            || vec![0.0; grid.n_x],
            |mut a, b| {
                a.iter_mut().zip(&b).for_each(|(x, y)| *x += y);
                a
            },
        )
}

/// Charge density at cell centres from spatial particle counts:
/// `rho_i = (m+ n+_i - m- n-_i) / dx` with per-particle masses `m`.
pub fn charge_density_from_counts(
    ions: &[f64],
    ion_mass: f64,
    electrons: &[f64],
    electron_mass: f64,
    dx: f64,
) -> Result<Vec<f64>> {
    if ions.len() != electrons.len() {
        return Err(Error::GridMismatch(format!(
            "ion counts have {} cells, electron counts {}",
            ions.len(),
            electrons.len()
        )));
    }
    Ok(ions
        .iter()
        .zip(electrons)
        .map(|(np, nm)| (ion_mass * np - electron_mass * nm) / dx)
        .collect())
}

/// Charge density from occupation tensors, escaped particles included.
pub fn charge_density(
    ions: &OccupationTensor,
    ion_mass: f64,
    electrons: &OccupationTensor,
    electron_mass: f64,
) -> Result<Vec<f64>> {
    ions.check_grid(&electrons.grid)?;
    charge_density_from_counts(
        &ions.spatial_counts(),
        ion_mass,
        &electrons.spatial_counts(),
        electron_mass,
        ions.grid.dx(),
    )
}

/// Symmetrized cumulative quadrature of a cell-centred grid function:
/// `F_i = (L_i - R_i) / 2` with `L_i = sum_{j<i} u_j dx + u_i dx/2` and
/// `R_i = sum_{j>i} u_j dx + u_i dx/2`.
///
/// `L` is accumulated in ascending and `R` in descending order.
pub fn symmetric_antiderivative(u: &[f64], dx: f64) -> Vec<f64> {
    let n = u.len();
    let mut left = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        left[i] = acc + 0.5 * u[i] * dx;
        acc += u[i] * dx;
    }
    let mut out = vec![0.0; n];
    let mut acc = 0.0;
    for i in (0..n).rev() {
        let right = acc + 0.5 * u[i] * dx;
        acc += u[i] * dx;
        out[i] = 0.5 * (left[i] - right);
    }
    out
}

/// Electric field at cell centres from a charge density with zero net charge.
pub fn electric_field(rho: &[f64], dx: f64, tol: f64) -> Result<Vec<f64>> {
    let net: f64 = rho.iter().sum::<f64>() * dx;
    let scale: f64 = rho.iter().map(|r| r.abs()).sum::<f64>() * dx;
    let limit = tol * scale;
    if net.abs() > limit {
        return Err(Error::NeutralityViolated {
            net: net.abs(),
            limit,
        });
    }
    Ok(symmetric_antiderivative(rho, dx))
}

/// Linear interpolation of a cell-centred periodic grid function.
#[inline]
pub fn interpolate_periodic(values: &[f64], dx: f64, x: f64) -> f64 {
    let n = values.len();
    let s = x / dx - 0.5;
    let f = s.floor();
    let w = s - f;
    let i0 = (f as i64).rem_euclid(n as i64) as usize;
    let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
    (1.0 - w) * values[i0] + w * values[i1]
}

/// Interpolation stencil of [`interpolate_periodic`]: two cells and weights.
#[inline]
pub fn interpolation_stencil(n: usize, dx: f64, x: f64) -> ([usize; 2], [f64; 2]) {
    let s = x / dx - 0.5;
    let f = s.floor();
    let w = s - f;
    let i0 = (f as i64).rem_euclid(n as i64) as usize;
    let i1 = if i0 + 1 == n { 0 } else { i0 + 1 };
    ([i0, i1], [1.0 - w, w])
}

/// Electric energy `sum_i E_i^2 dx`.
pub fn electric_energy(e: &[f64], dx: f64) -> f64 {
    e.iter().map(|v| v * v).sum::<f64>() * dx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{Purpose, Streams};
    use crate::sampling::{sample_direct, DensitySpec};
    use std::f64::consts::PI;

    fn grid() -> PhaseGrid {
        PhaseGrid::new(4.0, 2.0, 8, 4).unwrap()
    }

    #[test]
    fn empty_and_single() {
        let g = grid();
        let t = assemble_occupation(&[], &g);
        assert_eq!(t.total(), 0.0);
        assert_eq!(t.escaped_total(), 0.0);
        let p = Particle::new(g.x_center(3), g.v_center(1), g.v_center(2));
        let t = assemble_occupation(&[p], &g);
        assert_eq!(t.get(3, 1, 2), 1.0);
        assert_eq!(t.total(), 1.0);
    }

    #[test]
    fn escaped_particles_are_tallied() {
        let g = grid();
        let ps = [Particle::new(0.1, 5.0, 0.0), Particle::new(3.9, 0.0, 0.0)];
        let t = assemble_occupation(&ps, &g);
        assert_eq!(t.total(), 1.0);
        assert_eq!(t.escaped[0], 1.0);
        assert_eq!(t.spatial_counts().iter().sum::<f64>(), 2.0);
    }

    #[test]
    fn uniform_counts_concentrate() {
        let g = grid();
        let n = 100_000;
        let spec = DensitySpec::Uniform {
            lo: [0.0, -2.0, -2.0],
            hi: [4.0, 2.0, 2.0],
        };
        let key = Streams::new(3).key(Purpose::Test, None);
        let ps = sample_direct(&spec, n, 4.0, key).unwrap();
        let t = assemble_occupation(&ps, &g);
        let p = 1.0 / g.n_cells() as f64;
        let mean = n as f64 * p;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!(t.counts.iter().all(|c| (c - mean).abs() < 5.0 * sd));
        assert_eq!(t.total(), n as f64);
    }

    #[test]
    fn equal_tensors_are_neutral() {
        let g = grid();
        let ps: Vec<Particle> = (0..50)
            .map(|j| Particle::new(0.07 * j as f64, 0.0, 0.0))
            .collect();
        let t = assemble_occupation(&ps, &g);
        let rho = charge_density(&t, 0.3, &t, 0.3).unwrap();
        assert!(rho.iter().all(|r| *r == 0.0));
    }

    #[test]
    fn single_ion_gives_one_positive_entry() {
        let g = grid();
        let ion = assemble_occupation(&[Particle::new(g.x_center(2), 0.0, 0.0)], &g);
        let e = OccupationTensor::zeros(g);
        let rho = charge_density(&ion, 1.0, &e, 1.0).unwrap();
        for (i, r) in rho.iter().enumerate() {
            if i == 2 {
                assert_eq!(*r, 1.0 / g.dx());
            } else {
                assert_eq!(*r, 0.0);
            }
        }
    }

    #[test]
    fn shifted_equal_totals_are_globally_neutral() {
        let g = grid();
        let ions: Vec<Particle> = (0..40)
            .map(|j| Particle::new(0.1 * j as f64, 0.0, 0.0))
            .collect();
        let elec: Vec<Particle> = (0..40)
            .map(|j| Particle::new(3.99 - 0.05 * j as f64, 0.0, 0.0))
            .collect();
        let rho = charge_density(
            &assemble_occupation(&ions, &g),
            0.5,
            &assemble_occupation(&elec, &g),
            0.5,
        )
        .unwrap();
        let net: f64 = rho.iter().sum::<f64>() * g.dx();
        assert!(net.abs() < 1e-14);
    }

    #[test]
    fn mismatched_grids_are_rejected() {
        let a = OccupationTensor::zeros(grid());
        let b = OccupationTensor::zeros(PhaseGrid::new(4.0, 2.0, 4, 4).unwrap());
        assert!(matches!(
            charge_density(&a, 1.0, &b, 1.0),
            Err(Error::GridMismatch(_))
        ));
    }

    #[test]
    fn zero_density_zero_field() {
        let e = electric_field(&[0.0; 6], 0.5, DEFAULT_NEUTRALITY_TOL).unwrap();
        assert!(e.iter().all(|v| *v == 0.0));
    }

    /// Direct evaluation of `E(x_i) = (int_0^x_i rho - int_x_i^L rho) / 2`
    /// for a piecewise-constant density, one term per cell.
    fn field_by_summation(rho: &[f64], dx: f64) -> Vec<f64> {
        (0..rho.len())
            .map(|i| {
                let xi = (i as f64 + 0.5) * dx;
                let mut left = 0.0;
                let mut right = 0.0;
                for (j, r) in rho.iter().enumerate() {
                    let (a, b) = (j as f64 * dx, (j + 1) as f64 * dx);
                    left += r * (b.min(xi) - a).max(0.0);
                    right += r * (b - a.max(xi)).max(0.0);
                }
                0.5 * (left - right)
            })
            .collect()
    }

    #[test]
    fn dipole_field() {
        let dx = 0.25;
        let (a, b) = (2, 6);
        let mut rho = vec![0.0; 10];
        rho[a] = 1.0;
        rho[b] = -1.0;
        let e = electric_field(&rho, dx, DEFAULT_NEUTRALITY_TOL).unwrap();
        let oracle = field_by_summation(&rho, dx);
        for i in 0..10 {
            assert!((e[i] - oracle[i]).abs() < 1e-15, "cell {i}");
            let expect = if a < i && i < b {
                dx
            } else if i == a || i == b {
                dx / 2.0
            } else {
                0.0
            };
            assert!((e[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn cosine_density_gives_sine_field() {
        let n = 256;
        let p_max = 4.0 * PI;
        let dx = p_max / n as f64;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) * dx).collect();
        let raw: Vec<f64> = xs.iter().map(|x| (2.0 * PI * x / p_max).cos()).collect();
        let mean = raw.iter().sum::<f64>() / n as f64;
        let rho: Vec<f64> = raw.iter().map(|r| r - mean).collect();
        let e = electric_field(&rho, dx, DEFAULT_NEUTRALITY_TOL).unwrap();
        let max_err = xs
            .iter()
            .zip(&e)
            .map(|(x, ei)| (ei - p_max / (2.0 * PI) * (2.0 * PI * x / p_max).sin()).abs())
            .fold(0.0, f64::max);
        assert!(max_err < 2.0 * dx, "max error {max_err}");
    }

    #[test]
    fn non_neutral_density_is_rejected() {
        assert!(matches!(
            electric_field(&[1.0, 0.0, 0.0], 1.0, DEFAULT_NEUTRALITY_TOL),
            Err(Error::NeutralityViolated { .. })
        ));
    }

    #[test]
    fn interpolation_is_periodic_and_exact_at_centres() {
        let v = [1.0, 2.0, 4.0, 8.0];
        let dx = 0.5;
        for (i, vi) in v.iter().enumerate() {
            assert_eq!(interpolate_periodic(&v, dx, (i as f64 + 0.5) * dx), *vi);
        }
        assert_eq!(interpolate_periodic(&v, dx, 0.0), 4.5);
        assert!((interpolate_periodic(&v, dx, 1.999999999999) - 4.5).abs() < 1e-9);
        let ([i0, i1], [w0, w1]) = interpolation_stencil(4, dx, 0.5);
        assert_eq!((i0, i1), (0, 1));
        assert!((w0 - 0.5).abs() < 1e-15 && (w1 - 0.5).abs() < 1e-15);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn neutral(v: Vec<f64>) -> Vec<f64> {
            let m = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| x - m).collect()
        }

        proptest! {
            #[test]
            fn field_is_linear(
                r1 in prop::collection::vec(-5.0f64..5.0, 12),
                r2 in prop::collection::vec(-5.0f64..5.0, 12),
                a in -3.0f64..3.0, b in -3.0f64..3.0,
            ) {
                let (r1, r2) = (neutral(r1), neutral(r2));
                let dx = 0.3;
                let mix: Vec<f64> = r1.iter().zip(&r2).map(|(x, y)| a * x + b * y).collect();
                let e = symmetric_antiderivative(&mix, dx);
                let e1 = symmetric_antiderivative(&r1, dx);
                let e2 = symmetric_antiderivative(&r2, dx);
                for i in 0..12 {
                    prop_assert!((e[i] - (a * e1[i] + b * e2[i])).abs() < 1e-12);
                }
            }

            #[test]
            fn symmetric_equals_one_sided_up_to_constant(
                r in prop::collection::vec(-5.0f64..5.0, 9),
            ) {
                let r = neutral(r);
                let dx = 0.7;
                let e = electric_field(&r, dx, 1e-8).unwrap();
                let mut acc = 0.0;
                let mut diffs = Vec::new();
                for i in 0..r.len() {
                    diffs.push(e[i] - (acc + 0.5 * r[i] * dx));
                    acc += r[i] * dx;
                }
                let scale = r.iter().map(|x| x.abs()).sum::<f64>() * dx;
                for d in &diffs {
                    prop_assert!((d - diffs[0]).abs() <= 1e-12 * (1.0 + scale));
                }
            }

            #[test]
            fn assembly_partitions_in_domain_particles(
                raw in prop::collection::vec((0.0f64..4.0, -3.0f64..3.0, -3.0f64..3.0), 0..300),
            ) {
                let g = grid();
                let ps: Vec<Particle> = raw.iter().map(|&(x, a, b)| Particle::new(x, a, b)).collect();
                let inside = ps.iter().filter(|p| p.v1.abs() < 2.0 && p.v2.abs() < 2.0).count();
                let t = assemble_occupation(&ps, &g);
                prop_assert_eq!(t.total(), inside as f64);
                prop_assert_eq!(t.escaped_total(), (ps.len() - inside) as f64);
            }
        }
    }
}
