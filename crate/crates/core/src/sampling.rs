//! Monte Carlo initialization of particle lists: direct sampling of simple
//! densities and acceptance-rejection against a helper density.
//!
//! Both samplers split the requested count into fixed blocks of
//! [`rng::BLOCK`](crate::rng::BLOCK) particles, each drawn from its own
//! substream. Output order follows the block index, so the result does not
//! depend on the number of worker threads.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::domain::{wrap_position, Particle};
use crate::error::{Error, Result};
use crate::rng::{StreamKey, BLOCK};

/// Default floor on the acceptance rate of the rejection sampler.
pub const DEFAULT_ACCEPTANCE_FLOOR: f64 = 1e-4;

/// Proposals per acceptance-rate check window.
const REJECTION_WINDOW: u64 = 1 << 20;

/// A one-dimensional probability density.
#[derive(Debug, Clone, PartialEq)]
pub enum Marginal1D {
    Uniform {
        lo: f64,
        hi: f64,
    },
    Gaussian {
        mean: f64,
        sd: f64,
    },
    /// Weighted sum of components; weights need not be normalized.
    Mixture(Vec<(f64, Marginal1D)>),
}

impl Marginal1D {
    pub fn validate(&self) -> Result<()> {
        match self {
            Marginal1D::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                Err(Error::ConfigInvalid(format!(
                    "uniform marginal needs lo < hi, got [{lo}, {hi}]"
                )))
            }
            Marginal1D::Gaussian { mean, sd }
                if !(*sd > 0.0 && sd.is_finite() && mean.is_finite()) =>
            {
                Err(Error::ConfigInvalid(format!(
                    "gaussian marginal needs sd > 0, got {sd}"
                )))
            }
            Marginal1D::Mixture(parts) => {
                if parts.is_empty() || parts.iter().any(|(w, _)| !(*w > 0.0 && w.is_finite())) {
                    return Err(Error::ConfigInvalid(
                        "mixture needs at least one component with positive weight".into(),
                    ));
                }
                parts.iter().try_for_each(|(_, m)| m.validate())
            }
            _ => Ok(()),
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        match self {
            Marginal1D::Uniform { lo, hi } => {
                if (*lo..*hi).contains(&y) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            Marginal1D::Gaussian { mean, sd } => {
                let z = (y - mean) / sd;
                (-0.5 * z * z).exp() / (sd * (2.0 * PI).sqrt())
            }
            Marginal1D::Mixture(parts) => {
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                parts.iter().map(|(w, m)| w * m.pdf(y)).sum::<f64>() / total
            }
        }
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal1D::Uniform { lo, hi } => 0.5 * (lo + hi),
            Marginal1D::Gaussian { mean, .. } => *mean,
            Marginal1D::Mixture(parts) => {
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                parts.iter().map(|(w, m)| w * m.mean()).sum::<f64>() / total
            }
        }
    }

    pub fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Marginal1D::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            Marginal1D::Gaussian { mean, sd } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + sd * z
            }
            Marginal1D::Mixture(parts) => {
                let total: f64 = parts.iter().map(|(w, _)| w).sum();
                let mut u = rng.random::<f64>() * total;
                for (w, m) in parts {
                    if u < *w {
                        return m.sample(rng);
                    }
                    u -= w;
                }
                parts[parts.len() - 1].1.sample(rng)
            }
        }
    }
}

/// Unnormalized target density `g(x, v1, v2)` for rejection sampling.
pub type DensityFn = Arc<dyn Fn(f64, f64, f64) -> f64 + Send + Sync>;

/// Target density sampled by acceptance-rejection: `g <= k h` must hold.
#[derive(Clone)]
pub struct Tabulated {
    pub g: DensityFn,
    pub k: f64,
    pub helper: Box<DensitySpec>,
}

impl fmt::Debug for Tabulated {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tabulated")
            .field("k", &self.k)
            .field("helper", &self.helper)
            .finish_non_exhaustive()
    }
}

/// Probability density on `(x, v1, v2)`.
#[derive(Debug, Clone)]
pub enum DensitySpec {
    Uniform {
        lo: [f64; 3],
        hi: [f64; 3],
    },
    Gaussian {
        mean: [f64; 3],
        var: [f64; 3],
    },
    Product {
        x: Marginal1D,
        v1: Marginal1D,
        v2: Marginal1D,
    },
    Tabulated(Tabulated),
}

impl DensitySpec {
    /// Product of three marginals equivalent to a directly sampleable spec.
    fn marginals(&self) -> Result<[Marginal1D; 3]> {
        match self {
            DensitySpec::Uniform { lo, hi } => Ok(std::array::from_fn(|d| Marginal1D::Uniform {
                lo: lo[d],
                hi: hi[d],
            })),
            DensitySpec::Gaussian { mean, var } => {
                Ok(std::array::from_fn(|d| Marginal1D::Gaussian {
                    mean: mean[d],
                    sd: var[d].sqrt(),
                }))
            }
            DensitySpec::Product { x, v1, v2 } => Ok([x.clone(), v1.clone(), v2.clone()]),
            DensitySpec::Tabulated(_) => Err(Error::NotDirectlySampleable(
                "tabulated densities need the rejection sampler",
            )),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            DensitySpec::Tabulated(t) => {
                if !(t.k > 0.0 && t.k.is_finite()) {
                    return Err(Error::ConfigInvalid(format!(
                        "rejection envelope constant must be positive, got {}",
                        t.k
                    )));
                }
                t.helper.validate()?;
                if matches!(*t.helper, DensitySpec::Tabulated(_)) {
                    return Err(Error::NotDirectlySampleable(
                        "helper density must be directly sampleable",
                    ));
                }
                Ok(())
            }
            other => other.marginals()?.iter().try_for_each(|m| m.validate()),
        }
    }

    /// Density value; for `Tabulated` this is the (possibly unnormalized) `g`.
    pub fn pdf(&self, x: f64, v1: f64, v2: f64) -> f64 {
        match self {
            DensitySpec::Tabulated(t) => (t.g)(x, v1, v2),
            other => {
                let [mx, m1, m2] = other.marginals().expect("direct spec");
                mx.pdf(x) * m1.pdf(v1) * m2.pdf(v2)
            }
        }
    }
}

fn block_sizes(n: usize) -> impl IndexedParallelIterator<Item = (usize, usize)> {
    let blocks = n.div_ceil(BLOCK);
    (0..blocks)
        .into_par_iter()
        .map(move |b| (b, BLOCK.min(n - b * BLOCK)))
}

/// Draw `n` i.i.d. particles from a directly sampleable density.
pub fn sample_direct(
    spec: &DensitySpec,
    n: usize,
    p_max: f64,
    key: StreamKey,
) -> Result<Vec<Particle>> {
    spec.validate()?;
    let [mx, m1, m2] = spec.marginals()?;
    let blocks: Vec<Vec<Particle>> = block_sizes(n)
        .map(|(b, len)| {
            let mut rng = key.rng(b as u64);
            (0..len)
                .map(|_| {
                    let x = mx.sample(&mut rng);
                    let v1 = m1.sample(&mut rng);
                    let v2 = m2.sample(&mut rng);
                    Particle::new(wrap_position(x, p_max), v1, v2)
                })
                .collect()
        })
        .collect();
    Ok(blocks.concat())
}

/// Draw `n` particles distributed like `g` (normalized) by acceptance-rejection
/// with proposals from `helper`, accepting when `u < g(y) / (k h(y))`.
pub fn sample_rejection(
    g: &(dyn Fn(f64, f64, f64) -> f64 + Sync),
    helper: &DensitySpec,
    k: f64,
    n: usize,
    p_max: f64,
    key: StreamKey,
    acceptance_floor: f64,
) -> Result<Vec<Particle>> {
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::ConfigInvalid(format!(
            "envelope constant must be positive, got {k}"
        )));
    }
    helper.validate()?;
    let [mx, m1, m2] = helper.marginals()?;
    let blocks: Result<Vec<Vec<Particle>>> = block_sizes(n)
        .map(|(b, len)| {
            let mut rng = key.rng(b as u64);
            let mut out = Vec::with_capacity(len);
            let mut window_tries = 0u64;
            let mut window_hits = 0u64;
            while out.len() < len {
                let x = mx.sample(&mut rng);
                let v1 = m1.sample(&mut rng);
                let v2 = m2.sample(&mut rng);
                let gy = g(x, v1, v2);
                let kh = k * mx.pdf(x) * m1.pdf(v1) * m2.pdf(v2);
                if gy > kh * (1.0 + 1e-12) {
                    return Err(Error::EnvelopeViolation { g: gy, kh });
                }
                let u: f64 = rng.random();
                window_tries += 1;
                if u * kh < gy {
                    out.push(Particle::new(wrap_position(x, p_max), v1, v2));
                    window_hits += 1;
                }
                if window_tries == REJECTION_WINDOW {
                    let rate = window_hits as f64 / window_tries as f64;
                    if rate < acceptance_floor {
                        return Err(Error::NonTermination {
                            rate,
                            floor: acceptance_floor,
                        });
                    }
                    window_tries = 0;
                    window_hits = 0;
                }
            }
            Ok(out)
        })
        .collect();
    Ok(blocks?.concat())
}

/// Sample any density spec, dispatching on its variant.
pub fn sample(
    spec: &DensitySpec,
    n: usize,
    p_max: f64,
    key: StreamKey,
    acceptance_floor: f64,
) -> Result<Vec<Particle>> {
    match spec {
        DensitySpec::Tabulated(t) => {
            sample_rejection(&*t.g, &t.helper, t.k, n, p_max, key, acceptance_floor)
        }
        direct => sample_direct(direct, n, p_max, key),
    }
}

/// An initial density together with its total mass `∫ f dz`.
#[derive(Debug, Clone)]
pub struct InitialDensity {
    pub spec: DensitySpec,
    pub total_mass: f64,
}

fn standard_normal() -> Marginal1D {
    Marginal1D::Gaussian { mean: 0.0, sd: 1.0 }
}

/// Maxwellian in velocity, uniform in space, unit mean density.
pub fn maxwellian_uniform(p_max: f64) -> InitialDensity {
    InitialDensity {
        spec: DensitySpec::Product {
            x: Marginal1D::Uniform { lo: 0.0, hi: p_max },
            v1: standard_normal(),
            v2: standard_normal(),
        },
        total_mass: p_max,
    }
}

/// Perturbed Maxwellian `(1 + a cos(kx)) exp(-|v|^2/2) / (2 pi)`.
///
/// `k p_max` must be a multiple of `2 pi` for the perturbation to carry no
/// net mass. The helper is the unperturbed Maxwellian with envelope `1 + |a|`.
pub fn landau(p_max: f64, wave_number: f64, amplitude: f64) -> InitialDensity {
    let helper = maxwellian_uniform(p_max).spec;
    let g: DensityFn = Arc::new(move |x, v1, v2| {
        (1.0 + amplitude * (wave_number * x).cos()) * (-0.5 * (v1 * v1 + v2 * v2)).exp()
            / (2.0 * PI * p_max)
    });
    InitialDensity {
        spec: DensitySpec::Tabulated(Tabulated {
            g,
            k: 1.0 + amplitude.abs(),
            helper: Box::new(helper),
        }),
        total_mass: p_max,
    }
}

/// Two counter-streaming beams in `v1` with a narrow Gaussian in `v2`,
/// uniform in space, unit mean density.
pub fn two_stream(p_max: f64, sigma: f64, drift: f64, sigma_v2: f64) -> InitialDensity {
    InitialDensity {
        spec: DensitySpec::Product {
            x: Marginal1D::Uniform { lo: 0.0, hi: p_max },
            v1: Marginal1D::Mixture(vec![
                (
                    0.5,
                    Marginal1D::Gaussian {
                        mean: drift,
                        sd: sigma,
                    },
                ),
                (
                    0.5,
                    Marginal1D::Gaussian {
                        mean: -drift,
                        sd: sigma,
                    },
                ),
            ]),
            v2: Marginal1D::Gaussian {
                mean: 0.0,
                sd: sigma_v2,
            },
        },
        total_mass: p_max,
    }
}

/// Standard mollifier profile `exp(-1/(1-s^2))` on `|s| < 1`, zero outside.
pub fn mollifier(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q > 0.0 {
        (-1.0 / q).exp()
    } else {
        0.0
    }
}

/// Smooth compactly supported bump centred at `(center, 0, 0)`:
/// `f(x, v) = peak * psi((x - c)/r_x) psi(|v|/r_v) / psi(0)^2`.
pub fn bump(center: f64, r_x: f64, r_v: f64, peak: f64) -> InitialDensity {
    let psi0 = mollifier(0.0);
    let g: DensityFn = Arc::new(move |x, v1, v2| {
        let s = (x - center) / r_x;
        let r = (v1 * v1 + v2 * v2).sqrt() / r_v;
        peak * mollifier(s) * mollifier(r) / (psi0 * psi0)
    });

    // Gaussian helpers with the bump's rough width; the envelope constant is
    // the supremum of g/h over a fine grid of the (separable, radial) ratio.
    let sd_x = 0.45 * r_x;
    let sd_v = 0.45 * r_v;
    let n = 4000;
    let sup_x = (0..n)
        .map(|j| {
            let s = (j as f64 + 0.5) / n as f64;
            mollifier(s) / ((-0.5 * (s * r_x / sd_x).powi(2)).exp() / (sd_x * (2.0 * PI).sqrt()))
        })
        .fold(0.0, f64::max);
    let sup_v = (0..n)
        .map(|j| {
            let r = (j as f64 + 0.5) / n as f64;
            mollifier(r) / ((-0.5 * (r * r_v / sd_v).powi(2)).exp() / (2.0 * PI * sd_v * sd_v))
        })
        .fold(0.0, f64::max);
    let k = 1.05 * peak * sup_x * sup_v / (psi0 * psi0);

    // total mass by midpoint quadrature of the separable factors
    let mass_x: f64 = (0..n)
        .map(|j| mollifier(-1.0 + 2.0 * (j as f64 + 0.5) / n as f64))
        .sum::<f64>()
        * 2.0
        * r_x
        / n as f64;
    let mass_v: f64 = (0..n)
        .map(|j| {
            let r = (j as f64 + 0.5) / n as f64;
            mollifier(r) * 2.0 * PI * r
        })
        .sum::<f64>()
        * r_v
        * r_v
        / n as f64;

    InitialDensity {
        spec: DensitySpec::Tabulated(Tabulated {
            g,
            k,
            helper: Box::new(DensitySpec::Product {
                x: Marginal1D::Gaussian {
                    mean: center,
                    sd: sd_x,
                },
                v1: Marginal1D::Gaussian {
                    mean: 0.0,
                    sd: sd_v,
                },
                v2: Marginal1D::Gaussian {
                    mean: 0.0,
                    sd: sd_v,
                },
            }),
        }),
        total_mass: peak * mass_x * mass_v / (psi0 * psi0),
    }
}
