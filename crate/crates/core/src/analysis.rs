//! Post-processing of forward runs: damping-rate fit, growth of the field
//! energy, and mixing of two labelled populations.

use serde::Serialize;

use crate::domain::Particle;
use crate::error::{Error, Result};

/// Interior local maxima `e[k-1] <= e[k] >= e[k+1]` with `t[k]` in the
/// closed window.
pub fn local_maxima(t: &[f64], e: &[f64], window: (f64, f64)) -> Vec<usize> {
    (1..e.len().saturating_sub(1))
        .filter(|&k| t[k] >= window.0 && t[k] <= window.1 && e[k] >= e[k - 1] && e[k] >= e[k + 1])
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DampingFit {
    /// Decay rate, positive for decay: `log E ~ c - rate t`.
    pub rate: f64,
    pub r_squared: f64,
    pub peaks: Vec<usize>,
}

/// Least-squares slope of `log E` through its local maxima in `window`.
pub fn fit_damping_rate(t: &[f64], energy: &[f64], window: (f64, f64)) -> Result<DampingFit> {
    let peaks: Vec<usize> = local_maxima(t, energy, window)
        .into_iter()
        .filter(|&k| energy[k] > 0.0)
        .collect();
    if peaks.len() < 3 {
        return Err(Error::InsufficientPeaks { found: peaks.len() });
    }
    let xs: Vec<f64> = peaks.iter().map(|&k| t[k]).collect();
    let ys: Vec<f64> = peaks.iter().map(|&k| energy[k].ln()).collect();
    let (slope, r_squared) = linear_fit(&xs, &ys);
    Ok(DampingFit {
        rate: -slope,
        r_squared,
        peaks,
    })
}

/// Slope and coefficient of determination of the least-squares line; `r^2`
/// is 1 for data the line reproduces exactly.
fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - my - slope * (a - mx)).powi(2))
        .sum();
    let r2 = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    (slope, r2)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GrowthSummary {
    /// `E(t_sat) / E(0)`.
    pub growth_factor: f64,
    /// First level where `E` attains its maximum over the run.
    pub saturation_index: usize,
    pub t_saturation: f64,
    /// Level of the largest `E` in each consecutive time block of the given
    /// width, from `t = 0` up to saturation; the saturation level is last.
    pub envelope: Vec<usize>,
    /// Largest drop between consecutive envelope points, as a ratio `<= 1`;
    /// 1 when the envelope never decreases.
    pub worst_envelope_ratio: f64,
}

impl GrowthSummary {
    /// Envelope non-decreasing up to the relative `slack`.
    pub fn envelope_monotone(&self, slack: f64) -> bool {
        self.worst_envelope_ratio >= 1.0 - slack
    }
}

/// Growth of the field energy up to its maximum. The envelope is sampled as
/// block maxima over windows of width `block` (one oscillation period of the
/// energy or longer), so that it follows the growing mode rather than the
/// sub-period beating of the noise.
pub fn growth_summary(t: &[f64], energy: &[f64], block: f64) -> GrowthSummary {
    let sat = energy
        .iter()
        .enumerate()
        .fold(0, |best, (k, e)| if *e > energy[best] { k } else { best });
    let mut envelope: Vec<usize> = Vec::new();
    let mut current: Option<(i64, usize)> = None;
    for k in 0..=sat {
        let b = ((t[k] - t[0]) / block).floor() as i64;
        current = match current {
            Some((cb, best)) if cb == b => {
                Some((b, if energy[k] > energy[best] { k } else { best }))
            }
            Some((_, best)) => {
                envelope.push(best);
                Some((b, k))
            }
            None => Some((b, k)),
        };
    }
    if let Some((_, best)) = current {
        envelope.push(best);
    }
    let worst = envelope
        .windows(2)
        .map(|w| energy[w[1]] / energy[w[0]])
        .fold(1.0f64, f64::min);
    GrowthSummary {
        growth_factor: energy[sat] / energy[0],
        saturation_index: sat,
        t_saturation: t[sat],
        envelope,
        worst_envelope_ratio: worst,
    }
}

/// Correlation between a `±1` label and its mean over the particles sharing
/// the same `(x, v1)` cell, on an `n_x x n_v` partition of
/// `[0, p_max) x [-v_max, v_max)`. Near 1 while the labelled populations
/// occupy separate cells, near 0 once they are mixed within cells.
/// Particles outside the velocity range are ignored.
pub fn label_cell_correlation(
    particles: &[Particle],
    labels: &[f64],
    p_max: f64,
    v_max: f64,
    n_x: usize,
    n_v: usize,
) -> f64 {
    let mut sum = vec![0.0; n_x * n_v];
    let mut count = vec![0usize; n_x * n_v];
    let mut cells = Vec::with_capacity(particles.len());
    for (p, s) in particles.iter().zip(labels) {
        let c = if p.v1.abs() < v_max {
            let i = ((p.x / p_max * n_x as f64) as usize).min(n_x - 1);
            let l = (((p.v1 + v_max) / (2.0 * v_max) * n_v as f64) as usize).min(n_v - 1);
            let c = i * n_v + l;
            sum[c] += s;
            count[c] += 1;
            Some(c)
        } else {
            None
        };
        cells.push(c);
    }
    let pairs: Vec<(f64, f64)> = cells
        .iter()
        .zip(labels)
        .filter_map(|(c, s)| c.map(|c| (*s, sum[c] / count[c] as f64)))
        .collect();
    pearson(&pairs)
}

fn pearson(pairs: &[(f64, f64)]) -> f64 {
    let n = pairs.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (a, b) in pairs {
        sab += (a - ma) * (b - mb);
        saa += (a - ma).powi(2);
        sbb += (b - mb).powi(2);
    }
    if saa == 0.0 || sbb == 0.0 {
        return 0.0;
    }
    sab / (saa * sbb).sqrt()
}
