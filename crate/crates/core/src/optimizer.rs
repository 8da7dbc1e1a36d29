//! Nonlinear conjugate gradients on the reduced cost: Fletcher-Reeves
//! directions in the `V` metric with Armijo backtracking.

use serde::{Deserialize, Serialize};

use crate::control::{euclidean_distance, ControlField};
use crate::elliptic::VMetric;
use crate::error::{Error, Result};
use crate::forward::ForwardTrajectory;
use crate::gradient::ControlProblem;
use crate::rng::Streams;

/// Whether the adjoint noise is frozen across gradient evaluations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseMode {
    Frozen,
    /// A new adjoint substream for every gradient evaluation. The cost stays
    /// deterministic, so the line search is unaffected.
    Fresh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NcgConfig {
    /// Stop once `|B^{l+1} - B^l|_2 <= tol`.
    pub tol: f64,
    pub l_max: usize,
    pub armijo_c1: f64,
    pub armijo_shrink: f64,
    pub sigma_init: f64,
    /// Trial step growth after a step accepted without backtracking.
    pub sigma_growth: f64,
    pub max_backtracks: usize,
    /// Steepest-descent restart period; the lattice size when unset.
    pub restart_every: Option<usize>,
    pub noise: NoiseMode,
}

impl Default for NcgConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            l_max: 20,
            armijo_c1: 1e-4,
            armijo_shrink: 0.5,
            sigma_init: 1.0,
            sigma_growth: 2.0,
            max_backtracks: 30,
            restart_every: None,
            noise: NoiseMode::Frozen,
        }
    }
}

impl NcgConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::ConfigInvalid(format!("ncg.{msg}")));
        if !(self.tol > 0.0) {
            return bad("tol must be positive");
        }
        if !(self.armijo_c1 > 0.0 && self.armijo_c1 < 1.0) {
            return bad("armijo_c1 must lie in (0, 1)");
        }
        if !(self.armijo_shrink > 0.0 && self.armijo_shrink < 1.0) {
            return bad("armijo_shrink must lie in (0, 1)");
        }
        if !(self.sigma_init > 0.0 && self.sigma_init.is_finite()) {
            return bad("sigma_init must be positive");
        }
        if !(self.sigma_growth >= 1.0 && self.sigma_growth.is_finite()) {
            return bad("sigma_growth must be at least 1");
        }
        if self.l_max < 1 {
            return bad("l_max must be at least 1");
        }
        if self.restart_every == Some(0) {
            return bad("restart_every must be positive");
        }
        Ok(())
    }
}

/// Cost and `V` gradient at one control.
#[derive(Debug, Clone)]
pub struct GradientSample {
    pub cost: f64,
    pub grad_v: Vec<f64>,
    /// Cells where the adjoint creation had negative mass, summed over steps.
    pub clamped: usize,
}

/// What [`ncg_minimize`] needs from the problem.
pub trait Objective {
    fn metric(&self) -> &VMetric;
    fn cost(&self, control: &ControlField) -> Result<f64>;
    /// `noise` is `None` for frozen noise and the evaluation index otherwise.
    fn gradient(&self, control: &ControlField, noise: Option<u64>) -> Result<GradientSample>;
    /// Forward trajectory stored in the report, if the problem has one.
    fn trajectory(&self, _control: &ControlField) -> Result<Option<ForwardTrajectory>> {
        Ok(None)
    }
}

impl Objective for ControlProblem {
    fn metric(&self) -> &VMetric {
        &self.metric
    }

    fn cost(&self, control: &ControlField) -> Result<f64> {
        Ok(ControlProblem::cost(self, control)?.cost.total())
    }

    fn gradient(&self, control: &ControlField, noise: Option<u64>) -> Result<GradientSample> {
        let fresh;
        let problem = match noise {
            None => self,
            Some(i) => {
                fresh = ControlProblem {
                    streams: Streams::new(
                        self.streams.seed ^ (i + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15),
                    ),
                    ..self.clone()
                };
                &fresh
            }
        };
        let eval = problem.cost_and_gradient(control)?;
        let (field, adj) = eval.gradient.expect("gradient was requested");
        Ok(GradientSample {
            cost: eval.cost.total(),
            grad_v: field.grad_v,
            clamped: adj.clamped.iter().sum(),
        })
    }

    fn trajectory(&self, control: &ControlField) -> Result<Option<ForwardTrajectory>> {
        self.simulate(control).map(Some)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub cost: f64,
    pub grad_norm_v: f64,
    /// Step that produced this iterate; zero for the start.
    pub sigma: f64,
    /// Fletcher-Reeves coefficient used for the next direction.
    pub beta: f64,
    /// Cost evaluations in the line search that produced this iterate.
    pub evaluations: usize,
    pub clamped: usize,
    pub restarted: bool,
    /// `|B^l - B^{l-1}|_2`.
    pub step_norm: f64,
    pub max_slope_t: f64,
    pub max_slope_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    /// The gradient vanished at the current control.
    Stationary,
    /// The control step fell below `tol`.
    Converged,
    MaxIterations,
    /// The line search failed along the steepest-descent direction.
    LineSearchFailed,
}

#[derive(Debug, Clone)]
pub struct OptimizationReport {
    pub iterations: Vec<IterationRecord>,
    pub stop: StopReason,
    pub final_control: ControlField,
    pub final_trajectory: Option<ForwardTrajectory>,
}

impl OptimizationReport {
    pub fn final_cost(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.cost)
    }
}

struct Accepted {
    sigma: f64,
    cost: f64,
    evaluations: usize,
    backtracks: usize,
}

fn armijo<O: Objective + ?Sized>(
    obj: &O,
    b: &ControlField,
    j: f64,
    h: &[f64],
    slope: f64,
    sigma: f64,
    cfg: &NcgConfig,
) -> Result<Accepted> {
    let mut s = sigma;
    for backtracks in 0..=cfg.max_backtracks {
        let jt = obj.cost(&b.step(s, h))?;
        if jt <= j + cfg.armijo_c1 * s * slope {
            return Ok(Accepted {
                sigma: s,
                cost: jt,
                evaluations: backtracks + 1,
                backtracks,
            });
        }
        s *= cfg.armijo_shrink;
    }
    Err(Error::LineSearchFailed {
        backtracks: cfg.max_backtracks,
    })
}

/// Minimize `obj` from `b0`.
///
/// A failed line search along a conjugate direction is retried once along
/// steepest descent; a failure along steepest descent ends the run with
/// [`StopReason::LineSearchFailed`] and the iterations so far.
pub fn ncg_minimize<O: Objective + ?Sized>(
    obj: &O,
    b0: &ControlField,
    cfg: &NcgConfig,
) -> Result<OptimizationReport> {
    cfg.validate()?;
    let metric = obj.metric();
    let restart_every = cfg.restart_every.unwrap_or(metric.len());
    let noise = |i: u64| match cfg.noise {
        NoiseMode::Frozen => None,
        NoiseMode::Fresh => Some(i),
    };
    let mut n_grad = 0u64;

    let mut b = b0.clone();
    let first = obj.gradient(&b, noise(n_grad))?;
    n_grad += 1;
    let mut j = first.cost;
    let mut d = first.grad_v;
    let mut d_norm2 = metric.inner_v(&d, &d);
    let (st, sx) = b.max_slopes();
    let mut records = vec![IterationRecord {
        iteration: 0,
        cost: j,
        grad_norm_v: d_norm2.max(0.0).sqrt(),
        sigma: 0.0,
        beta: 0.0,
        evaluations: 1,
        clamped: first.clamped,
        restarted: true,
        step_norm: 0.0,
        max_slope_t: st,
        max_slope_x: sx,
    }];
    log::info!(
        "ncg 0: J = {j:.6e}, |grad|_V = {:.3e}",
        records[0].grad_norm_v
    );

    let finish = |records, stop, b: ControlField| -> Result<OptimizationReport> {
        let final_trajectory = obj.trajectory(&b)?;
        Ok(OptimizationReport {
            iterations: records,
            stop,
            final_control: b,
            final_trajectory,
        })
    };

    if d_norm2 == 0.0 {
        return finish(records, StopReason::Stationary, b);
    }

    let mut h: Vec<f64> = d.iter().map(|v| -v).collect();
    let mut steepest = true;
    let mut since_restart = 0;
    let mut sigma = cfg.sigma_init;

    for l in 1..=cfg.l_max {
        let mut slope = metric.inner_v(&d, &h);
        if !(slope < 0.0) {
            h = d.iter().map(|v| -v).collect();
            slope = -d_norm2;
            steepest = true;
            since_restart = 0;
        }
        let acc = match armijo(obj, &b, j, &h, slope, sigma, cfg) {
            Ok(a) => a,
            Err(Error::LineSearchFailed { backtracks }) if !steepest => {
                log::warn!("ncg {l}: line search failed after {backtracks} backtracks, restarting");
                h = d.iter().map(|v| -v).collect();
                slope = -d_norm2;
                steepest = true;
                since_restart = 0;
                match armijo(obj, &b, j, &h, slope, cfg.sigma_init, cfg) {
                    Ok(a) => a,
                    Err(Error::LineSearchFailed { .. }) => {
                        return finish(records, StopReason::LineSearchFailed, b)
                    }
                    Err(e) => return Err(e),
                }
            }
            Err(Error::LineSearchFailed { backtracks }) => {
                log::warn!(
                    "ncg {l}: steepest-descent line search failed after {backtracks} backtracks"
                );
                return finish(records, StopReason::LineSearchFailed, b);
            }
            Err(e) => return Err(e),
        };

        let b_new = b.step(acc.sigma, &h);
        let step_norm = euclidean_distance(&b_new.values, &b.values);
        let next = obj.gradient(&b_new, noise(n_grad))?;
        n_grad += 1;
        if next.cost != acc.cost {
            return Err(Error::NoiseLeak {
                line_search: acc.cost,
                gradient: next.cost,
            });
        }
        let next_norm2 = metric.inner_v(&next.grad_v, &next.grad_v);
        since_restart += 1;
        let restart = since_restart >= restart_every;
        let beta = if restart { 0.0 } else { next_norm2 / d_norm2 };
        h = next
            .grad_v
            .iter()
            .zip(&h)
            .map(|(dn, hv)| -dn + beta * hv)
            .collect();
        if restart {
            since_restart = 0;
        }
        let restarted = steepest;
        steepest = restart;

        b = b_new;
        j = acc.cost;
        d = next.grad_v;
        d_norm2 = next_norm2;
        sigma = if acc.backtracks == 0 {
            acc.sigma * cfg.sigma_growth
        } else {
            acc.sigma
        };
        let (st, sx) = b.max_slopes();
        records.push(IterationRecord {
            iteration: l,
            cost: j,
            grad_norm_v: d_norm2.max(0.0).sqrt(),
            sigma: acc.sigma,
            beta,
            evaluations: acc.evaluations,
            clamped: next.clamped,
            restarted,
            step_norm,
            max_slope_t: st,
            max_slope_x: sx,
        });
        log::info!(
            "ncg {l}: J = {j:.6e}, |grad|_V = {:.3e}, sigma = {:.3e}, beta = {beta:.3e}",
            d_norm2.sqrt(),
            acc.sigma
        );

        if step_norm <= cfg.tol {
            return finish(records, StopReason::Converged, b);
        }
        if d_norm2 == 0.0 {
            return finish(records, StopReason::Stationary, b);
        }
    }
    finish(records, StopReason::MaxIterations, b)
}
