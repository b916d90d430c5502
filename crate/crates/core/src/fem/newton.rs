use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::{LoadParams, ResidualModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewtonConfig {
    /// Absolute tolerance on `||R||₂`.
    pub tolerance: f64,
    /// Newton iterations allowed per load step.
    pub max_iter: usize,
    /// Number of equal load increments.
    pub load_steps: usize,
    /// Step halvings allowed when an update inverts an element.
    pub max_halvings: usize,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        NewtonConfig {
            tolerance: 1e-9,
            max_iter: 25,
            load_steps: 5,
            max_halvings: 10,
        }
    }
}

/// Per-solve statistics.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NewtonReport {
    pub iterations: Vec<usize>,
    pub final_residual_norm: f64,
    /// The last step stalled at the floating-point floor above `tolerance` and
    /// the best iterate was returned.
    pub roundoff_limited: bool,
    /// Wall time spent factorizing and solving the linear systems.
    pub linear_solve_secs: Vec<f64>,
}

/// Full-order Newton solve with incremental load ramping.
pub fn solve<M: ResidualModel + ?Sized>(
    model: &M,
    load: &LoadParams,
    cfg: &NewtonConfig,
) -> Result<(DVector<f64>, NewtonReport)> {
    if cfg.load_steps == 0 || cfg.max_iter == 0 {
        return Err(Error::config("newton", "load_steps and max_iter must be positive"));
    }
    let mut u = DVector::zeros(model.n_dofs());
    let mut report = NewtonReport::default();
    for step in 1..=cfg.load_steps {
        let frac = step as f64 / cfg.load_steps as f64;
        let step_load = LoadParams::new(load.px * frac, load.py * frac);
        let last_step = step == cfg.load_steps;
        let mut r = model.residual(&u, &step_load)?;
        let mut norm = r.norm();
        let mut best = (norm, u.clone());
        let mut stalled = false;
        let mut iters = 0;
        while norm > cfg.tolerance {
            if iters == cfg.max_iter || (stalled && !last_step) {
                if !stalled {
                    return Err(Error::NonConvergence {
                        step,
                        iterations: iters,
                        residual_norm: norm,
                    });
                }
                break;
            }
            let jac = model.jacobian(&u, &step_load)?;
            let t0 = std::time::Instant::now();
            let delta = jac.solve(&(-&r))?;
            report.linear_solve_secs.push(t0.elapsed().as_secs_f64());
            // corrections at the rounding level of u cannot reduce R further
            stalled = delta.norm() <= ROUNDOFF_FACTOR * f64::EPSILON * u.norm();

            let mut scale = 1.0;
            let mut halvings = 0;
            loop {
                let trial = &u + &delta * scale;
                match model.residual(&trial, &step_load) {
                    Ok(trial_r) => {
                        u = trial;
                        r = trial_r;
                        break;
                    }
                    Err(e @ Error::DegenerateState { .. }) => {
                        if halvings == cfg.max_halvings {
                            return Err(e);
                        }
                        halvings += 1;
                        scale *= 0.5;
                    }
                    Err(e) => return Err(e),
                }
            }
            norm = r.norm();
            iters += 1;
            if norm < best.0 {
                best = (norm, u.clone());
            }
        }
        if norm > cfg.tolerance {
            // stalled: keep the smallest residual seen on this step
            (norm, u) = best;
            if last_step && norm > cfg.tolerance {
                log::warn!(
                    "Newton stalled at |R| = {norm:.3e} (tolerance {:.1e}) for load ({}, {})",
                    cfg.tolerance,
                    load.px,
                    load.py
                );
                report.roundoff_limited = true;
            }
        }
        report.iterations.push(iters);
        report.final_residual_norm = norm;
    }
    Ok((u, report))
}

const ROUNDOFF_FACTOR: f64 = 64.0;
