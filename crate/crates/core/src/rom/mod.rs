//! Online Galerkin solver over a decoder `q -> u`.

use std::path::Path;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fem::{LoadParams, ResidualModel};
use crate::manifold::PromAnnManifold;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuess {
    /// `q⁰ = E(0)`.
    Zero,
    /// `q⁰ = E(u⁰)` for a caller-supplied state `u⁰`.
    Encode,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RomConfig {
    /// Absolute tolerance on `||Wᵀ R||₂`.
    pub tolerance: f64,
    pub max_iter: usize,
    pub load_steps: usize,
    /// Step halvings allowed when a decoded update inverts an element.
    pub max_halvings: usize,
    pub initial_guess: InitialGuess,
    /// Keep every accepted `(q, u)` pair in the solution.
    pub record_iterates: bool,
}

impl Default for RomConfig {
    fn default() -> Self {
        RomConfig {
            tolerance: 1e-8,
            max_iter: 25,
            load_steps: 5,
            max_halvings: 10,
            initial_guess: InitialGuess::Zero,
            record_iterates: false,
        }
    }
}

impl RomConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) {
            return Err(Error::config("rom.tolerance", "must be positive"));
        }
        if self.max_iter == 0 {
            return Err(Error::config("rom.max_iter", "must be at least 1"));
        }
        if self.load_steps == 0 {
            return Err(Error::config("rom.load_steps", "must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RomTraceRow {
    pub step: usize,
    pub iter: usize,
    pub reduced_residual_norm: f64,
    pub wall_ms: f64,
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[RomTraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in trace {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomSolution {
    pub q: DVector<f64>,
    pub u: DVector<f64>,
    pub trace: Vec<RomTraceRow>,
    /// Iterations per load step.
    pub iterations: Vec<usize>,
    /// Wall time of each dense reduced solve.
    pub reduced_solve_secs: Vec<f64>,
    /// Wall time of decoding, assembly and projection.
    pub assembly_secs: f64,
    /// Accepted iterates, with the starting state of every load step as
    /// iteration 0, when requested.
    pub iterates: Vec<RomIterate>,
    /// The last step stopped at the rounding floor above `tolerance`.
    pub roundoff_limited: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RomIterate {
    pub step: usize,
    pub iter: usize,
    pub q: DVector<f64>,
    pub u: DVector<f64>,
}

impl RomSolution {
    pub fn total_iterations(&self) -> usize {
        self.iterations.iter().sum()
    }
}

/// Galerkin ROM on the PROM-ANN manifold starting from `E(0)`.
pub fn rom_solve<M: ResidualModel + ?Sized>(
    manifold: &PromAnnManifold,
    model: &M,
    load: &LoadParams,
    cfg: &RomConfig,
) -> Result<RomSolution> {
    rom_solve_from(manifold, model, load, cfg, None)
}

/// Galerkin ROM on the PROM-ANN manifold; `initial_state` is required when
/// `cfg.initial_guess` is `Encode`.
pub fn rom_solve_from<M: ResidualModel + ?Sized>(
    manifold: &PromAnnManifold,
    model: &M,
    load: &LoadParams,
    cfg: &RomConfig,
    initial_state: Option<&DVector<f64>>,
) -> Result<RomSolution> {
    check_model(manifold.n_dofs(), model)?;
    let u0 = initial_state_for(cfg, initial_state, manifold.n_dofs())?;
    let q0 = manifold.encode(&u0);
    galerkin(model, load, cfg, q0, |q| Ok(manifold.decode_with_jacobian(q)))
}

/// Galerkin ROM on the linear subspace `u = Φ q` with orthonormal `Φ`.
pub fn pod_rom_solve<M: ResidualModel + ?Sized>(
    phi: &DMatrix<f64>,
    model: &M,
    load: &LoadParams,
    cfg: &RomConfig,
    initial_state: Option<&DVector<f64>>,
) -> Result<RomSolution> {
    check_model(phi.nrows(), model)?;
    let u0 = initial_state_for(cfg, initial_state, phi.nrows())?;
    let q0 = phi.tr_mul(&u0);
    galerkin(model, load, cfg, q0, |q| Ok((phi * q, phi.clone())))
}

/// Independent solves for several loads, in input order.
pub fn rom_solve_many<M: ResidualModel + ?Sized>(
    manifold: &PromAnnManifold,
    model: &M,
    loads: &[LoadParams],
    cfg: &RomConfig,
) -> Vec<Result<RomSolution>> {
    loads.par_iter().map(|l| rom_solve(manifold, model, l, cfg)).collect()
}

pub fn pod_rom_solve_many<M: ResidualModel + ?Sized>(
    phi: &DMatrix<f64>,
    model: &M,
    loads: &[LoadParams],
    cfg: &RomConfig,
) -> Vec<Result<RomSolution>> {
    loads.par_iter().map(|l| pod_rom_solve(phi, model, l, cfg, None)).collect()
}

fn check_model<M: ResidualModel + ?Sized>(n_dofs: usize, model: &M) -> Result<()> {
    if model.n_dofs() != n_dofs {
        return Err(Error::DimensionMismatch {
            expected: n_dofs,
            found: model.n_dofs(),
        });
    }
    Ok(())
}

fn initial_state_for(cfg: &RomConfig, given: Option<&DVector<f64>>, n_dofs: usize) -> Result<DVector<f64>> {
    cfg.validate()?;
    match (cfg.initial_guess, given) {
        (InitialGuess::Zero, None) => Ok(DVector::zeros(n_dofs)),
        (InitialGuess::Zero, Some(_)) => Err(Error::config(
            "rom.initial_guess",
            "an initial state was given but the guess is `zero`",
        )),
        (InitialGuess::Encode, None) => Err(Error::config("rom.initial_guess", "`encode` needs an initial state")),
        (InitialGuess::Encode, Some(u)) if u.len() != n_dofs => Err(Error::DimensionMismatch {
            expected: n_dofs,
            found: u.len(),
        }),
        (InitialGuess::Encode, Some(u)) => Ok(u.clone()),
    }
}

/// Load-stepped reduced Newton iteration `(WᵀJW) δq = -WᵀR` with `W = dD/dq`.
fn galerkin<M, D>(model: &M, load: &LoadParams, cfg: &RomConfig, q0: DVector<f64>, decode: D) -> Result<RomSolution>
where
    M: ResidualModel + ?Sized,
    D: Fn(&DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)>,
{
    let start = Instant::now();
    let ms = || start.elapsed().as_secs_f64() * 1e3;
    let mut sol = RomSolution {
        q: q0,
        u: DVector::zeros(0),
        trace: Vec::new(),
        iterations: Vec::new(),
        reduced_solve_secs: Vec::new(),
        assembly_secs: 0.0,
        iterates: Vec::new(),
        roundoff_limited: false,
    };
    let (mut u, mut w) = decode(&sol.q)?;
    let record = |sol: &mut RomSolution, step, iter, u: &DVector<f64>| {
        if cfg.record_iterates {
            let q = sol.q.clone();
            sol.iterates.push(RomIterate { step, iter, q, u: u.clone() });
        }
    };
    for step in 1..=cfg.load_steps {
        let frac = step as f64 / cfg.load_steps as f64;
        let step_load = LoadParams::new(load.px * frac, load.py * frac);
        let t = Instant::now();
        let mut r = model.residual(&u, &step_load)?;
        let mut g = w.tr_mul(&r);
        sol.assembly_secs += t.elapsed().as_secs_f64();
        let mut norm = g.norm();
        sol.trace.push(RomTraceRow {
            step,
            iter: 0,
            reduced_residual_norm: norm,
            wall_ms: ms(),
        });
        record(&mut sol, step, 0, &u);
        let mut iters = 0;
        let mut stalled = false;
        while norm > cfg.tolerance && !stalled {
            if iters == cfg.max_iter {
                return Err(Error::RomNonConvergence {
                    step,
                    iterations: iters,
                    residual_norm: norm,
                    trace: std::mem::take(&mut sol.trace),
                });
            }
            let t = Instant::now();
            let jw = model.jacobian(&u, &step_load)?.mul_dense(&w);
            let a = w.tr_mul(&jw);
            sol.assembly_secs += t.elapsed().as_secs_f64();
            let t = Instant::now();
            let dq = dense_solve(a, -&g)?;
            sol.reduced_solve_secs.push(t.elapsed().as_secs_f64());

            let t = Instant::now();
            let mut scale = 1.0;
            let mut halvings = 0;
            loop {
                let trial = &sol.q + &dq * scale;
                let (tu, tw) = decode(&trial)?;
                match model.residual(&tu, &step_load) {
                    Ok(tr) => {
                        // corrections at the rounding level of u cannot reduce R further
                        stalled = (&tu - &u).norm() <= ROUNDOFF_FACTOR * f64::EPSILON * u.norm();
                        sol.q = trial;
                        (u, w, r) = (tu, tw, tr);
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
            g = w.tr_mul(&r);
            sol.assembly_secs += t.elapsed().as_secs_f64();
            norm = g.norm();
            iters += 1;
            sol.trace.push(RomTraceRow {
                step,
                iter: iters,
                reduced_residual_norm: norm,
                wall_ms: ms(),
            });
            record(&mut sol, step, iters, &u);
        }
        if norm > cfg.tolerance {
            if step < cfg.load_steps {
                // intermediate steps only seed the next one
                log::debug!("ROM step {step} stalled at |WᵀR| = {norm:.3e}");
            } else {
                log::warn!(
                    "ROM stalled at |WᵀR| = {norm:.3e} (tolerance {:.1e}) for load ({}, {})",
                    cfg.tolerance,
                    load.px,
                    load.py
                );
                sol.roundoff_limited = true;
            }
        }
        sol.iterations.push(iters);
    }
    sol.u = u;
    Ok(sol)
}

/// LU solve of the reduced system; near-singular pivots are reported with the
/// 2-norm condition number.
fn dense_solve(a: DMatrix<f64>, b: DVector<f64>) -> Result<DVector<f64>> {
    let n = a.nrows();
    let lu = a.clone().lu();
    let u = lu.u();
    let pivots = (0..n).map(|i| u[(i, i)].abs());
    let max = pivots.clone().fold(0.0, f64::max);
    let min = pivots.fold(f64::INFINITY, f64::min);
    if !(min > SINGULAR_PIVOT_RATIO * max) {
        let sv = a.singular_values();
        let condition_estimate = sv.max() / sv.min();
        return Err(Error::SingularReducedSystem { condition_estimate });
    }
    lu.solve(&b).ok_or(Error::SingularReducedSystem {
        condition_estimate: f64::INFINITY,
    })
}

const ROUNDOFF_FACTOR: f64 = 64.0;
const SINGULAR_PIVOT_RATIO: f64 = 1e-14;
