use std::path::{Path, PathBuf};
use std::time::Instant;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::grid::{Experiment, GridConfig, ModelKind};
use super::metrics::metric_e_u;
use crate::ann::{init_mlp, AdamW, Gradient};
use crate::error::{Error, Result};
use crate::fem::{newton, NewtonConfig, ResidualModel};
use crate::manifold::PromAnnManifold;
use crate::rom::{pod_rom_solve, rom_solve, RomSolution};
use crate::training::{batch_loss_and_gradient, naive_combined_gradient, LossScalings, PreparedSet, TrainConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchConfig {
    /// Test loads solved per model.
    pub solve_cases: usize,
    /// Batches timed with the naive residual gradient.
    pub naive_batches: usize,
    /// Primary size of the network used for batch timings.
    pub train_n: usize,
    pub prom_n: Vec<usize>,
    pub pod_n: Vec<usize>,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            solve_cases: 9,
            naive_batches: 2,
            train_n: 14,
            prom_n: vec![6, 20],
            pod_n: vec![18, 40],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingTimeRow {
    pub loss_type: String,
    pub mean_batch_secs: f64,
    pub batches: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveTimeRow {
    pub model: String,
    pub q_size: Option<usize>,
    pub e_u: Option<f64>,
    /// Mean wall time of one linear system solve.
    pub system_solve_secs: f64,
    pub system_solves: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BenchReport {
    pub training: Vec<TrainingTimeRow>,
    pub solves: Vec<SolveTimeRow>,
}

impl BenchReport {
    pub fn training_row(&self, loss_type: &str) -> Option<&TrainingTimeRow> {
        self.training.iter().find(|r| r.loss_type == loss_type)
    }

    pub fn solve_row(&self, model: &str, q_size: Option<usize>) -> Option<&SolveTimeRow> {
        self.solves.iter().find(|r| r.model == model && r.q_size == q_size)
    }

    /// `training_times.csv` and `solve_times.csv` in `dir`.
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<[PathBuf; 2]> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir)?;
        let a = dir.join("training_times.csv");
        let mut w = csv::Writer::from_path(&a)?;
        for r in &self.training {
            w.serialize(r)?;
        }
        w.flush()?;
        let b = dir.join("solve_times.csv");
        let mut w = csv::Writer::from_path(&b)?;
        for r in &self.solves {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok([a, b])
    }
}

pub const SNAPSHOT: &str = "snapshot";
pub const RESIDUAL_OPTIMIZED: &str = "residual_optimized";
pub const RESIDUAL_NAIVE: &str = "residual_naive";

/// Batch training times and linear-solve times, measured on one thread.
pub fn runtime_benchmark<M: ResidualModel>(
    exp: &mut Experiment<'_, M>,
    grid: &GridConfig,
    cfg: &BenchConfig,
    newton_cfg: &NewtonConfig,
) -> Result<BenchReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| Error::InvalidInput(format!("thread pool: {e}")))?;
    pool.install(|| {
        let training = training_times(exp, grid, cfg)?;
        let solves = solve_times(exp, grid, cfg, newton_cfg)?;
        Ok(BenchReport { training, solves })
    })
}

fn training_times<M: ResidualModel>(
    exp: &mut Experiment<'_, M>,
    grid: &GridConfig,
    cfg: &BenchConfig,
) -> Result<Vec<TrainingTimeRow>> {
    let n = cfg.train_n;
    let n_bar = grid.latent_total - n;
    let full = exp.context().data.train.len();
    let bases = exp.bases(n, n_bar, full)?;
    let mut dims = vec![n];
    dims.extend(&grid.net.hidden_layers);
    dims.push(n_bar);
    let manifold = PromAnnManifold::scaled(bases, init_mlp(&dims, exp.context().net_seed)?)?;
    let ctx = exp.context();
    let train = &ctx.data.train;
    let data = PreparedSet::new(&manifold, train);
    let batch = grid.net.batch_size;
    let batches: Vec<Vec<usize>> = (0..train.len()).collect::<Vec<_>>().chunks(batch).map(<[usize]>::to_vec).collect();

    let mut rows = Vec::new();
    for (label, tc) in [(SNAPSHOT, &ctx.training.s_loss), (RESIDUAL_OPTIMIZED, &ctx.training.r_loss)] {
        let tc = TrainConfig {
            batch_size: batch,
            ..tc.clone()
        };
        let mut m = manifold.clone();
        let mut opt = AdamW::new(tc.optimizer, &m.net);
        let t0 = Instant::now();
        for idx in &batches {
            let (_, g) = batch_loss_and_gradient(&m, ctx.model, &data, idx, &tc)?;
            opt.step(&mut m.net, &g, tc.lr0);
        }
        rows.push(TrainingTimeRow {
            loss_type: label.into(),
            mean_batch_secs: t0.elapsed().as_secs_f64() / batches.len() as f64,
            batches: batches.len(),
        });
    }

    let tc = &ctx.training.r_loss;
    let weights = tc.weights();
    let scalings = LossScalings::from_manifold(&manifold);
    let mut m = manifold.clone();
    let mut opt = AdamW::new(tc.optimizer, &m.net);
    let timed = cfg.naive_batches.min(batches.len()).max(1);
    let t0 = Instant::now();
    for idx in batches.iter().take(timed) {
        let flat = naive_combined_gradient(
            &m,
            ctx.model,
            &data.q.select_columns(idx),
            &train.u_star.select_columns(idx),
            &train.r_star.select_columns(idx),
            &train.mu_res,
            &weights,
            &scalings,
        )?;
        let g = Gradient::from_flat(&m.net, &flat);
        opt.step(&mut m.net, &g, tc.lr0);
    }
    rows.push(TrainingTimeRow {
        loss_type: RESIDUAL_NAIVE.into(),
        mean_batch_secs: t0.elapsed().as_secs_f64() / timed as f64,
        batches: timed,
    });
    Ok(rows)
}

fn solve_times<M: ResidualModel>(
    exp: &mut Experiment<'_, M>,
    grid: &GridConfig,
    cfg: &BenchConfig,
    newton_cfg: &NewtonConfig,
) -> Result<Vec<SolveTimeRow>> {
    let test = exp.context().data.test.clone();
    let cases = cfg.solve_cases.min(test.len());
    let loads = &test.params[..cases];
    let truths = test.u_star.columns(0, cases).into_owned();
    let rom_cfg = exp.context().rom;
    let full = exp.context().data.train.len();
    let mut rows = Vec::new();

    let summarize = |model: &str, q: usize, sols: Vec<RomSolution>| -> Result<SolveTimeRow> {
        let preds = DMatrix::from_columns(&sols.iter().map(|s| s.u.clone()).collect::<Vec<_>>());
        let times: Vec<f64> = sols.iter().flat_map(|s| s.reduced_solve_secs.iter().copied()).collect();
        Ok(SolveTimeRow {
            model: model.into(),
            q_size: Some(q),
            e_u: Some(metric_e_u(&preds, &truths)?),
            system_solve_secs: mean(&times),
            system_solves: times.len(),
        })
    };

    for &n in &cfg.prom_n {
        let n_bar = grid.latent_total - n;
        let Some(o) = exp.obtain(ModelKind::SLoss, n, n_bar, &grid.net, full)? else {
            log::warn!("no s-loss network for n = {n}; skipping its timing row");
            continue;
        };
        let model = exp.context().model;
        let sols = loads
            .iter()
            .map(|l| rom_solve(&o.manifold, model, l, &rom_cfg))
            .collect::<Result<Vec<_>>>()?;
        rows.push(summarize("PROM-ANN", n, sols)?);
    }
    for &n in &cfg.pod_n {
        let phi = exp.pod_basis(n, full)?;
        let model = exp.context().model;
        let sols = loads
            .iter()
            .map(|l| pod_rom_solve(&phi, model, l, &rom_cfg, None))
            .collect::<Result<Vec<_>>>()?;
        rows.push(summarize("POD", n, sols)?);
    }

    let model = exp.context().model;
    let mut times = Vec::new();
    for l in loads {
        let (_, report) = newton::solve(model, l, newton_cfg)?;
        times.extend(report.linear_solve_secs);
    }
    rows.push(SolveTimeRow {
        model: "FOM".into(),
        q_size: None,
        e_u: None,
        system_solve_secs: mean(&times),
        system_solves: times.len(),
    });
    Ok(rows)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}
