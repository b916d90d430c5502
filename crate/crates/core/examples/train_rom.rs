//! Train a PROM-ANN manifold on a coarse beam with the snapshot loss, fine-tune
//! it with the residual loss, and compare Galerkin ROM solves against POD.
//!
//! cargo run --release --example train_rom

use nalgebra::DMatrix;
use romforge::ann::init_mlp;
use romforge::config::RunConfig;
use romforge::eval::{metric_e_r, metric_e_u};
use romforge::manifold::PromAnnManifold;
use romforge::pod::{build_bases, compute_svd};
use romforge::rom::{pod_rom_solve_many, rom_solve_many};
use romforge::snapshots::generate_split;
use romforge::training::{train, TrainConfig};

fn main() -> romforge::Result<()> {
    let cfg = RunConfig::from_json(
        r#"{"fem": {"nx": 20, "ny": 4}, "sampling": {"train": 120, "validation": 20, "test": 10},
            "pod": {"n": 6, "n_bar": 20}, "eval": {"latent_total": 40}, "bench": {"pod_n": [6]}}"#,
    )?;
    let model = cfg.fem.build()?;
    let data = generate_split(&model, &cfg.sampling, &cfg.newton)?;
    let (n, n_bar) = (cfg.pod.n, cfg.pod.n_bar);
    let mut bases = build_bases(&compute_svd(&data.train.u_star)?, n, n_bar, data.train.len())?;
    bases.fill_pod_errors(&model, &data.train)?;
    let phi = bases.phi.clone();
    let net = init_mlp(&[n, 32, 32, n_bar], cfg.seed)?;
    let manifold = PromAnnManifold::scaled(bases, net)?;

    let s_cfg = TrainConfig {
        epochs: 150,
        ..TrainConfig::s_loss()
    };
    let s = train(manifold, &data.train, &data.validation, &model, &s_cfg)?;
    println!("s-loss: best epoch {} validation L_d {:.3e}", s.best_epoch, s.best_val_loss);
    let r_cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::r_loss()
    };
    let r = train(s.manifold.clone(), &data.train, &data.validation, &model, &r_cfg)?;
    println!("r-loss: best epoch {} validation L_R {:.3e}", r.best_epoch, r.best_val_loss);

    let test = &data.test;
    let columns = |sols: Vec<romforge::Result<romforge::rom::RomSolution>>| -> romforge::Result<DMatrix<f64>> {
        let cols = sols.into_iter().map(|s| s.map(|s| s.u)).collect::<romforge::Result<Vec<_>>>()?;
        Ok(DMatrix::from_columns(&cols))
    };
    println!("{:>8} {:>10} {:>10}", "model", "ROM e_u", "ROM e_R");
    let pod = columns(pod_rom_solve_many(&phi, &model, &test.params, &cfg.rom))?;
    let rows = [
        ("POD", pod),
        ("s-loss", columns(rom_solve_many(&s.manifold, &model, &test.params, &cfg.rom))?),
        ("r-loss", columns(rom_solve_many(&r.manifold, &model, &test.params, &cfg.rom))?),
    ];
    for (name, u) in rows {
        let e_u = metric_e_u(&u, &test.u_star)?;
        let e_r = metric_e_r(&model, &u, &test.u_star, &test.mu_res)?;
        println!("{name:>8} {e_u:>10.3e} {e_r:>10.3e}");
    }
    Ok(())
}
