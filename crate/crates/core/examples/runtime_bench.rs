//! Time training batches and ROM solves on a small beam.
//!
//! cargo run --release --example runtime_bench

use romforge::config::RunConfig;
use romforge::eval::runtime_benchmark;
use romforge::snapshots::generate_split;

fn main() -> romforge::Result<()> {
    let cfg = RunConfig::from_json(
        r#"{"fem": {"nx": 20, "ny": 4}, "sampling": {"train": 60, "validation": 10, "test": 10},
            "pod": {"n": 4, "n_bar": 12}, "ann": {"hidden_layers": [16, 16], "batch_size": 8},
            "training": {"s_loss": {"epochs": 10}},
            "eval": {"n_values": [4], "latent_total": 16, "appendix_n_values": [4], "reduced_train_samples": 30, "appendix_c_n": 4},
            "bench": {"solve_cases": 5, "naive_batches": 1, "train_n": 4, "prom_n": [4], "pod_n": [4, 8]}}"#,
    )?;
    let model = cfg.fem.build()?;
    let data = generate_split(&model, &cfg.sampling, &cfg.newton)?;
    let mut exp = cfg.experiment(&model, &data, None, None);
    let bench = runtime_benchmark(&mut exp, &cfg.grid(), &cfg.bench, &cfg.newton)?;
    for r in &bench.training {
        println!("batch {:<22} {:.3e} s", r.loss_type, r.mean_batch_secs);
    }
    for r in &bench.solves {
        let q = r.q_size.map_or("-".to_string(), |q| q.to_string());
        println!("solve {:<10} q={q:<3} {:.3e} s", r.model, r.system_solve_secs);
    }
    Ok(())
}
