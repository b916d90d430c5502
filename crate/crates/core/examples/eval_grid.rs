//! Run the evaluation grid with every sub-grid on a tiny problem and print the
//! main table. Bundles and CSV reports go to a temporary directory.
//!
//! cargo run --release --example eval_grid

use romforge::config::RunConfig;
use romforge::eval::Appendix;
use romforge::snapshots::{generate_dataset, generate_split};

const TINY: &str = r#"{
    "fem": {"nx": 8, "ny": 2},
    "sampling": {"train": 24, "validation": 8, "test": 6, "extrapolation": 4},
    "pod": {"n": 2, "n_bar": 4},
    "ann": {"hidden_layers": [8, 8], "batch_size": 4},
    "training": {"s_loss": {"epochs": 20}, "r_loss": {"epochs": 5}, "q_loss": {"epochs": 20}},
    "eval": {
        "n_values": [2, 3], "latent_total": 6, "appendix_n_values": [2, 3],
        "reduced_train_samples": 12, "appendix_c_n": 3,
        "appendix_c_variants": [{"hidden_layers": [8], "batch_size": 4}]
    },
    "bench": {"solve_cases": 3, "naive_batches": 1, "train_n": 2, "prom_n": [2, 3], "pod_n": [2, 4]}
}"#;

fn main() -> romforge::Result<()> {
    let cfg = RunConfig::from_json(TINY)?;
    let model = cfg.fem.build()?;
    let data = generate_split(&model, &cfg.sampling, &cfg.newton)?;
    let extrapolation =
        generate_dataset(&model, &cfg.sampling.extrapolation_params(), cfg.sampling.mu_res, &cfg.newton)?.set;
    let dir = std::env::temp_dir().join("romforge_eval_grid_example");
    let mut exp = cfg.experiment(&model, &data, Some(&extrapolation), Some(dir.join("bundles")));
    let reports = exp.run_all(&cfg.grid(), &[Appendix::ReducedDataset, Appendix::Extrapolation, Appendix::Hyperparameters])?;
    for path in reports.write(dir.join("eval"))? {
        println!("wrote {}", path.display());
    }
    println!("{:>8} {:>3} {:>5} {:>15} {:>10} {:>10}", "model", "n", "nbar", "mode", "e_u", "e_R");
    for r in &reports.main.rows {
        println!("{:>8} {:>3} {:>5} {:>15} {:>10.3e} {:>10.3e}", r.model, r.n, r.nbar, r.mode, r.e_u, r.e_r);
    }
    Ok(())
}
