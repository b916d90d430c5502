//! Generate training snapshots on a coarse beam and print the singular value
//! decay with the POD reconstruction error per basis size.
//!
//! cargo run --release --example pod_spectrum

use romforge::config::RunConfig;
use romforge::pod::{build_bases, compute_e_pod_d, compute_svd};
use romforge::snapshots::generate_split;

fn main() -> romforge::Result<()> {
    let cfg = RunConfig::from_json(
        r#"{"fem": {"nx": 20, "ny": 4}, "sampling": {"train": 120, "validation": 20, "test": 10},
            "pod": {"n": 6, "n_bar": 20}, "eval": {"latent_total": 40}, "bench": {"pod_n": [6]}}"#,
    )?;
    let model = cfg.fem.build()?;
    let data = generate_split(&model, &cfg.sampling, &cfg.newton)?;
    let svd = compute_svd(&data.train.u_star)?;
    println!("{} snapshots of {} dofs", data.train.len(), data.train.n_dofs());
    println!("{:>4} {:>12} {:>12}", "n", "sigma_n/s1", "e_POD,d");
    for n in [1, 2, 4, 6, 10, 14, 20, 30] {
        let bases = build_bases(&svd, n, 0, data.train.len())?;
        let e = compute_e_pod_d(&bases, &data.train)?;
        println!("{n:>4} {:>12.3e} {e:>12.3e}", svd.sigma[n - 1] / svd.sigma[0]);
    }
    Ok(())
}
