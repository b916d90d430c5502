//! Check the back-propagated gradient of the snapshot loss against central
//! differences on a nonlinear spring chain.
//!
//! cargo run --example mlp_gradient

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use romforge::ann::init_mlp;
use romforge::fem::{LoadParams, SpringChain};
use romforge::manifold::PromAnnManifold;
use romforge::pod::{build_bases, compute_svd};
use romforge::snapshots::SnapshotSet;
use romforge::training::{combined_gradient, evaluate_batch, LossScalings, LossWeights};

fn main() -> romforge::Result<()> {
    let chain = SpringChain::new(1.0, 4.0, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mu = LoadParams::new(0.3, 0.0);
    let m = 12;
    let u = DMatrix::from_fn(chain.n_dof, m, |i, _| rng.random_range(-0.4..0.4) * (i + 1) as f64 / 10.0);
    let r = DMatrix::from_columns(
        &(0..m).map(|j| chain.spring_chain_residual(&u.column(j).into_owned(), mu.px)).collect::<Vec<_>>(),
    );
    let set = SnapshotSet::new(u, r, vec![LoadParams::default(); m], mu)?;
    let mut bases = build_bases(&compute_svd(&set.u_star)?, 3, 4, m)?;
    bases.fill_pod_errors(&chain, &set)?;
    let manifold = PromAnnManifold::scaled(bases, init_mlp(&[3, 8, 4], 5)?)?;
    println!("network parameters {}", manifold.net.parameter_count());

    let scalings = LossScalings::from_manifold(&manifold);
    let q = manifold.encode_batch(&set.u_star);
    for (label, omega_d, omega_r) in [("snapshot", 1.0, 0.0), ("residual", 0.0, 1.0)] {
        let w = LossWeights { omega_d, omega_r };
        let loss = |mf: &PromAnnManifold| -> romforge::Result<f64> {
            Ok(evaluate_batch(mf, &chain, &q, &set.u_star, &set.r_star, &set.mu_res, &w, &scalings, true)?
                .total_loss(&w))
        };
        let work = evaluate_batch(&manifold, &chain, &q, &set.u_star, &set.r_star, &set.mu_res, &w, &scalings, false)?;
        let g = combined_gradient(&manifold, &work, &w, &scalings)?.flatten();
        let h = 1e-6;
        let mut fd = DVector::zeros(g.len());
        for k in 0..g.len() {
            let mut e = DVector::zeros(g.len());
            e[k] = h;
            let (mut p, mut mn) = (manifold.clone(), manifold.clone());
            p.net.add_flat(1.0, &e);
            mn.net.add_flat(-1.0, &e);
            fd[k] = (loss(&p)? - loss(&mn)?) / (2.0 * h);
        }
        println!("{label} loss {:.4e}, gradient relative error {:.2e}", loss(&manifold)?, (&g - &fd).norm() / fd.norm());
    }
    Ok(())
}
