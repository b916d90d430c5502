//! Solve the cantilever at one load and print the tip displacement.
//!
//! cargo run --release --example fom_solve -- 3000 -3000

use std::time::Instant;

use romforge::fem::{FemModel, LoadParams, NewtonConfig};

fn main() -> romforge::Result<()> {
    let args: Vec<f64> = std::env::args()
        .skip(1)
        .map(|a| a.parse().expect("loads must be numbers"))
        .collect();
    let load = LoadParams::new(
        args.first().copied().unwrap_or(3000.0),
        args.get(1).copied().unwrap_or(-3000.0),
    );
    let model = FemModel::desk_cantilever();
    let t0 = Instant::now();
    let (u, report) = romforge::fem::newton::solve(&model, &load, &NewtonConfig::default())?;
    let elapsed = t0.elapsed();
    let nodal = model.nodal_displacements(&u);
    let tip = model.mesh().right_edge_nodes[model.mesh().right_edge_nodes.len() / 2];
    println!("free dofs        {}", model.free_dof_count());
    println!("newton iters     {:?}", report.iterations);
    println!("final |R|        {:.3e}", report.final_residual_norm);
    println!("tip displacement ({:.5}, {:.5}) m", nodal[tip][0], nodal[tip][1]);
    println!("wall time        {:.2?}", elapsed);
    Ok(())
}
