//! Print the first Halton points and the training loads they map to.
//!
//! cargo run --example halton_sampling -- 8

use romforge::snapshots::{halton_point, sample_parameters, SamplingConfig};

fn main() {
    let count: usize = std::env::args().nth(1).map_or(8, |a| a.parse().expect("count must be an integer"));
    let cfg = SamplingConfig::default();
    let loads = sample_parameters(count, &cfg.domain, 1);
    println!("{:>4} {:>10} {:>10} {:>10} {:>10}", "k", "h2", "h3", "px", "py");
    for (k, load) in loads.iter().enumerate() {
        let [a, b] = halton_point(k as u64 + 1);
        println!("{:>4} {a:>10.6} {b:>10.6} {:>10.2} {:>10.2}", k + 1, load.px, load.py);
    }
}
