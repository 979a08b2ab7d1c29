//! Times each strategy on one simulated dataset and prints its estimate.
//!
//! `cargo run --release -p psbayes-core --example one_replicate -- [seed]`

use std::time::Instant;

use psbayes::sim::{generate_dataset, DgpSpec};
use psbayes::strategies::{run_strategy, Strategy, StrategyConfig};

fn main() {
    let seed: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1);
    let data = generate_dataset(&DgpSpec::default(), seed).expect("dataset");
    let cfg = StrategyConfig::default();
    for s in Strategy::ALL {
        let start = Instant::now();
        match run_strategy(s, &data, &cfg, seed) {
            Ok(r) => println!(
                "{s:>2}  delta {:+.4} [{:+.4}, {:+.4}]  theta {:?}  acc {:?}/{:?}  {:.2}s",
                r.delta.point,
                r.delta.interval_low,
                r.delta.interval_high,
                r.theta_xc.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
                r.diagnostics.acceptance_xc.map(|a| (a * 100.0).round() / 100.0),
                r.diagnostics.acceptance_y.map(|a| (a * 100.0).round() / 100.0),
                start.elapsed().as_secs_f64()
            ),
            Err(e) => println!("{s:>2}  failed: {e}"),
        }
    }
}
