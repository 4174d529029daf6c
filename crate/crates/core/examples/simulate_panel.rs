//! Simulates a two-factor panel on a coarse mesh and prints a few rows.

use mfou::simulator::{simulate_mfou, SimConfig};
use mfou::ModelParams;

fn main() -> mfou::Result<()> {
    let params = ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0);
    let cfg = SimConfig { delta_fine: 1.0 / (252.0 * 8.0), horizon: 5.0, warmup_horizon: 10.0, seed: 1, ..SimConfig::default() };
    let panel = simulate_mfou(&params, &cfg)?;
    println!("{} observations of {:?}", panel.len(), panel.names);
    for t in (0..panel.len()).step_by(252) {
        println!("t = {:5.2}  y1 = {:+.4}  y2 = {:+.4}", panel.times[t], panel.values[0][t], panel.values[1][t]);
    }
    println!("embedding: {:?}", panel.meta.get("embedding_size"));
    Ok(())
}
