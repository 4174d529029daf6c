//! A short replication study on a coarse mesh.

use mfou::covariance::Accuracy;
use mfou::montecarlo::{run_mc, McScenario};
use mfou::simulator::SimConfig;
use mfou::ModelParams;

fn main() -> mfou::Result<()> {
    let truth = ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0);
    let mut s = McScenario::new(truth, 16, 2024);
    s.sim = SimConfig { delta_fine: 1.0 / (252.0 * 2.0), horizon: 10.0, warmup_horizon: 18.0, ..SimConfig::default() };
    s.estimate.accuracy = Accuracy::Fast;
    let report = run_mc(&s)?;
    print!("{}", report.to_csv()?);
    println!("non-converged: {}", report.nonconverged());
    Ok(())
}
