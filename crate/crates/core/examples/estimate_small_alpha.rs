//! Small-alpha fit: free lag-zero levels, alpha implied by the variance.

use mfou::estimator::{mde_estimate_asymptotic, EstimateOptions};
use mfou::simulator::{simulate_mfou, SimConfig};
use mfou::ModelParams;

fn main() -> mfou::Result<()> {
    let truth = ModelParams::bivariate([0.01, 0.02], [0.2, 0.25], [0.1, 0.12], 0.8, 0.05);
    let cfg = SimConfig { delta_fine: 1.0 / (252.0 * 4.0), seed: 5, ..SimConfig::default() };
    let panel = simulate_mfou(&truth, &cfg)?;
    let r = mde_estimate_asymptotic(&panel, &EstimateOptions::default())?;
    let lv = r.levels.as_ref().expect("small-alpha fits report levels");
    println!("V {:.4?}  C12 {:.4}", lv.variance, lv.covariance[(0, 1)]);
    println!("H {:.3?}  rho {:.3}  eta {:.3}", r.theta_hat.hurst, r.theta_hat.rho[(0, 1)], r.theta_hat.eta[(0, 1)]);
    println!("implied alpha {:.4?}", r.theta_hat.alpha);
    Ok(())
}
