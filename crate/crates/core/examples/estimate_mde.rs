//! Joint minimum-distance fit on one simulated path.

use mfou::estimator::{mde_estimate, EstimateOptions};
use mfou::simulator::{simulate_mfou, SimConfig};
use mfou::ModelParams;

fn main() -> mfou::Result<()> {
    let truth = ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0);
    let cfg = SimConfig { delta_fine: 1.0 / (252.0 * 4.0), seed: 3, ..SimConfig::default() };
    let panel = simulate_mfou(&truth, &cfg)?;
    let r = mde_estimate(&panel, &EstimateOptions::default())?;
    let t = &r.theta_hat;
    println!("alpha {:.3?}  nu {:.3?}  H {:.3?}", t.alpha, t.nu, t.hurst);
    println!("rho {:.3}  eta {:.3}", t.rho[(0, 1)], t.eta[(0, 1)]);
    println!("loss {:.3e} after {} iterations ({:?})", r.loss, r.iterations, r.stop);
    Ok(())
}
