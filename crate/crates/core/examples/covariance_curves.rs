//! Exact and small-alpha cross-covariances against the lag.

use mfou::covariance::{ccf_asymptotic, ccf_exact_lags, ccf_zero, Accuracy};
use mfou::ModelParams;

fn main() -> mfou::Result<()> {
    let params = ModelParams::bivariate([0.5, 2.0], [0.8, 0.6], [0.12, 0.3], 0.8, 0.1);
    let lags: Vec<f64> = [0, 1, 5, 20, 50, 100].iter().map(|&k| k as f64 / 252.0).collect();
    println!("{:>6} {:>12} {:>12} {:>12}", "lag", "gamma_12", "gamma_21", "asym_12");
    let g12 = ccf_exact_lags(0, 1, &lags, &params, Accuracy::Default)?;
    let g21 = ccf_exact_lags(1, 0, &lags, &params, Accuracy::Default)?;
    let c0 = ccf_zero(0, 1, &params)?;
    for (k, t) in lags.iter().enumerate() {
        let a = ccf_asymptotic(0, 1, *t, c0, &params)?;
        println!("{:>6.0} {:>12.6} {:>12.6} {:>12.6}", t * 252.0, g12[k], g21[k], a);
    }
    Ok(())
}
