//! Spillover indices of a three-asset causal model.

use mfou::spillover::{causal_eta, spillover_from_params};
use nalgebra::DMatrix;

fn main() -> mfou::Result<()> {
    let hurst = [0.08, 0.15, 0.3];
    let rho = DMatrix::from_row_slice(3, 3, &[1.0, 0.7, 0.4, 0.7, 1.0, 0.5, 0.4, 0.5, 1.0]);
    let table = spillover_from_params(&hurst, &rho)?;
    println!("psi~ =\n{:.4}", table.psi_tilde);
    for i in 0..3 {
        println!("asset {}: received {:.4} transmitted {:.4} net {:+.4}", i + 1, table.received[i], table.transmitted[i], table.net[i]);
    }
    println!("total {:.4}", table.total);
    println!("causal eta_12 = {:.4}", causal_eta(hurst[0], hurst[1], rho[(0, 1)]));
    Ok(())
}
