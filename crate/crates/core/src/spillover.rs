//! Spillover indices of the causal mfOU model.
//!
//! In the causal model every pair's asymmetry is tied to the Hurst exponents and
//! the correlation, and the normalized forecast-error-variance shares `ψ̃` do not
//! depend on the horizon. They are built from
//!
//! `G_ij = √(B_ii B_jj / (sin πH_i sin πH_j)) · P_ij`,
//! `P_ij = sin(π(H_i + H_j)) / (B_ij (cos πH_i + cos πH_j)) · ρ_ij`,
//!
//! with `B_ij = B(H_i + ½, H_j + ½)`. `P` is evaluated through
//! `sin(πS) / (cos πH_i + cos πH_j) = sin(πS/2) / cos(πD/2)` (`S = H_i + H_j`,
//! `D = H_i − H_j`), which has no removable singularity left.

use std::f64::consts::PI;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::special::beta;

/// Asymmetry coefficient of a causal mfBm pair in this crate's sign convention:
/// `η_ij = −ρ_ij tan(π(H_i + H_j)/2) tan(π(H_i − H_j)/2)`.
pub fn causal_eta(h_i: f64, h_j: f64, rho_ij: f64) -> f64 {
    if h_i == h_j || rho_ij == 0.0 {
        return 0.0;
    }
    -rho_ij * (0.5 * PI * (h_i + h_j)).tan() * (0.5 * PI * (h_i - h_j)).tan()
}

fn check_hurst(hurst: &[f64]) -> Result<()> {
    if let Some(h) = hurst.iter().find(|h| !(**h > 0.0 && **h < 1.0)) {
        return Err(Error::InvalidParams(format!("Hurst exponent {h} outside (0, 1)")));
    }
    Ok(())
}

fn check_square(name: &str, m: &DMatrix<f64>, n: usize) -> Result<()> {
    if m.nrows() != n || m.ncols() != n {
        return Err(Error::Dimension(format!("{name} is {}x{}, expected {n}x{n}", m.nrows(), m.ncols())));
    }
    Ok(())
}

/// Mixing matrix `P` with `M Mᵀ = P` for the causal driving noise.
pub fn p_matrix(hurst: &[f64], rho: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_hurst(hurst)?;
    check_square("rho", rho, hurst.len())?;
    Ok(DMatrix::from_fn(hurst.len(), hurst.len(), |i, j| {
        let (hi, hj) = (hurst[i], hurst[j]);
        let ratio = (0.5 * PI * (hi + hj)).sin() / (0.5 * PI * (hi - hj)).cos();
        ratio / beta(hi + 0.5, hj + 0.5) * rho[(i, j)]
    }))
}

/// Innovation covariance `G` of the adapted discretization; `G_ii = 1`.
pub fn g_matrix(hurst: &[f64], rho: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = p_matrix(hurst, rho)?;
    let scale: Vec<f64> = hurst.iter().map(|&h| (beta(h + 0.5, h + 0.5) / (PI * h).sin()).sqrt()).collect();
    Ok(DMatrix::from_fn(hurst.len(), hurst.len(), |i, j| {
        if i == j {
            1.0
        } else {
            scale[i] * scale[j] * p[(i, j)]
        }
    }))
}

/// Row-normalized shares `ψ̃_ij = (G_ij² / √G_jj) / Σ_m (G_im² / √G_mm)`.
pub fn psi_tilde(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = g.nrows();
    check_square("G", g, n)?;
    if let Some(i) = (0..n).find(|&i| !(g[(i, i)] > 0.0)) {
        return Err(Error::InvalidParams(format!("G has non-positive diagonal entry at {}", i + 1)));
    }
    let mut psi = DMatrix::from_fn(n, n, |i, j| g[(i, j)].powi(2) / g[(j, j)].sqrt());
    for i in 0..n {
        let total: f64 = psi.row(i).sum();
        for j in 0..n {
            psi[(i, j)] /= total;
        }
    }
    Ok(psi)
}

/// Total, directional, net and net-pairwise spillover indices in percent.
#[derive(Debug, Clone, PartialEq)]
pub struct SpilloverTable {
    pub psi_tilde: DMatrix<f64>,
    pub total: f64,
    /// `S_{i,·}`: received by `i` from all others.
    pub received: Vec<f64>,
    /// `S_{·,i}`: transmitted by `i` to all others.
    pub transmitted: Vec<f64>,
    pub net: Vec<f64>,
    /// `S_{i,j} = 100 (ψ̃_ji − ψ̃_ij) / N`.
    pub net_pairwise: DMatrix<f64>,
}

pub fn spillover_indices(psi: &DMatrix<f64>) -> Result<SpilloverTable> {
    let n = psi.nrows();
    check_square("psi", psi, n)?;
    let scale = 100.0 / n as f64;
    let off = |i: usize, j: usize| if i == j { 0.0 } else { psi[(i, j)] };
    let received: Vec<f64> = (0..n).map(|i| scale * (0..n).map(|j| off(i, j)).sum::<f64>()).collect();
    let transmitted: Vec<f64> = (0..n).map(|i| scale * (0..n).map(|j| off(j, i)).sum::<f64>()).collect();
    let total = scale * (0..n).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| off(i, j)).sum::<f64>();
    let net = transmitted.iter().zip(&received).map(|(t, r)| t - r).collect();
    let net_pairwise = DMatrix::from_fn(n, n, |i, j| scale * (psi[(j, i)] - psi[(i, j)]));
    Ok(SpilloverTable { psi_tilde: psi.clone(), total, received, transmitted, net, net_pairwise })
}

/// `G`, `ψ̃` and the index table in one call.
pub fn spillover_from_params(hurst: &[f64], rho: &DMatrix<f64>) -> Result<SpilloverTable> {
    spillover_indices(&psi_tilde(&g_matrix(hurst, rho)?)?)
}

impl SpilloverTable {
    /// `(i, j, S_ij)` for every ordered pair with `S_ij > 0`, zero-based.
    pub fn edge_list(&self) -> Vec<(usize, usize, f64)> {
        let n = self.net.len();
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                if i != j && self.net_pairwise[(i, j)] > 0.0 {
                    out.push((i, j, self.net_pairwise[(i, j)]));
                }
            }
        }
        out
    }
}
