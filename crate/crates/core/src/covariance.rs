//! Stationary cross-covariances of the mfOU process.
//!
//! For `k >= 0` and `H = H_i + H_j`,
//!
//! `γ_ij(k) = e^{-α_i k} γ_ij(0) - ν_i ν_j H (ρ_ij + η_ij)/2 · G(k)`,
//! `G(k) = ∫_0^k e^{-α_i (k - v)} S(v) dv`,
//! `S(v) = (1 - H) α_j^{1-H} e^{α_j v} Γ(H - 1, α_j v)`,
//!
//! where `S(v)` is the closed form of the inner improper integral
//! `(1 - H) ∫_0^∞ e^{-α_j x} (v + x)^{H-2} dx`. Negative lags use
//! `γ_ij(-k) = γ_ji(k)`.
//!
//! `G` is accumulated over the sorted lags on a fixed graded mesh. The first
//! panel `[0, b]` splits `S(v) = v^{H-1} - α_j^{1-H} e^{α_j v} Γ(H, α_j v)`: the
//! singular power is integrated by its exponential series and the bounded rest by
//! tanh–sinh. Every later panel uses Gauss–Kronrod 21.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::model::{check_pair_hurst_sum, ModelParams, HURST_SUM_EPS};
use crate::quadrature::{gauss_kronrod21, tanh_sinh, Integral};
use crate::special::{gamma, upper_gamma_scaled};

/// Quadrature effort. `Default` targets `1e-9 (|γ_ij(0)| + 1)` absolute,
/// `Fast` targets `1e-7 (|γ_ij(0)| + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Accuracy {
    #[default]
    Default,
    Fast,
}

impl Accuracy {
    pub fn tolerance(self) -> f64 {
        match self {
            Accuracy::Default => 1e-9,
            Accuracy::Fast => 1e-7,
        }
    }

    fn mesh(self) -> Mesh {
        match self {
            Accuracy::Default => Mesh { alpha_len: 2.0, ratio: 4.0, ts_step: 1.0 / 16.0 },
            Accuracy::Fast => Mesh { alpha_len: 4.0, ratio: 8.0, ts_step: 1.0 / 8.0 },
        }
    }
}

impl std::str::FromStr for Accuracy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default" => Ok(Accuracy::Default),
            "fast" => Ok(Accuracy::Fast),
            _ => Err(Error::Config(format!("unknown accuracy `{s}` (expected default or fast)"))),
        }
    }
}

impl std::fmt::Display for Accuracy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Accuracy::Default => "default",
            Accuracy::Fast => "fast",
        })
    }
}

#[derive(Debug, Clone, Copy)]
struct Mesh {
    // max α·length of a panel
    alpha_len: f64,
    // max end/start ratio of a panel
    ratio: f64,
    ts_step: f64,
}

impl Mesh {
    fn refined(self) -> Mesh {
        Mesh {
            alpha_len: 0.5 * self.alpha_len,
            ratio: 1.0 + 0.5 * (self.ratio - 1.0),
            ts_step: 0.5 * self.ts_step,
        }
    }
}

/// One cross-covariance evaluation `γ_ij(k) = Cov(Y^i_{t+k}, Y^j_t)`.
#[derive(Debug, Clone, Copy)]
pub struct CcfRequest<'a> {
    pub i: usize,
    pub j: usize,
    /// Lag in time units; any sign.
    pub k: f64,
    pub params: &'a ModelParams,
    pub accuracy: Accuracy,
}

impl<'a> CcfRequest<'a> {
    pub fn new(i: usize, j: usize, k: f64, params: &'a ModelParams) -> Self {
        CcfRequest { i, j, k, params, accuracy: Accuracy::Default }
    }
}

fn check_indices(i: usize, j: usize, params: &ModelParams) -> Result<()> {
    params.check_dimensions()?;
    if i >= params.n() || j >= params.n() {
        return Err(Error::Dimension(format!("component index out of range for N = {}", params.n())));
    }
    if i != j {
        check_pair_hurst_sum(params.hurst[i], params.hurst[j])?;
    }
    Ok(())
}

/// Lag-zero covariance `γ_ij(0)`.
pub fn ccf_zero(i: usize, j: usize, params: &ModelParams) -> Result<f64> {
    check_indices(i, j, params)?;
    Ok(ccf_zero_unchecked(i, j, params))
}

fn ccf_zero_unchecked(i: usize, j: usize, params: &ModelParams) -> f64 {
    zero_with_hurst_sum(i, j, params, params.hurst_sum(i, j))
}

fn zero_with_hurst_sum(i: usize, j: usize, params: &ModelParams, h: f64) -> f64 {
    let (ai, aj) = (params.alpha[i], params.alpha[j]);
    let (pi, pj) = (ai.powf(1.0 - h), aj.powf(1.0 - h));
    let (rho, eta) = pair_coefficients(i, j, params);
    gamma(h + 1.0) * params.nu[i] * params.nu[j] / (2.0 * (ai + aj)) * ((pi + pj) * rho + (pj - pi) * eta)
}

fn pair_coefficients(i: usize, j: usize, params: &ModelParams) -> (f64, f64) {
    if i == j {
        (1.0, 0.0)
    } else {
        (params.rho[(i, j)], params.eta[(i, j)])
    }
}

/// Matrix `[γ_ij(0)]`, the stationary covariance of `Y_t`.
pub fn stationary_covariance(params: &ModelParams) -> Result<DMatrix<f64>> {
    let n = params.n();
    for i in 0..n {
        for j in i..n {
            check_indices(i, j, params)?;
        }
    }
    Ok(DMatrix::from_fn(n, n, |i, j| ccf_zero_unchecked(i, j, params)))
}

pub fn ccf_exact(req: &CcfRequest<'_>) -> Result<f64> {
    Ok(ccf_exact_lags(req.i, req.j, &[req.k], req.params, req.accuracy)?[0])
}

/// `γ_ij(k)` for every lag in `lags` (any order, any sign), sharing one integration sweep per direction.
pub fn ccf_exact_lags(
    i: usize,
    j: usize,
    lags: &[f64],
    params: &ModelParams,
    accuracy: Accuracy,
) -> Result<Vec<f64>> {
    check_indices(i, j, params)?;
    if let Some(k) = lags.iter().find(|k| !k.is_finite()) {
        return Err(Error::InvalidParams(format!("lag must be finite, got {k}")));
    }
    let mut out = vec![0.0; lags.len()];
    for (a, b, negative) in [(i, j, false), (j, i, true)] {
        let idx: Vec<usize> = (0..lags.len()).filter(|&m| (lags[m] < 0.0) == negative).collect();
        if idx.is_empty() {
            continue;
        }
        let ks: Vec<f64> = idx.iter().map(|&m| lags[m].abs()).collect();
        let vals = curve_nonnegative(a, b, &ks, params, accuracy)?;
        for (m, v) in idx.into_iter().zip(vals) {
            out[m] = v;
        }
    }
    Ok(out)
}

/// Small-α approximation `c0 - (ρ_ij + η_ij)/2 · ν_i ν_j k^{H_ij}` for `k >= 0`.
pub fn ccf_asymptotic(i: usize, j: usize, k: f64, c0: f64, params: &ModelParams) -> Result<f64> {
    check_indices(i, j, params)?;
    if !(k >= 0.0) {
        return Err(Error::InvalidParams(format!(
            "asymptotic covariance needs k >= 0, got {k}; use (j, i, -k)"
        )));
    }
    let (rho, eta) = pair_coefficients(i, j, params);
    let h = params.hurst_sum(i, j);
    Ok(c0 - 0.5 * (rho + eta) * params.nu[i] * params.nu[j] * k.powf(h))
}

fn curve_nonnegative(i: usize, j: usize, ks: &[f64], params: &ModelParams, accuracy: Accuracy) -> Result<Vec<f64>> {
    curve_with_hurst_sum(i, j, ks, params, accuracy, params.hurst_sum(i, j))
}

/// `γ_ij(k)` for `k >= 0` with the pair's Hurst sum replaced by `h`; the caller
/// guarantees `h != 1` for `i != j`.
pub(crate) fn curve_with_hurst_sum(
    i: usize,
    j: usize,
    ks: &[f64],
    params: &ModelParams,
    accuracy: Accuracy,
    h: f64,
) -> Result<Vec<f64>> {
    let c0 = zero_with_hurst_sum(i, j, params, h);
    let tolerance = accuracy.tolerance() * (c0.abs() + 1.0);
    let (rho, eta) = pair_coefficients(i, j, params);
    let ai = params.alpha[i];
    let pref = 0.5 * params.nu[i] * params.nu[j] * h * (rho + eta);
    if i == j && (h - 1.0).abs() < HURST_SUM_EPS || pref == 0.0 {
        // Ornstein–Uhlenbeck kernel or uncorrelated drivers: no memory correction
        return Ok(ks.iter().map(|&k| (-ai * k).exp() * c0).collect());
    }
    let kernel = Kernel::new(h, ai, params.alpha[j]);
    let mut mesh = accuracy.mesh();
    let mut bound = f64::INFINITY;
    for _ in 0..3 {
        let (g, err) = kernel.cumulative(ks, mesh);
        bound = err * pref.abs();
        if bound <= tolerance {
            return Ok(ks.iter().zip(g).map(|(&k, g)| (-ai * k).exp() * c0 - pref * g).collect());
        }
        mesh = mesh.refined();
    }
    Err(Error::Accuracy { bound, tolerance })
}

struct Kernel {
    h: f64,
    ai: f64,
    aj: f64,
    // α_j^{1-H}
    scale: f64,
}

impl Kernel {
    fn new(h: f64, ai: f64, aj: f64) -> Self {
        Kernel { h, ai, aj, scale: aj.powf(1.0 - h) }
    }

    fn s(&self, v: f64) -> f64 {
        (1.0 - self.h) * self.scale * upper_gamma_scaled(self.h - 1.0, self.aj * v)
    }

    // S(v) - v^{H-1}
    fn regular(&self, v: f64) -> f64 {
        -self.scale * upper_gamma_scaled(self.h, self.aj * v)
    }

    fn max_alpha(&self) -> f64 {
        self.ai.max(self.aj)
    }

    /// `(G(k) for k in ks, accumulated error bound)`.
    fn cumulative(&self, ks: &[f64], mesh: Mesh) -> (Vec<f64>, f64) {
        let mut order: Vec<usize> = (0..ks.len()).collect();
        order.sort_by(|&a, &b| ks[a].total_cmp(&ks[b]));
        let mut out = vec![0.0; ks.len()];
        let mut t = 0.0;
        let mut g = Integral::ZERO;
        let mut worst: f64 = 0.0;
        for idx in order {
            let target = ks[idx];
            while t < target {
                let next = self.next_node(t, target, mesh);
                let decay = (-self.ai * (next - t)).exp();
                let piece = if t == 0.0 { self.first_panel(next, mesh) } else { self.panel(t, next) };
                g = Integral { value: decay * g.value + piece.value, error: decay * g.error + piece.error };
                t = next;
            }
            out[idx] = g.value;
            worst = worst.max(g.error);
        }
        (out, worst)
    }

    fn next_node(&self, t: f64, target: f64, mesh: Mesh) -> f64 {
        let alpha = self.max_alpha();
        let by_alpha = if alpha > 0.0 { mesh.alpha_len / alpha } else { f64::INFINITY };
        let len = if t == 0.0 {
            0.5 * by_alpha
        } else {
            by_alpha.min((mesh.ratio - 1.0) * t)
        };
        if t + len >= target * (1.0 - 1e-12) {
            target
        } else {
            t + len
        }
    }

    // ∫_0^b e^{-α_i (b - v)} S(v) dv
    fn first_panel(&self, b: f64, mesh: Mesh) -> Integral {
        let x = self.ai * b;
        let mut term = 1.0;
        let mut sum = 1.0 / self.h;
        for n in 1..200 {
            term *= x / n as f64;
            let contrib = term / (n as f64 + self.h);
            sum += contrib;
            if contrib < 1e-17 * sum {
                break;
            }
        }
        let singular = b.powf(self.h) * (-x).exp() * sum;
        let rest = tanh_sinh(|v| (-self.ai * (b - v)).exp() * self.regular(v), 0.0, b, mesh.ts_step);
        Integral { value: singular + rest.value, error: rest.error + 1e-16 * singular.abs() }
    }

    fn panel(&self, a: f64, b: f64) -> Integral {
        gauss_kronrod21(|v| (-self.ai * (b - v)).exp() * self.s(v), a, b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_a() -> ModelParams {
        ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0)
    }

    #[test]
    fn ou_variance_at_half() {
        let p = ModelParams::univariate(0.7, 1.3, 0.5);
        let v = ccf_zero(0, 0, &p).unwrap();
        assert!((v - 1.3 * 1.3 / (2.0 * 0.7)).abs() < 1e-14);
        // 2H = 1 is the OU kernel: pure exponential decay
        for k in [0.1, 1.0, 5.0] {
            let g = ccf_exact(&CcfRequest::new(0, 0, k, &p)).unwrap();
            assert!((g - v * (-0.7 * k).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn panel_a_variance_matches_table_value() {
        let v = ccf_zero(0, 0, &panel_a()).unwrap();
        assert!((v - 0.24).abs() < 0.005, "V1 = {v}");
    }

    #[test]
    fn uncorrelated_pair_is_zero() {
        let p = ModelParams::bivariate([1.0, 2.0], [1.0, 1.0], [0.2, 0.3], 0.0, 0.0);
        assert_eq!(ccf_zero(0, 1, &p).unwrap(), 0.0);
        assert_eq!(ccf_exact_lags(0, 1, &[-0.5, 0.0, 0.3], &p, Accuracy::Default).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn zero_lag_is_symmetric() {
        let p = ModelParams::bivariate([0.5, 2.0], [0.7, 1.1], [0.15, 0.3], 0.6, 0.25);
        let a = ccf_zero(0, 1, &p).unwrap();
        let b = ccf_zero(1, 0, &p).unwrap();
        assert!((a - b).abs() < 1e-15);
        assert_eq!(ccf_exact(&CcfRequest::new(0, 1, 0.0, &p)).unwrap(), a);
    }

    #[test]
    fn negative_lag_is_transpose() {
        let p = ModelParams::bivariate([0.5, 2.0], [0.7, 1.1], [0.15, 0.3], 0.6, 0.25);
        let neg = ccf_exact(&CcfRequest::new(0, 1, -0.3, &p)).unwrap();
        let pos = ccf_exact(&CcfRequest::new(1, 0, 0.3, &p)).unwrap();
        assert_eq!(neg, pos);
    }

    #[test]
    fn equal_alpha_no_eta_is_symmetric() {
        let p = ModelParams::bivariate([1.1, 1.1], [0.7, 1.1], [0.15, 0.3], 0.6, 0.0);
        let ks = [0.004, 0.1, 1.0, 7.0];
        let a = ccf_exact_lags(0, 1, &ks, &p, Accuracy::Default).unwrap();
        let b = ccf_exact_lags(1, 0, &ks, &p, Accuracy::Default).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn batch_matches_single_evaluations() {
        let p = panel_a();
        let ks = [50.0 / 252.0, 1.0 / 252.0, 0.0, 20.0 / 252.0, 3.0 / 252.0];
        let batch = ccf_exact_lags(0, 1, &ks, &p, Accuracy::Default).unwrap();
        for (k, b) in ks.iter().zip(batch) {
            let single = ccf_exact(&CcfRequest::new(0, 1, *k, &p)).unwrap();
            assert!((single - b).abs() < 1e-10, "k = {k}: {single} vs {b}");
        }
    }

    #[test]
    fn fast_mode_is_close_to_default() {
        let p = ModelParams::bivariate([1.32, 0.05], [0.78, 0.79], [0.19, 0.45], 0.7, 0.1);
        let ks: Vec<f64> = [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 20.0, 50.0].iter().map(|k| k / 252.0).collect();
        for (i, j) in [(0, 0), (1, 1), (0, 1), (1, 0)] {
            let d = ccf_exact_lags(i, j, &ks, &p, Accuracy::Default).unwrap();
            let f = ccf_exact_lags(i, j, &ks, &p, Accuracy::Fast).unwrap();
            for (x, y) in d.iter().zip(&f) {
                assert!((x - y).abs() < 1e-7, "({i},{j}): {x} vs {y}");
            }
        }
    }

    #[test]
    fn hurst_sum_one_is_unsupported() {
        let p = ModelParams::bivariate([1.0, 1.0], [1.0, 1.0], [0.45, 0.55], 0.5, 0.0);
        assert_eq!(ccf_zero(0, 1, &p).unwrap_err().kind(), "unsupported");
        assert_eq!(ccf_exact(&CcfRequest::new(0, 1, 0.1, &p)).unwrap_err().kind(), "unsupported");
    }

    #[test]
    fn asymptotic_trivial_points() {
        let p = ModelParams::univariate(0.01, 1.0, 0.1);
        assert_eq!(ccf_asymptotic(0, 0, 0.0, 0.7, &p).unwrap(), 0.7);
        assert!((ccf_asymptotic(0, 0, 1.0, 0.7, &p).unwrap() - 0.2).abs() < 1e-15);
        assert!(ccf_asymptotic(0, 0, -1.0, 0.7, &p).is_err());
    }

    #[test]
    fn decays_to_zero() {
        let p = ModelParams::bivariate([1.32, 0.3], [0.78, 0.79], [0.19, 0.41], 0.7, 0.1);
        for (i, j) in [(0, 0), (1, 1), (0, 1), (1, 0)] {
            let k = 50.0 / p.alpha[i].min(p.alpha[j]);
            let g = ccf_exact(&CcfRequest::new(i, j, k, &p)).unwrap();
            let g0 = ccf_zero(i, j, &p).unwrap();
            assert!(g.abs() < 0.02 * g0.abs(), "({i},{j}) γ({k}) = {g}, γ(0) = {g0}");
        }
    }

    #[test]
    fn power_law_tail() {
        let p = ModelParams::bivariate([1.32, 0.7], [0.78, 0.79], [0.19, 0.35], 0.8, 0.1);
        for (i, j) in [(0, 0), (1, 1), (0, 1), (1, 0)] {
            let a = p.alpha[i].min(p.alpha[j]);
            let (k1, k2) = (100.0 / a, 1000.0 / a);
            let g = ccf_exact_lags(i, j, &[k1, k2], &p, Accuracy::Default).unwrap();
            let slope = (g[1].abs().ln() - g[0].abs().ln()) / (k2.ln() - k1.ln());
            let want = p.hurst_sum(i, j) - 2.0;
            assert!((slope - want).abs() < 0.1, "({i},{j}) slope {slope} vs {want}");
        }
    }
}
