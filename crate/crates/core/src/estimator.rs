//! Minimum-distance estimation from sample cross-covariances.
//!
//! The moment vector stacks, for each component `i`, the autocovariances
//! `γ_ii(k)` over the lag set; then for each pair `i < j` the cross-covariances
//! `γ_ij(k)` over all lags followed by `γ_ji(k)` over the non-zero lags. The
//! estimate minimizes `(γ̂ − γ(θ))ᵀ W (γ̂ − γ(θ))` with a box-constrained
//! quasi-Newton method started from a two-step moment initializer.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::covariance::{ccf_exact_lags, curve_with_hurst_sum, Accuracy};
use crate::error::{Error, Result};
use crate::kvdoc::KvDoc;
use crate::model::{validate_params_with_tol, ModelParams, ValidationReport, DEFAULT_TOL_COHERENCY};
use crate::optim::{minimize, Bounds, OptimOptions, StopReason};
use crate::panel::PathPanel;
use crate::special::gamma;
use crate::spillover::causal_eta;

/// Half-width of the penalized band around `H_i + H_j = 1`.
pub const BARRIER_WIDTH: f64 = 1e-3;

pub const ALPHA_BOUNDS: (f64, f64) = (1e-4, 50.0);
pub const NU_BOUNDS: (f64, f64) = (1e-4, 10.0);
pub const HURST_BOUNDS: (f64, f64) = (0.01, 0.99);
pub const RHO_BOUNDS: (f64, f64) = (-0.999, 0.999);
pub const ETA_BOUNDS: (f64, f64) = (-2.0, 2.0);
pub const VARIANCE_BOUNDS: (f64, f64) = (1e-6, 1e3);
pub const COVARIANCE_BOUNDS: (f64, f64) = (-1e3, 1e3);

/// Strictly increasing lags in units of the sampling interval, starting at 0.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LagSet(Vec<u32>);

impl LagSet {
    pub fn new(lags: Vec<u32>) -> Result<Self> {
        if lags.first() != Some(&0) {
            return Err(Error::Config("lag set must start with 0".into()));
        }
        if lags.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("lags must be strictly increasing".into()));
        }
        Ok(LagSet(lags))
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> u32 {
        *self.0.last().expect("lag set is non-empty")
    }
}

impl Default for LagSet {
    fn default() -> Self {
        LagSet(vec![0, 1, 2, 3, 4, 5, 20, 50])
    }
}

impl FromStr for LagSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lags = s
            .split(',')
            .map(|t| t.trim().parse::<u32>().map_err(|_| Error::Config(format!("bad lag `{}`", t.trim()))))
            .collect::<Result<Vec<_>>>()?;
        LagSet::new(lags)
    }
}

impl fmt::Display for LagSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(u32::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

/// `N (L + (N − 1)(L − ½))`.
pub fn moment_count(n: usize, l: usize) -> usize {
    n * l + n * (n.saturating_sub(1)) * (2 * l).saturating_sub(1) / 2
}

/// One slot of the moment vector: `γ_ij(lag)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MomentEntry {
    pub i: usize,
    pub j: usize,
    pub lag: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MomentLayout {
    pub n: usize,
    pub lags: LagSet,
    pub entries: Vec<MomentEntry>,
}

impl MomentLayout {
    pub fn new(n: usize, lags: &LagSet) -> Self {
        let mut entries = Vec::with_capacity(moment_count(n, lags.len()));
        for i in 0..n {
            entries.extend(lags.as_slice().iter().map(|&lag| MomentEntry { i, j: i, lag }));
        }
        for (i, j) in pairs(n) {
            entries.extend(lags.as_slice().iter().map(|&lag| MomentEntry { i, j, lag }));
            entries.extend(lags.as_slice().iter().filter(|&&k| k > 0).map(|&lag| MomentEntry { i: j, j: i, lag }));
        }
        MomentLayout { n, lags: lags.clone(), entries }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

fn pairs(n: usize) -> Vec<(usize, usize)> {
    (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect()
}

/// Per-series means over non-missing values.
pub fn sample_means(panel: &PathPanel) -> Result<Vec<f64>> {
    (0..panel.n_series())
        .map(|i| {
            let (sum, count) = (0..panel.len())
                .filter_map(|t| panel.get(i, t))
                .fold((0.0, 0usize), |(s, c), v| (s + v, c + 1));
            if count == 0 {
                Err(Error::Data(format!("series `{}` has no observations", panel.names[i])))
            } else {
                Ok(sum / count as f64)
            }
        })
        .collect()
}

fn ccf_with_means(panel: &PathPanel, means: &[f64], i: usize, j: usize, k: u32) -> Result<f64> {
    let k = k as usize;
    let n = panel.len();
    let (yi, yj) = (&panel.values[i], &panel.values[j]);
    let (mi, mj) = (&panel.missing[i], &panel.missing[j]);
    let mut sum = 0.0;
    let mut count = 0usize;
    for l in 0..n.saturating_sub(k) {
        if !mi[l + k] && !mj[l] {
            sum += (yi[l + k] - means[i]) * (yj[l] - means[j]);
            count += 1;
        }
    }
    if count < 30.max(k + 2) {
        return Err(Error::Data(format!(
            "only {count} overlapping observations for `{}`/`{}` at lag {k}",
            panel.names[i], panel.names[j]
        )));
    }
    Ok(sum / count as f64)
}

/// `γ̂_ij(k)`: average of `(Y^i_{l+k} − μ̂_i)(Y^j_l − μ̂_j)` over the positions where
/// both observations exist.
pub fn sample_ccf(panel: &PathPanel, i: usize, j: usize, k: u32) -> Result<f64> {
    if i >= panel.n_series() || j >= panel.n_series() {
        return Err(Error::Dimension(format!("series index out of range for N = {}", panel.n_series())));
    }
    ccf_with_means(panel, &sample_means(panel)?, i, j, k)
}

/// Sample moment vector together with the means used to centre it.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleMoments {
    pub layout: MomentLayout,
    pub values: Vec<f64>,
    pub means: Vec<f64>,
}

impl SampleMoments {
    pub fn from_panel(panel: &PathPanel, lags: &LagSet) -> Result<Self> {
        let means = sample_means(panel)?;
        let layout = MomentLayout::new(panel.n_series(), lags);
        let values = layout
            .entries
            .iter()
            .map(|e| ccf_with_means(panel, &means, e.i, e.j, e.lag))
            .collect::<Result<Vec<_>>>()?;
        Ok(SampleMoments { layout, values, means })
    }

    /// Model moments of `params` dressed up as a sample; the exact-fit fixed point.
    pub fn from_model(params: &ModelParams, lags: &LagSet, delta: f64, accuracy: Accuracy) -> Result<Self> {
        let layout = MomentLayout::new(params.n(), lags);
        let values = model_moments(params, &layout, delta, accuracy)?;
        Ok(SampleMoments { layout, values, means: params.mu.clone() })
    }

    fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Model moment vector `γ(θ)` in the layout's order; lag `k` means time `kΔ`.
pub fn model_moments(params: &ModelParams, layout: &MomentLayout, delta: f64, accuracy: Accuracy) -> Result<Vec<f64>> {
    if params.n() != layout.n {
        return Err(Error::Dimension(format!("parameters for N = {}, layout for N = {}", params.n(), layout.n)));
    }
    Ok(exact_moments(params, layout, delta, accuracy, false)?.0)
}

struct Curve {
    i: usize,
    j: usize,
    ks: Vec<f64>,
    h_override: Option<f64>,
}

fn curves(params: &ModelParams, layout: &MomentLayout, delta: f64, barrier: bool) -> (Vec<Curve>, f64) {
    let lags = layout.lags.as_slice();
    let forward: Vec<f64> = lags.iter().map(|&k| k as f64 * delta).collect();
    let mut out: Vec<Curve> = (0..layout.n).map(|i| Curve { i, j: i, ks: forward.clone(), h_override: None }).collect();
    let mut band = 0.0;
    for (i, j) in pairs(layout.n) {
        let d = params.hurst_sum(i, j) - 1.0;
        if barrier && d.abs() < BARRIER_WIDTH {
            let h = 1.0 + if d >= 0.0 { BARRIER_WIDTH } else { -BARRIER_WIDTH };
            let t = 1.0 - d.abs() / BARRIER_WIDTH;
            band += t * t / (1.0 - t + 1e-9);
            out.push(Curve { i, j, ks: forward.clone(), h_override: Some(h) });
            out.push(Curve { i: j, j: i, ks: forward[1..].to_vec(), h_override: Some(h) });
        } else {
            let mut ks = forward.clone();
            ks.extend(forward[1..].iter().map(|k| -k));
            out.push(Curve { i, j, ks, h_override: None });
        }
    }
    (out, band)
}

// Model moments and the summed barrier shape (zero outside the band).
fn exact_moments(
    params: &ModelParams,
    layout: &MomentLayout,
    delta: f64,
    accuracy: Accuracy,
    barrier: bool,
) -> Result<(Vec<f64>, f64)> {
    let (tasks, band) = curves(params, layout, delta, barrier);
    let eval = |c: &Curve| match c.h_override {
        Some(h) => curve_with_hurst_sum(c.i, c.j, &c.ks, params, accuracy, h),
        None => ccf_exact_lags(c.i, c.j, &c.ks, params, accuracy),
    };
    let parts: Vec<Vec<f64>> = if tasks.len() >= 8 {
        tasks.par_iter().map(eval).collect::<Result<_>>()?
    } else {
        tasks.iter().map(eval).collect::<Result<_>>()?
    };
    Ok((parts.concat(), band))
}

/// Small-α moments with free lag-zero levels `V_i` (variances) and `C_ij` (covariances, `i < j`).
pub fn asymptotic_moments(
    params: &ModelParams,
    variance: &[f64],
    covariance: &DMatrix<f64>,
    layout: &MomentLayout,
    delta: f64,
) -> Result<Vec<f64>> {
    let n = params.n();
    if n != layout.n || variance.len() != n || covariance.nrows() != n || covariance.ncols() != n {
        return Err(Error::Dimension("asymptotic moment inputs disagree on N".into()));
    }
    Ok(layout
        .entries
        .iter()
        .map(|e| {
            let t = e.lag as f64 * delta;
            if e.i == e.j {
                variance[e.i] - 0.5 * params.nu[e.i].powi(2) * t.powf(2.0 * params.hurst[e.i])
            } else {
                let (a, b) = (e.i.min(e.j), e.i.max(e.j));
                let slope = params.rho[(e.i, e.j)] + params.eta[(e.i, e.j)];
                covariance[(a, b)] - 0.5 * slope * params.nu[e.i] * params.nu[e.j] * t.powf(params.hurst_sum(e.i, e.j))
            }
        })
        .collect())
}

/// Quadratic form weight.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum Weight {
    #[default]
    Identity,
    Diagonal(Vec<f64>),
    Full(DMatrix<f64>),
}

impl Weight {
    fn check(&self, len: usize) -> Result<()> {
        let ok = match self {
            Weight::Identity => true,
            Weight::Diagonal(d) => d.len() == len,
            Weight::Full(m) => m.nrows() == len && m.ncols() == len,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Dimension(format!("weight does not match {len} moments")))
        }
    }

    pub fn quadratic_form(&self, r: &[f64]) -> f64 {
        match self {
            Weight::Identity => r.iter().map(|v| v * v).sum(),
            Weight::Diagonal(d) => r.iter().zip(d).map(|(v, w)| w * v * v).sum(),
            Weight::Full(m) => {
                let v = nalgebra::DVector::from_column_slice(r);
                v.dot(&(m * &v))
            }
        }
    }
}

impl FromStr for Weight {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Weight::Identity),
            other => Err(Error::Config(format!("weight `{other}`: only `identity` can be configured by name"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Exact,
    Asymptotic,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Exact => "exact",
            Variant::Asymptotic => "asymptotic",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exact" => Ok(Variant::Exact),
            "asymptotic" => Ok(Variant::Asymptotic),
            other => Err(Error::Config(format!("unknown estimator variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateOptions {
    pub lags: LagSet,
    /// Sampling interval Δ.
    pub delta: f64,
    pub weight: Weight,
    pub accuracy: Accuracy,
    pub optim: OptimOptions,
    /// Ties every `η_ij` to `causal_eta(H_i, H_j, ρ_ij)`.
    pub causal: bool,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        EstimateOptions {
            lags: LagSet::default(),
            delta: 1.0 / 252.0,
            weight: Weight::Identity,
            accuracy: Accuracy::Default,
            optim: OptimOptions::default(),
            causal: false,
        }
    }
}

impl EstimateOptions {
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("lags", &self.lags);
        doc.set("delta", self.delta);
        doc.set("accuracy", self.accuracy);
        doc.set("causal", self.causal);
        doc.set("max_iter", self.optim.max_iter);
        doc.set("factr", self.optim.factr);
        doc.set("memory", self.optim.memory);
        doc.set("fd_step", self.optim.fd_step);
        doc
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut o = EstimateOptions::default();
        if let Some(v) = doc.get("lags") {
            o.lags = v.parse()?;
        }
        if let Some(v) = doc.get_f64("delta")? {
            if !(v > 0.0) {
                return Err(Error::Config(format!("delta must be positive, got {v}")));
            }
            o.delta = v;
        }
        if let Some(v) = doc.get("weight") {
            o.weight = v.parse()?;
        }
        if let Some(v) = doc.get("accuracy") {
            o.accuracy = v.parse()?;
        }
        if let Some(v) = doc.get("causal") {
            o.causal = v.parse().map_err(|_| Error::Config(format!("causal: expected true/false, got `{v}`")))?;
        }
        if let Some(v) = doc.get_u64("max_iter")? {
            o.optim.max_iter = v as usize;
        }
        if let Some(v) = doc.get_u64("memory")? {
            o.optim.memory = (v as usize).max(1);
        }
        if let Some(v) = doc.get_f64("factr")? {
            o.optim.factr = v;
        }
        if let Some(v) = doc.get_f64("fd_step")? {
            o.optim.fd_step = v;
        }
        Ok(o)
    }
}

/// Loss of the exact model at `theta`, including the barrier near `H_i + H_j = 1`.
pub fn mde_loss(theta: &ModelParams, sample: &SampleMoments, opts: &EstimateOptions) -> Result<f64> {
    opts.weight.check(sample.values.len())?;
    if theta.n() != sample.layout.n {
        return Err(Error::Dimension(format!("parameters for N = {}, moments for N = {}", theta.n(), sample.layout.n)));
    }
    let (model, band) = exact_moments(theta, &sample.layout, opts.delta, opts.accuracy, true)?;
    let r: Vec<f64> = sample.values.iter().zip(&model).map(|(a, b)| a - b).collect();
    Ok(opts.weight.quadratic_form(&r) + (1.0 + sample.norm2()) * band)
}

/// Loss of the small-α model.
pub fn mde_loss_asymptotic(
    theta: &ModelParams,
    variance: &[f64],
    covariance: &DMatrix<f64>,
    sample: &SampleMoments,
    opts: &EstimateOptions,
) -> Result<f64> {
    opts.weight.check(sample.values.len())?;
    let model = asymptotic_moments(theta, variance, covariance, &sample.layout, opts.delta)?;
    let r: Vec<f64> = sample.values.iter().zip(&model).map(|(a, b)| a - b).collect();
    Ok(opts.weight.quadratic_form(&r))
}

/// `α` implied by the stationary variance of a small-α fit: `(ν² Γ(2H+1) / (2V))^{1/(2H)}`.
pub fn implied_alpha(nu: f64, hurst: f64, variance: f64) -> f64 {
    (nu * nu * gamma(2.0 * hurst + 1.0) / (2.0 * variance)).powf(0.5 / hurst)
}

fn second_difference_power(panel: &PathPanel, i: usize, s: usize) -> Option<f64> {
    let y = &panel.values[i];
    let m = &panel.missing[i];
    let (sum, count) = (0..panel.len().saturating_sub(2 * s))
        .filter(|&t| !m[t] && !m[t + s] && !m[t + 2 * s])
        .map(|t| (y[t + 2 * s] - 2.0 * y[t + s] + y[t]).powi(2))
        .fold((0.0, 0usize), |(a, c), v| (a + v, c + 1));
    (count > 0).then(|| sum / count as f64)
}

/// Two-step moment initializer: per-series `(H, ν, α)` from second differences and
/// the variance, then per-pair `(ρ, η)` from the first-lag cross-covariance increments.
pub fn init_2step(panel: &PathPanel, delta: f64) -> Result<ModelParams> {
    let n = panel.n_series();
    let means = sample_means(panel)?;
    let mut alpha = vec![0.0; n];
    let mut nu = vec![0.0; n];
    let mut hurst = vec![0.0; n];
    for i in 0..n {
        let observed = panel.len() - panel.missing_count(i);
        if observed < 100 {
            return Err(Error::Init(format!("series `{}` has {observed} observations, need 100", panel.names[i])));
        }
        let v1 = second_difference_power(panel, i, 1);
        let v2 = second_difference_power(panel, i, 2);
        let (v1, v2) = match (v1, v2) {
            (Some(a), Some(b)) if a > 0.0 && b > 0.0 => (a, b),
            _ => return Err(Error::Init(format!("degenerate second differences in `{}`", panel.names[i]))),
        };
        let h = (0.5 * (v2 / v1).log2()).clamp(HURST_BOUNDS.0, HURST_BOUNDS.1);
        let nu2 = v1 / ((4.0 - 2f64.powf(2.0 * h)) * delta.powf(2.0 * h));
        let c0 = ccf_with_means(panel, &means, i, i, 0)?;
        if !(c0 > 0.0) {
            return Err(Error::Init(format!("series `{}` has zero variance", panel.names[i])));
        }
        hurst[i] = h;
        nu[i] = nu2.sqrt().clamp(NU_BOUNDS.0, NU_BOUNDS.1);
        alpha[i] = implied_alpha(nu[i], h, c0).clamp(ALPHA_BOUNDS.0, ALPHA_BOUNDS.1);
    }
    let mut rho = DMatrix::identity(n, n);
    let mut eta = DMatrix::zeros(n, n);
    for (i, j) in pairs(n) {
        let scale = 0.5 * nu[i] * nu[j] * delta.powf(hurst[i] + hurst[j]);
        let fwd = ccf_with_means(panel, &means, i, j, 0)? - ccf_with_means(panel, &means, i, j, 1)?;
        let bwd = ccf_with_means(panel, &means, j, i, 0)? - ccf_with_means(panel, &means, j, i, 1)?;
        let (plus, minus) = (fwd / scale, bwd / scale);
        let r = (0.5 * (plus + minus)).clamp(RHO_BOUNDS.0, RHO_BOUNDS.1);
        let e = (0.5 * (plus - minus)).clamp(ETA_BOUNDS.0, ETA_BOUNDS.1);
        if !(r.is_finite() && e.is_finite()) {
            return Err(Error::Init(format!("cross stage failed for `{}`/`{}`", panel.names[i], panel.names[j])));
        }
        rho[(i, j)] = r;
        rho[(j, i)] = r;
        eta[(i, j)] = e;
        eta[(j, i)] = -e;
    }
    ModelParams::new(alpha, nu, means, hurst, rho, eta)
}

/// Fallback start: `H = 0.3`, `α = 1`, `ν` matching the sample variance, independent components.
pub fn init_default(sample: &SampleMoments) -> ModelParams {
    let n = sample.layout.n;
    let l = sample.layout.lags.len();
    let h: f64 = 0.3;
    let nu = (0..n)
        .map(|i| {
            let c0 = sample.values[i * l].max(1e-12);
            (2.0 * c0 / gamma(2.0 * h + 1.0)).sqrt().clamp(NU_BOUNDS.0, NU_BOUNDS.1)
        })
        .collect();
    ModelParams {
        alpha: vec![1.0; n],
        nu,
        mu: sample.means.clone(),
        hurst: vec![h; n],
        rho: DMatrix::identity(n, n),
        eta: DMatrix::zeros(n, n),
    }
}

/// Free lag-zero levels of a small-α fit.
#[derive(Debug, Clone, PartialEq)]
pub struct LagZeroLevels {
    pub variance: Vec<f64>,
    /// Upper triangle holds `C_ij`; the matrix is kept symmetric with `V` on the diagonal.
    pub covariance: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct EstimateResult {
    pub variant: Variant,
    pub causal: bool,
    pub theta_hat: ModelParams,
    pub levels: Option<LagZeroLevels>,
    pub loss: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub converged: bool,
    pub stop: StopReason,
    pub active_bounds: Vec<String>,
    pub theta_init: ModelParams,
    pub init_fallback: bool,
    pub sample: SampleMoments,
    /// `γ̂ − γ(θ̂)`.
    pub residuals: Vec<f64>,
    pub coherency: ValidationReport,
}

impl EstimateResult {
    /// Diagnostics document (the estimate itself is `theta_hat.to_kv()`).
    pub fn diagnostics_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("variant", self.variant);
        doc.set("causal", self.causal);
        doc.set("loss", self.loss);
        doc.set("iterations", self.iterations);
        doc.set("evaluations", self.evaluations);
        doc.set("converged", self.converged);
        doc.set("stop", format!("{:?}", self.stop));
        doc.set("active_bounds", self.active_bounds.join(","));
        doc.set("init_fallback", self.init_fallback);
        doc.set("moments", self.residuals.len());
        doc.set("coherency_violations", self.coherency.violations.len());
        for (k, v) in self.theta_init.to_kv().iter() {
            doc.set(&format!("init.{k}"), v);
        }
        if let Some(lv) = &self.levels {
            for (k, v) in levels_kv(lv).iter() {
                doc.set(k, v);
            }
        }
        doc
    }

    /// Columns `i,j,lag,sample,model,residual` with 1-based indices.
    pub fn residuals_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["i", "j", "lag", "sample", "model", "residual"])?;
        for ((e, s), r) in self.sample.layout.entries.iter().zip(&self.sample.values).zip(&self.residuals) {
            w.write_record([
                (e.i + 1).to_string(),
                (e.j + 1).to_string(),
                e.lag.to_string(),
                s.to_string(),
                (s - r).to_string(),
                r.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub fn levels_kv(levels: &LagZeroLevels) -> KvDoc {
    let mut doc = KvDoc::new();
    let n = levels.variance.len();
    for i in 0..n {
        doc.set(&format!("V.{}", i + 1), levels.variance[i]);
    }
    for (i, j) in pairs(n) {
        doc.set(&format!("C.{}.{}", i + 1, j + 1), levels.covariance[(i, j)]);
    }
    doc
}

// Packed parameter vector of one variant, with an optional set of frozen slots.
struct Problem<'a> {
    sample: &'a SampleMoments,
    opts: &'a EstimateOptions,
    variant: Variant,
    pairs: Vec<(usize, usize)>,
    full: Vec<f64>,
    free: Vec<usize>,
    norm2: f64,
}

impl<'a> Problem<'a> {
    fn new(sample: &'a SampleMoments, opts: &'a EstimateOptions, variant: Variant, start: &ModelParams) -> Self {
        let n = sample.layout.n;
        let pairs = pairs(n);
        let mut p = Problem { sample, opts, variant, pairs, full: Vec::new(), free: Vec::new(), norm2: sample.norm2() };
        p.full = p.pack(start);
        p.free = (0..p.full.len()).collect();
        p
    }

    fn n(&self) -> usize {
        self.sample.layout.n
    }

    fn has_eta(&self) -> bool {
        !self.opts.causal
    }

    fn pack(&self, start: &ModelParams) -> Vec<f64> {
        let mut x = Vec::new();
        if self.variant == Variant::Exact {
            x.extend(&start.alpha);
        }
        x.extend(&start.nu);
        x.extend(&start.hurst);
        x.extend(self.pairs.iter().map(|&(i, j)| start.rho[(i, j)]));
        if self.has_eta() {
            x.extend(self.pairs.iter().map(|&(i, j)| start.eta[(i, j)]));
        }
        if self.variant == Variant::Asymptotic {
            let l = self.sample.layout.lags.len();
            x.extend((0..self.n()).map(|i| self.sample.values[i * l]));
            x.extend((0..self.pairs.len()).map(|p| self.sample.values[self.n() * l + p * (2 * l - 1)]));
        }
        x
    }

    fn slots(&self) -> Vec<(String, (f64, f64))> {
        let n = self.n();
        let mut out = Vec::new();
        let per = |out: &mut Vec<(String, (f64, f64))>, name: &str, b: (f64, f64)| {
            out.extend((1..=n).map(|i| (format!("{name}.{i}"), b)));
        };
        let per_pair = |out: &mut Vec<(String, (f64, f64))>, name: &str, b: (f64, f64)| {
            out.extend(self.pairs.iter().map(|(i, j)| (format!("{name}.{}.{}", i + 1, j + 1), b)));
        };
        if self.variant == Variant::Exact {
            per(&mut out, "alpha", ALPHA_BOUNDS);
        }
        per(&mut out, "nu", NU_BOUNDS);
        per(&mut out, "hurst", HURST_BOUNDS);
        per_pair(&mut out, "rho", RHO_BOUNDS);
        if self.has_eta() {
            per_pair(&mut out, "eta", ETA_BOUNDS);
        }
        if self.variant == Variant::Asymptotic {
            per(&mut out, "V", VARIANCE_BOUNDS);
            per_pair(&mut out, "C", COVARIANCE_BOUNDS);
        }
        out
    }

    fn expand(&self, y: &[f64]) -> Vec<f64> {
        let mut x = self.full.clone();
        for (&slot, &v) in self.free.iter().zip(y) {
            x[slot] = v;
        }
        x
    }

    fn unpack(&self, x: &[f64]) -> (ModelParams, Option<LagZeroLevels>) {
        let n = self.n();
        let np = self.pairs.len();
        let mut at = 0;
        let mut take = |len: usize| {
            let s = &x[at..at + len];
            at += len;
            s.to_vec()
        };
        let alpha = if self.variant == Variant::Exact { take(n) } else { Vec::new() };
        let nu = take(n);
        let hurst = take(n);
        let rho_v = take(np);
        let eta_v = if self.has_eta() { take(np) } else { Vec::new() };
        let mut rho = DMatrix::identity(n, n);
        let mut eta = DMatrix::zeros(n, n);
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            rho[(i, j)] = rho_v[p];
            rho[(j, i)] = rho_v[p];
            let e = if self.has_eta() { eta_v[p] } else { causal_eta(hurst[i], hurst[j], rho_v[p]) };
            eta[(i, j)] = e;
            eta[(j, i)] = -e;
        }
        let (alpha, levels) = match self.variant {
            Variant::Exact => (alpha, None),
            Variant::Asymptotic => {
                let variance = take(n);
                let c = take(np);
                let mut covariance = DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(&variance));
                for (p, &(i, j)) in self.pairs.iter().enumerate() {
                    covariance[(i, j)] = c[p];
                    covariance[(j, i)] = c[p];
                }
                let alpha = (0..n).map(|i| implied_alpha(nu[i], hurst[i], variance[i])).collect();
                (alpha, Some(LagZeroLevels { variance, covariance }))
            }
        };
        let params = ModelParams { alpha, nu, mu: self.sample.means.clone(), hurst, rho, eta };
        (params, levels)
    }

    fn loss(&self, x: &[f64]) -> Result<f64> {
        let (params, levels) = self.unpack(x);
        match levels {
            None => {
                let (model, band) = exact_moments(&params, &self.sample.layout, self.opts.delta, self.opts.accuracy, true)?;
                let r: Vec<f64> = self.sample.values.iter().zip(&model).map(|(a, b)| a - b).collect();
                Ok(self.opts.weight.quadratic_form(&r) + (1.0 + self.norm2) * band)
            }
            Some(lv) => mde_loss_asymptotic(&params, &lv.variance, &lv.covariance, self.sample, self.opts),
        }
    }

    fn residuals(&self, params: &ModelParams, levels: Option<&LagZeroLevels>) -> Vec<f64> {
        let model = match levels {
            None => exact_moments(params, &self.sample.layout, self.opts.delta, self.opts.accuracy, true).map(|m| m.0),
            Some(lv) => asymptotic_moments(params, &lv.variance, &lv.covariance, &self.sample.layout, self.opts.delta),
        };
        match model {
            Ok(m) => self.sample.values.iter().zip(&m).map(|(a, b)| a - b).collect(),
            Err(_) => vec![f64::NAN; self.sample.values.len()],
        }
    }

    fn run(&self, theta_init: ModelParams, init_fallback: bool) -> EstimateResult {
        let slots = self.slots();
        let bounds = Bounds::new(
            self.free.iter().map(|&s| slots[s].1 .0).collect(),
            self.free.iter().map(|&s| slots[s].1 .1).collect(),
        );
        let y0: Vec<f64> = self.free.iter().map(|&s| self.full[s]).collect();
        let objective = |y: &[f64]| self.loss(&self.expand(y)).unwrap_or(f64::INFINITY);
        let out = minimize(objective, &y0, &bounds, &self.opts.optim);
        let x = self.expand(&out.x);
        let (theta_hat, levels) = self.unpack(&x);
        let active_bounds = self
            .free
            .iter()
            .zip(&out.x)
            .filter(|(&s, &v)| v <= slots[s].1 .0 || v >= slots[s].1 .1)
            .map(|(&s, _)| slots[s].0.clone())
            .collect();
        let residuals = self.residuals(&theta_hat, levels.as_ref());
        let coherency = validate_params_with_tol(&theta_hat, DEFAULT_TOL_COHERENCY).unwrap_or_default();
        EstimateResult {
            variant: self.variant,
            causal: self.opts.causal,
            theta_hat,
            levels,
            loss: out.f,
            iterations: out.iterations,
            evaluations: out.evaluations,
            converged: out.converged(),
            stop: out.stop,
            active_bounds,
            theta_init,
            init_fallback,
            sample: self.sample.clone(),
            residuals,
            coherency,
        }
    }
}

fn start_for(panel: &PathPanel, sample: &SampleMoments, delta: f64) -> (ModelParams, bool) {
    match init_2step(panel, delta) {
        Ok(p) => (p, false),
        Err(_) => (init_default(sample), true),
    }
}

/// Fits `sample` starting from `start`; the entry point for pre-computed moments.
pub fn mde_fit(sample: &SampleMoments, start: &ModelParams, variant: Variant, opts: &EstimateOptions) -> Result<EstimateResult> {
    opts.weight.check(sample.values.len())?;
    if start.n() != sample.layout.n {
        return Err(Error::Dimension(format!("start for N = {}, moments for N = {}", start.n(), sample.layout.n)));
    }
    let problem = Problem::new(sample, opts, variant, start);
    Ok(problem.run(start.clone(), false))
}

/// Exact-formula minimum-distance estimate.
pub fn mde_estimate(panel: &PathPanel, opts: &EstimateOptions) -> Result<EstimateResult> {
    estimate_variant(panel, opts, Variant::Exact)
}

/// Small-α estimate with free lag-zero levels `V`, `C`; `α` is reported as implied by `V`.
pub fn mde_estimate_asymptotic(panel: &PathPanel, opts: &EstimateOptions) -> Result<EstimateResult> {
    estimate_variant(panel, opts, Variant::Asymptotic)
}

fn estimate_variant(panel: &PathPanel, opts: &EstimateOptions, variant: Variant) -> Result<EstimateResult> {
    let sample = SampleMoments::from_panel(panel, &opts.lags)?;
    opts.weight.check(sample.values.len())?;
    let (start, fallback) = start_for(panel, &sample, opts.delta);
    let problem = Problem::new(&sample, opts, variant, &start);
    Ok(problem.run(start, fallback))
}

/// Non-joint convenience mode for large panels: univariate exact fits for every
/// series, then `(ρ_ij, η_ij)` per pair with the marginals held fixed. Not the
/// joint estimator; the reported loss is the joint loss at the assembled estimate.
pub fn mde_estimate_pairwise(panel: &PathPanel, opts: &EstimateOptions) -> Result<EstimateResult> {
    let n = panel.n_series();
    let mut marginal_opts = opts.clone();
    marginal_opts.weight = Weight::Identity;
    let marginals = (0..n)
        .into_par_iter()
        .map(|i| mde_estimate(&panel.select(&[i])?, &marginal_opts))
        .collect::<Result<Vec<_>>>()?;
    let index = pairs(n);
    let pair_fits = index
        .par_iter()
        .map(|&(i, j)| {
            let sub = panel.select(&[i, j])?;
            let sample = SampleMoments::from_panel(&sub, &opts.lags)?;
            let mut start = init_2step(&sub, opts.delta).unwrap_or_else(|_| init_default(&sample));
            for (slot, m) in [(0, &marginals[i]), (1, &marginals[j])] {
                start.alpha[slot] = m.theta_hat.alpha[0];
                start.nu[slot] = m.theta_hat.nu[0];
                start.hurst[slot] = m.theta_hat.hurst[0];
            }
            let mut problem = Problem::new(&sample, &marginal_opts, Variant::Exact, &start);
            problem.free = (6..problem.full.len()).collect();
            Ok(problem.run(start, false))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut theta = ModelParams {
        alpha: marginals.iter().map(|m| m.theta_hat.alpha[0]).collect(),
        nu: marginals.iter().map(|m| m.theta_hat.nu[0]).collect(),
        mu: sample_means(panel)?,
        hurst: marginals.iter().map(|m| m.theta_hat.hurst[0]).collect(),
        rho: DMatrix::identity(n, n),
        eta: DMatrix::zeros(n, n),
    };
    let mut init = theta.clone();
    for (&(i, j), fit) in index.iter().zip(&pair_fits) {
        for (dst, src) in [(&mut theta, &fit.theta_hat), (&mut init, &fit.theta_init)] {
            dst.rho[(i, j)] = src.rho[(0, 1)];
            dst.rho[(j, i)] = src.rho[(0, 1)];
            dst.eta[(i, j)] = src.eta[(0, 1)];
            dst.eta[(j, i)] = -src.eta[(0, 1)];
        }
    }
    let all = marginals.iter().chain(&pair_fits);
    let (iterations, evaluations, converged) =
        all.fold((0, 0, true), |(it, ev, ok), r| (it + r.iterations, ev + r.evaluations, ok && r.converged));
    let sample = SampleMoments::from_panel(panel, &opts.lags)?;
    let problem = Problem::new(&sample, opts, Variant::Exact, &theta);
    let loss = problem.loss(&problem.full)?;
    let residuals = problem.residuals(&theta, None);
    let mut active_bounds = Vec::new();
    for (r, names) in marginals.iter().zip(0..) {
        active_bounds.extend(r.active_bounds.iter().map(|b| b.replace(".1", &format!(".{}", names + 1))));
    }
    for (r, &(i, j)) in pair_fits.iter().zip(&index) {
        active_bounds.extend(r.active_bounds.iter().map(|b| b.replace(".1.2", &format!(".{}.{}", i + 1, j + 1))));
    }
    let coherency = validate_params_with_tol(&theta, DEFAULT_TOL_COHERENCY).unwrap_or_default();
    Ok(EstimateResult {
        variant: Variant::Exact,
        causal: opts.causal,
        theta_hat: theta,
        levels: None,
        loss,
        iterations,
        evaluations,
        converged,
        stop: if converged { StopReason::RelativeReduction } else { StopReason::MaxIterations },
        active_bounds,
        theta_init: init,
        init_fallback: false,
        sample,
        residuals,
        coherency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel_a() -> ModelParams {
        ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0)
    }

    #[test]
    fn moment_counts() {
        assert_eq!(moment_count(2, 8), 31);
        assert_eq!(moment_count(22, 8), 3641);
        assert_eq!(moment_count(1, 1), 1);
        for n in 1..6 {
            for l in 1..10 {
                let lags = LagSet::new((0..l as u32).collect()).unwrap();
                assert_eq!(MomentLayout::new(n, &lags).len(), moment_count(n, l));
            }
        }
    }

    #[test]
    fn layout_order() {
        let lags = LagSet::new(vec![0, 1]).unwrap();
        let l = MomentLayout::new(2, &lags);
        let got: Vec<(usize, usize, u32)> = l.entries.iter().map(|e| (e.i, e.j, e.lag)).collect();
        assert_eq!(got, vec![(0, 0, 0), (0, 0, 1), (1, 1, 0), (1, 1, 1), (0, 1, 0), (0, 1, 1), (1, 0, 1)]);
    }

    #[test]
    fn lag_set_validation() {
        assert!(LagSet::new(vec![1, 2]).is_err());
        assert!(LagSet::new(vec![0, 2, 2]).is_err());
        assert_eq!("0, 1,5".parse::<LagSet>().unwrap().as_slice(), &[0, 1, 5]);
    }

    #[test]
    fn hand_computed_variance() {
        let mut values = vec![1.0, 2.0, 3.0];
        values.extend(std::iter::repeat(2.0).take(30));
        let panel = PathPanel::new(vec!["x".into()], (0..33).map(|t| t as f64).collect(), vec![values]).unwrap();
        assert!((sample_ccf(&panel, 0, 0, 0).unwrap() - 2.0 / 33.0).abs() < 1e-15);
    }

    #[test]
    fn constant_series_has_zero_covariance() {
        let panel = PathPanel::new(vec!["x".into()], (0..40).map(|t| t as f64).collect(), vec![vec![4.5; 40]]).unwrap();
        for k in [0, 1, 5] {
            assert_eq!(sample_ccf(&panel, 0, 0, k).unwrap(), 0.0);
        }
    }

    #[test]
    fn short_overlap_is_a_data_error() {
        let panel = PathPanel::new(vec!["x".into()], (0..20).map(|t| t as f64).collect(), vec![vec![1.0; 20]]).unwrap();
        assert_eq!(sample_ccf(&panel, 0, 0, 0).unwrap_err().kind(), "data");
    }

    #[test]
    fn missing_values_use_pairwise_complete_products() {
        let n = 60;
        let x: Vec<f64> = (0..n).map(|t| (t as f64 * 0.7).sin()).collect();
        let y: Vec<f64> = (0..n).map(|t| (t as f64 * 0.3).cos()).collect();
        let mut mask = vec![false; n];
        mask[10] = true;
        let panel = PathPanel::with_mask(
            vec!["x".into(), "y".into()],
            (0..n).map(|t| t as f64).collect(),
            vec![x.clone(), y.clone()],
            vec![vec![false; n], mask],
        )
        .unwrap();
        let mx = x.iter().sum::<f64>() / n as f64;
        let my = (y.iter().sum::<f64>() - y[10]) / (n - 1) as f64;
        let mut s = 0.0;
        let mut c = 0;
        for l in 0..n - 2 {
            if l != 10 {
                s += (x[l + 2] - mx) * (y[l] - my);
                c += 1;
            }
        }
        assert!((sample_ccf(&panel, 0, 1, 2).unwrap() - s / c as f64).abs() < 1e-15);
    }

    #[test]
    fn loss_is_quadratic() {
        let p = panel_a();
        let opts = EstimateOptions { accuracy: Accuracy::Fast, ..Default::default() };
        let base = SampleMoments::from_model(&p, &opts.lags, opts.delta, opts.accuracy).unwrap();
        assert_eq!(mde_loss(&p, &base, &opts).unwrap(), 0.0);
        let mut shifted = base.clone();
        for (k, v) in shifted.values.iter_mut().enumerate() {
            *v += 1e-3 * (k as f64 + 1.0);
        }
        let mut doubled = base.clone();
        for (k, v) in doubled.values.iter_mut().enumerate() {
            *v += 2e-3 * (k as f64 + 1.0);
        }
        let l1 = mde_loss(&p, &shifted, &opts).unwrap();
        let l2 = mde_loss(&p, &doubled, &opts).unwrap();
        assert!((l2 / l1 - 4.0).abs() < 1e-9);
        let expected: f64 = (0..31).map(|k| (1e-3 * (k as f64 + 1.0)).powi(2)).sum();
        assert!((l1 - expected).abs() < 1e-12);
    }

    #[test]
    fn barrier_is_finite_on_the_hyperplane() {
        let p = ModelParams::bivariate([1.0, 2.0], [0.5, 0.6], [0.4, 0.6], 0.5, 0.1);
        let near = ModelParams::bivariate([1.0, 2.0], [0.5, 0.6], [0.4, 0.6 + 2e-3], 0.5, 0.1);
        let opts = EstimateOptions { accuracy: Accuracy::Fast, ..Default::default() };
        let sample = SampleMoments::from_model(&near, &opts.lags, opts.delta, opts.accuracy).unwrap();
        let on = mde_loss(&p, &sample, &opts).unwrap();
        assert!(on.is_finite() && on > 0.0);
        let edge = ModelParams::bivariate([1.0, 2.0], [0.5, 0.6], [0.4, 0.6 + BARRIER_WIDTH * (1.0 - 1e-9)], 0.5, 0.1);
        let outside = ModelParams::bivariate([1.0, 2.0], [0.5, 0.6], [0.4, 0.6 + BARRIER_WIDTH * (1.0 + 1e-9)], 0.5, 0.1);
        let a = mde_loss(&edge, &sample, &opts).unwrap();
        let b = mde_loss(&outside, &sample, &opts).unwrap();
        assert!((a - b).abs() < 1e-9, "{a} vs {b}");
    }

    #[test]
    fn exact_fit_is_a_fixed_point() {
        let truth = panel_a();
        let opts = EstimateOptions { accuracy: Accuracy::Fast, ..Default::default() };
        let sample = SampleMoments::from_model(&truth, &opts.lags, opts.delta, opts.accuracy).unwrap();
        let fit = mde_fit(&sample, &truth, Variant::Exact, &opts).unwrap();
        assert!(fit.loss <= 1e-20, "loss {}", fit.loss);
        assert!((fit.theta_hat.hurst[0] - 0.19).abs() < 1e-6);
        assert_eq!(fit.residuals.len(), 31);
    }

    #[test]
    fn asymptotic_moments_match_the_small_alpha_formula() {
        let p = ModelParams::bivariate([0.05, 0.05], [0.78, 0.79], [0.19, 0.21], 0.94, 0.1);
        let lags = LagSet::default();
        let layout = MomentLayout::new(2, &lags);
        let v = vec![0.3, 0.4];
        let c = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.2, 0.4]);
        let m = asymptotic_moments(&p, &v, &c, &layout, 1.0 / 252.0).unwrap();
        for (e, val) in layout.entries.iter().zip(&m) {
            let c0 = if e.i == e.j { v[e.i] } else { 0.2 };
            let expect = crate::covariance::ccf_asymptotic(e.i, e.j, e.lag as f64 / 252.0, c0, &p).unwrap();
            assert!((val - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn implied_alpha_inverts_the_variance() {
        let p = ModelParams::univariate(1.3, 0.8, 0.2);
        let v = crate::covariance::ccf_zero(0, 0, &p).unwrap();
        assert!((implied_alpha(0.8, 0.2, v) - 1.3).abs() < 1e-12);
    }

    #[test]
    fn options_round_trip() {
        let mut o = EstimateOptions::default();
        o.causal = true;
        o.accuracy = Accuracy::Fast;
        o.lags = LagSet::new(vec![0, 1, 7]).unwrap();
        assert_eq!(EstimateOptions::from_kv(&o.to_kv()).unwrap(), o);
    }
}
