//! Exact mfGn sampling by circulant embedding and Euler–Maruyama integration
//! of the mfOU SDE on a fine mesh.
//!
//! The embedding stores one Hermitian `N × N` square root per Fourier frequency
//! `f = 0..=m/2` (the other half is the complex conjugate). A draw with complex
//! standard normal weights yields two independent real paths: the real part and
//! the imaginary part of the inverse transform. [`MfouSimulator::simulate_pair`]
//! exposes both, [`simulate_mfou`] returns the real one.

use std::sync::{Arc, Mutex};

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::{Fft, FftPlanner};

use crate::covariance::stationary_covariance;
use crate::error::{Error, Result};
use crate::kvdoc::KvDoc;
use crate::model::{require_valid, MfgnKernel, ModelParams, DEFAULT_TOL_COHERENCY};
use crate::panel::PathPanel;

/// Handling of negative eigenvalues in the embedding spectra.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PsdFix {
    #[default]
    Reject,
    Clip,
}

impl std::str::FromStr for PsdFix {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject" => Ok(PsdFix::Reject),
            "clip" => Ok(PsdFix::Clip),
            _ => Err(Error::Config(format!("unknown psd_fix `{s}` (expected reject or clip)"))),
        }
    }
}

impl std::fmt::Display for PsdFix {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            PsdFix::Reject => "reject",
            PsdFix::Clip => "clip",
        })
    }
}

/// Eigenvalues below `-PSD_TOL · max_f tr S_f` count as genuinely negative.
pub const PSD_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    /// Fine Euler step δ.
    pub delta_fine: f64,
    /// Observation step Δ, an integer multiple of δ.
    pub delta_obs: f64,
    /// Observed horizon T.
    pub horizon: f64,
    /// Simulated horizon T* ≥ T; the first T* − T is discarded.
    pub warmup_horizon: f64,
    pub seed: u64,
    pub psd_fix: PsdFix,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            delta_fine: 1.0 / (252.0 * 1024.0),
            delta_obs: 1.0 / 252.0,
            horizon: 20.0,
            warmup_horizon: 28.0,
            seed: 0,
            psd_fix: PsdFix::Reject,
        }
    }
}

/// Integer step counts implied by a [`SimConfig`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SimLayout {
    /// Fine steps per observation step.
    pub stride: usize,
    /// Fine steps discarded before the first observation.
    pub burn_steps: usize,
    /// Fine steps simulated in total.
    pub total_steps: usize,
    /// Observations returned (`T/Δ + 1`).
    pub n_obs: usize,
}

fn integer_ratio(what: &str, num: f64, den: f64) -> Result<usize> {
    let r = num / den;
    let n = r.round();
    if !(r.is_finite() && (r - n).abs() <= 1e-6 * n.max(1.0)) {
        return Err(Error::Config(format!("{what} must be an integer, got {r}")));
    }
    Ok(n as usize)
}

impl SimConfig {
    pub fn layout(&self) -> Result<SimLayout> {
        if !(self.delta_fine > 0.0 && self.delta_obs >= self.delta_fine) {
            return Err(Error::Config(format!(
                "need 0 < delta_fine <= delta_obs, got {} and {}",
                self.delta_fine, self.delta_obs
            )));
        }
        if !(self.horizon > 0.0 && self.warmup_horizon >= self.horizon) {
            return Err(Error::Config(format!(
                "need 0 < horizon <= warmup_horizon, got {} and {}",
                self.horizon, self.warmup_horizon
            )));
        }
        let stride = integer_ratio("delta_obs / delta_fine", self.delta_obs, self.delta_fine)?;
        let steps_obs = integer_ratio("horizon / delta_obs", self.horizon, self.delta_obs)?;
        let burn_steps = integer_ratio("(warmup_horizon - horizon) / delta_fine", self.warmup_horizon - self.horizon, self.delta_fine)?;
        if stride == 0 || steps_obs == 0 {
            return Err(Error::Config("step counts must be positive".into()));
        }
        Ok(SimLayout {
            stride,
            burn_steps,
            total_steps: burn_steps + stride * steps_obs,
            n_obs: steps_obs + 1,
        })
    }

    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("delta_fine", self.delta_fine);
        doc.set("delta_obs", self.delta_obs);
        doc.set("horizon", self.horizon);
        doc.set("warmup_horizon", self.warmup_horizon);
        doc.set("seed", self.seed);
        doc.set("psd_fix", self.psd_fix);
        doc
    }

    /// Missing keys keep their defaults.
    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let mut cfg = SimConfig::default();
        if let Some(v) = doc.get_f64("delta_fine")? {
            cfg.delta_fine = v;
        }
        if let Some(v) = doc.get_f64("delta_obs")? {
            cfg.delta_obs = v;
        }
        if let Some(v) = doc.get_f64("horizon")? {
            cfg.horizon = v;
        }
        if let Some(v) = doc.get_f64("warmup_horizon")? {
            cfg.warmup_horizon = v;
        }
        if let Some(v) = doc.get_u64("seed")? {
            cfg.seed = v;
        }
        if let Some(v) = doc.get("psd_fix") {
            cfg.psd_fix = v.parse()?;
        }
        cfg.layout()?;
        Ok(cfg)
    }
}

/// Spectral diagnostics of a circulant embedding.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmbeddingInfo {
    pub size: usize,
    pub min_eigenvalue: f64,
    /// Sum of clipped negative eigenvalues over all frequencies.
    pub clipped_mass: f64,
    /// `clipped_mass` relative to the total spectral trace.
    pub clipped_fraction: f64,
}

/// Circulant-embedding sampler for `n_steps` consecutive mfGn increments.
pub struct MfgnSampler {
    dim: usize,
    m: usize,
    n_steps: usize,
    // packed Hermitian square roots, dim² reals per frequency f = 0..=m/2
    roots: Vec<f64>,
    info: EmbeddingInfo,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for MfgnSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MfgnSampler")
            .field("dim", &self.dim)
            .field("n_steps", &self.n_steps)
            .field("info", &self.info)
            .finish()
    }
}

impl MfgnSampler {
    pub fn new(params: &ModelParams, n_steps: usize, delta: f64, psd_fix: PsdFix) -> Result<Self> {
        params.check_dimensions()?;
        params.check_hurst_sums()?;
        if n_steps == 0 {
            return Err(Error::Config("n_steps must be positive".into()));
        }
        let mut m = (2 * (n_steps - 1)).max(2).next_power_of_two();
        let mut planner = FftPlanner::new();
        let mut last = None;
        for attempt in 0..2 {
            let forward = planner.plan_fft_forward(m);
            let mut roots = spectrum(params, m, delta, forward.as_ref())?;
            let (info, ok) = take_roots(&mut roots, params.n(), m, psd_fix, attempt == 1)?;
            if ok {
                let fft = planner.plan_fft_inverse(m);
                return Ok(MfgnSampler { dim: params.n(), m, n_steps, roots, info, fft });
            }
            last = Some(info);
            m *= 2;
        }
        let info = last.expect("loop ran");
        Err(Error::NotPsd { min_eigenvalue: info.min_eigenvalue, tolerance: PSD_TOL })
    }

    pub fn info(&self) -> EmbeddingInfo {
        self.info
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Two independent `N × n_steps` increment draws.
    pub fn sample_pair<R: rand::Rng>(&self, rng: &mut R) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut bufs = Vec::new();
        self.transform_into(rng, &mut bufs);
        let scale = self.scale();
        let re = bufs.iter().map(|b| b[..self.n_steps].iter().map(|c| c.re * scale).collect()).collect();
        let im = bufs.iter().map(|b| b[..self.n_steps].iter().map(|c| c.im * scale).collect()).collect();
        (re, im)
    }

    fn scale(&self) -> f64 {
        1.0 / (self.m as f64).sqrt()
    }

    // Unscaled inverse transforms, one buffer per component; reuses `bufs` when sized.
    fn transform_into<R: rand::Rng>(&self, rng: &mut R, bufs: &mut Vec<Vec<Complex64>>) {
        let (n, m) = (self.dim, self.m);
        let half = m / 2;
        if bufs.len() != n || bufs.iter().any(|b| b.len() != m) {
            *bufs = vec![vec![Complex64::new(0.0, 0.0); m]; n];
        }
        let mut z = vec![Complex64::new(0.0, 0.0); n];
        let draw = |z: &mut [Complex64], rng: &mut R| {
            for v in z.iter_mut() {
                *v = Complex64::new(StandardNormal.sample(rng), StandardNormal.sample(rng));
            }
        };
        for f in 0..=half {
            let root = &self.roots[f * n * n..(f + 1) * n * n];
            draw(&mut z, rng);
            for i in 0..n {
                bufs[i][f] = hermitian_row_times(root, n, i, &z, false);
            }
            if f != 0 && f != half {
                draw(&mut z, rng);
                for i in 0..n {
                    bufs[i][m - f] = hermitian_row_times(root, n, i, &z, true);
                }
            }
        }
        for buf in bufs.iter_mut() {
            self.fft.process(buf);
        }
    }
}

// Circular covariance sequence per entry i <= j, transformed and packed for f = 0..=m/2.
fn spectrum(params: &ModelParams, m: usize, delta: f64, fft: &dyn Fft<f64>) -> Result<Vec<f64>> {
    let n = params.n();
    let half = m / 2;
    let mut packed = vec![0.0; (half + 1) * n * n];
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for i in 0..n {
        for j in i..n {
            let kernel = MfgnKernel::new(params, i, j, delta)?;
            buf[0] = Complex64::new(kernel.at(0), 0.0);
            for k in 1..half {
                buf[k] = Complex64::new(kernel.at(k as i64), 0.0);
                buf[m - k] = Complex64::new(kernel.at(-(k as i64)), 0.0);
            }
            let h = half as i64;
            buf[half] = Complex64::new(0.5 * (kernel.at(h) + kernel.at(-h)), 0.0);
            fft.process(&mut buf);
            let slot = packed_index(n, i, j);
            for f in 0..=half {
                let base = f * n * n;
                if i == j {
                    packed[base + slot] = buf[f].re;
                } else {
                    packed[base + slot] = buf[f].re;
                    packed[base + slot + 1] = buf[f].im;
                }
            }
        }
    }
    Ok(packed)
}

// Packed layout: diagonal entries 0..n, then (re, im) of each i < j in row order.
fn packed_index(n: usize, i: usize, j: usize) -> usize {
    if i == j {
        return i;
    }
    let (a, b) = if i < j { (i, j) } else { (j, i) };
    let before = a * (2 * n - a - 1) / 2;
    n + 2 * (before + (b - a - 1))
}

fn packed_get(p: &[f64], n: usize, i: usize, j: usize) -> Complex64 {
    if i == j {
        return Complex64::new(p[i], 0.0);
    }
    let s = packed_index(n, i, j);
    let c = Complex64::new(p[s], p[s + 1]);
    if i < j {
        c
    } else {
        c.conj()
    }
}

fn packed_set(p: &mut [f64], n: usize, i: usize, j: usize, v: Complex64) {
    if i == j {
        p[i] = v.re;
    } else if i < j {
        let s = packed_index(n, i, j);
        p[s] = v.re;
        p[s + 1] = v.im;
    }
}

fn hermitian_row_times(p: &[f64], n: usize, i: usize, z: &[Complex64], conjugate: bool) -> Complex64 {
    let mut acc = Complex64::new(0.0, 0.0);
    for (j, zj) in z.iter().enumerate() {
        let a = packed_get(p, n, i, j);
        acc += if conjugate { a.conj() } else { a } * zj;
    }
    acc
}

// Replaces each spectral block by its Hermitian square root. Returns false when
// a genuinely negative eigenvalue appears and it may not be clipped yet.
fn take_roots(packed: &mut [f64], n: usize, m: usize, psd_fix: PsdFix, last_attempt: bool) -> Result<(EmbeddingInfo, bool)> {
    let half = m / 2;
    let stride = n * n;
    let mut max_trace: f64 = 0.0;
    let mut total = 0.0;
    for f in 0..=half {
        let tr: f64 = packed[f * stride..f * stride + n].iter().sum();
        max_trace = max_trace.max(tr);
        total += if f == 0 || f == half { tr } else { 2.0 * tr };
    }
    let tol = PSD_TOL * max_trace;
    let mut min_eig = f64::INFINITY;
    let mut clipped = 0.0;
    let mut genuine = false;
    for f in 0..=half {
        let block = &mut packed[f * stride..(f + 1) * stride];
        let lowest = root_in_place(block, n);
        min_eig = min_eig.min(lowest);
        if lowest < 0.0 {
            let weight = if f == 0 || f == half { 1.0 } else { 2.0 };
            clipped += -lowest * weight;
            if lowest < -tol {
                genuine = true;
            }
        }
    }
    let info = EmbeddingInfo {
        size: m,
        min_eigenvalue: min_eig,
        clipped_mass: clipped,
        clipped_fraction: if total > 0.0 { clipped / total } else { 0.0 },
    };
    let ok = !genuine || (psd_fix == PsdFix::Clip && last_attempt);
    Ok((info, ok))
}

// Square root with negative eigenvalues floored at zero; returns the smallest eigenvalue.
fn root_in_place(block: &mut [f64], n: usize) -> f64 {
    match n {
        1 => {
            let s = block[0];
            block[0] = s.max(0.0).sqrt();
            s
        }
        2 => {
            let (a, d) = (block[0], block[1]);
            let b = Complex64::new(block[2], block[3]);
            let mean = 0.5 * (a + d);
            let rad = (0.25 * (a - d) * (a - d) + b.norm_sqr()).sqrt();
            let (lo, hi) = (mean - rad, mean + rad);
            if lo >= 0.0 {
                let s = (a * d - b.norm_sqr()).max(0.0).sqrt();
                let t = (a + d + 2.0 * s).sqrt();
                if t > 0.0 {
                    block[0] = (a + s) / t;
                    block[1] = (d + s) / t;
                    block[2] = b.re / t;
                    block[3] = b.im / t;
                } else {
                    block.fill(0.0);
                }
            } else if hi > 0.0 {
                // √λ₊ times the projector onto the positive eigenvector
                let c = hi.sqrt() / (hi - lo);
                block[0] = c * (a - lo);
                block[1] = c * (d - lo);
                block[2] = c * b.re;
                block[3] = c * b.im;
            } else {
                block.fill(0.0);
            }
            lo
        }
        _ => {
            let mat = DMatrix::from_fn(n, n, |i, j| packed_get(block, n, i, j));
            let eig = SymmetricEigen::new(mat);
            let lowest = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
            let roots = eig.eigenvalues.map(|l| Complex64::new(l.max(0.0).sqrt(), 0.0));
            let u = &eig.eigenvectors;
            let r = u * DMatrix::from_diagonal(&roots) * u.adjoint();
            for i in 0..n {
                for j in i..n {
                    packed_set(block, n, i, j, r[(i, j)]);
                }
            }
            lowest
        }
    }
}

/// One draw of `n_steps` mfGn increments with step `delta` (real part of a sampler round).
pub fn sample_mfgn(params: &ModelParams, n_steps: usize, delta: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    require_valid(params, DEFAULT_TOL_COHERENCY)?;
    let sampler = MfgnSampler::new(params, n_steps, delta, PsdFix::Reject)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sampler.sample_pair(&mut rng).0)
}

/// Euler–Maruyama recursion driven by `noise[i][j - 1] = ΔW^i_j`.
///
/// Returns `Y` at fine indices `burn, burn + stride, ...` up to the end of the
/// noise. `alpha` may be zero, in which case the path is `Y_0 + ν W`.
#[allow(clippy::too_many_arguments)]
pub fn euler_observations(
    noise: &[Vec<f64>],
    y0: &[f64],
    alpha: &[f64],
    nu: &[f64],
    mu: &[f64],
    delta: f64,
    burn: usize,
    stride: usize,
) -> Vec<Vec<f64>> {
    (0..y0.len())
        .map(|i| euler_series(noise[i].iter().copied(), y0[i], alpha[i] * delta, nu[i], mu[i], burn, stride))
        .collect()
}

// `a` is α·δ; `s` multiplies each raw increment.
fn euler_series(incs: impl Iterator<Item = f64>, y0: f64, a: f64, s: f64, target: f64, burn: usize, stride: usize) -> Vec<f64> {
    let mut out = Vec::new();
    let mut y = y0;
    let mut countdown = burn;
    if countdown == 0 {
        out.push(y);
        countdown = stride;
    }
    for w in incs {
        y += a * (target - y) + s * w;
        countdown -= 1;
        if countdown == 0 {
            out.push(y);
            countdown = stride;
        }
    }
    out
}

/// Reusable simulator: the embedding is built once and each seed yields two paths.
#[derive(Debug)]
pub struct MfouSimulator {
    params: ModelParams,
    cfg: SimConfig,
    layout: SimLayout,
    sampler: MfgnSampler,
    y0_root: DMatrix<f64>,
    workspace: Mutex<Vec<Vec<Complex64>>>,
}

impl MfouSimulator {
    pub fn new(params: &ModelParams, cfg: &SimConfig) -> Result<Self> {
        require_valid(params, DEFAULT_TOL_COHERENCY)?;
        let layout = cfg.layout()?;
        let cov = stationary_covariance(params)?;
        let y0_root = psd_root(&cov)?;
        let sampler = MfgnSampler::new(params, layout.total_steps, cfg.delta_fine, cfg.psd_fix)?;
        Ok(MfouSimulator {
            params: params.clone(),
            cfg: cfg.clone(),
            layout,
            sampler,
            y0_root,
            workspace: Mutex::new(Vec::new()),
        })
    }

    pub fn layout(&self) -> SimLayout {
        self.layout
    }

    pub fn embedding(&self) -> EmbeddingInfo {
        self.sampler.info()
    }

    /// Two independent panels from one seed (real and imaginary parts).
    pub fn simulate_pair(&self, seed: u64) -> (PathPanel, PathPanel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = self.params.n();
        let mut starts = [vec![0.0; n], vec![0.0; n]];
        for y0 in starts.iter_mut() {
            let z: Vec<f64> = (0..n).map(|_| StandardNormal.sample(&mut rng)).collect();
            for i in 0..n {
                y0[i] = self.params.mu[i] + (0..n).map(|j| self.y0_root[(i, j)] * z[j]).sum::<f64>();
            }
        }
        let mut bufs = self.workspace.lock().unwrap_or_else(|e| e.into_inner());
        self.sampler.transform_into(&mut rng, &mut bufs);
        let steps = self.layout.total_steps;
        let scale = self.sampler.scale();
        let p = &self.params;
        let path = |part: usize| -> Vec<Vec<f64>> {
            (0..n)
                .map(|i| {
                    let incs = bufs[i][..steps].iter().map(|c| if part == 0 { c.re } else { c.im });
                    let a = p.alpha[i] * self.cfg.delta_fine;
                    euler_series(incs, starts[part][i], a, p.nu[i] * scale, p.mu[i], self.layout.burn_steps, self.layout.stride)
                })
                .collect()
        };
        (self.panel(path(0), seed, 0), self.panel(path(1), seed, 1))
    }

    pub fn simulate(&self, seed: u64) -> PathPanel {
        self.simulate_pair(seed).0
    }

    fn panel(&self, values: Vec<Vec<f64>>, seed: u64, part: usize) -> PathPanel {
        let p = &self.params;
        let times = (0..self.layout.n_obs).map(|q| q as f64 * self.cfg.delta_obs).collect();
        let names = (1..=p.n()).map(|i| format!("y{i}")).collect();
        let mut panel = PathPanel::new(names, times, values).expect("simulated panel is consistent");
        let mut meta = self.cfg.to_kv();
        meta.set("seed", seed);
        meta.set("part", part);
        meta.set("params", p.fingerprint());
        let info = self.sampler.info();
        meta.set("embedding_size", info.size);
        meta.set("clipped_mass", info.clipped_mass);
        meta.set("clipped_fraction", info.clipped_fraction);
        panel.meta = meta;
        panel
    }
}

/// `cfg.seed` drives the draw.
pub fn simulate_mfou(params: &ModelParams, cfg: &SimConfig) -> Result<PathPanel> {
    Ok(MfouSimulator::new(params, cfg)?.simulate(cfg.seed))
}

fn psd_root(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(cov.clone());
    let lowest = eig.eigenvalues.min();
    let tol = 1e-10 * cov.trace().abs();
    if lowest < -tol {
        return Err(Error::NotPsd { min_eigenvalue: lowest, tolerance: tol });
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::mfgn_cov;

    fn panel_a() -> ModelParams {
        ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0)
    }

    #[test]
    fn default_layout_matches_daily_mesh() {
        let l = SimConfig::default().layout().unwrap();
        assert_eq!(l.stride, 1024);
        assert_eq!(l.n_obs, 5041);
        assert_eq!(l.burn_steps, 8 * 252 * 1024);
        assert_eq!(l.total_steps, 28 * 252 * 1024);
    }

    #[test]
    fn non_integer_layout_is_a_config_error() {
        let cfg = SimConfig { delta_obs: 1.5 / 252.0, delta_fine: 1.0 / 252.0, ..SimConfig::default() };
        assert_eq!(cfg.layout().unwrap_err().kind(), "config");
    }

    #[test]
    fn config_round_trips_through_kv() {
        let cfg = SimConfig { seed: 99, psd_fix: PsdFix::Clip, horizon: 2.0, warmup_horizon: 3.0, ..SimConfig::default() };
        assert_eq!(SimConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
    }

    #[test]
    fn packed_layout_is_dense() {
        let n = 4;
        let mut seen = vec![false; n * n];
        for i in 0..n {
            seen[packed_index(n, i, i)] = true;
            for j in (i + 1)..n {
                let s = packed_index(n, i, j);
                assert!(!seen[s] && !seen[s + 1]);
                seen[s] = true;
                seen[s + 1] = true;
            }
        }
        assert!(seen.iter().all(|&x| x));
    }

    #[test]
    fn two_by_two_root_squares_back() {
        let s = [2.0, 1.0, 0.3, -0.4];
        let mut r = s;
        let lo = root_in_place(&mut r, 2);
        assert!(lo > 0.0);
        let a = DMatrix::from_fn(2, 2, |i, j| packed_get(&r, 2, i, j));
        let sq = &a * &a;
        for i in 0..2 {
            for j in 0..2 {
                assert!((sq[(i, j)] - packed_get(&s, 2, i, j)).norm() < 1e-14);
            }
        }
        // general path agrees with the closed form
        let mut g = s;
        let mat = DMatrix::from_fn(2, 2, |i, j| packed_get(&s, 2, i, j));
        let eig = SymmetricEigen::new(mat);
        let rt = &eig.eigenvectors
            * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| Complex64::new(l.sqrt(), 0.0)))
            * eig.eigenvectors.adjoint();
        for i in 0..2 {
            for j in i..2 {
                packed_set(&mut g, 2, i, j, rt[(i, j)]);
            }
        }
        for (x, y) in g.iter().zip(&r) {
            assert!((x - y).abs() < 1e-13);
        }
    }

    #[test]
    fn white_noise_increments() {
        let p = ModelParams::univariate(1.0, 1.0, 0.5);
        let n = 20_000;
        let delta = 0.01;
        let x = &sample_mfgn(&p, n, delta, 5).unwrap()[0];
        let var = x.iter().map(|v| v * v).sum::<f64>() / n as f64;
        assert!((var / delta - 1.0).abs() < 4.0 * (2.0 / n as f64).sqrt());
        let lag1 = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / (n as f64 * var);
        assert!(lag1.abs() < 3.0 / (n as f64).sqrt(), "lag-1 autocorrelation {lag1}");
    }

    #[test]
    fn deterministic_given_seed() {
        let p = panel_a();
        let a = sample_mfgn(&p, 300, 0.01, 11).unwrap();
        let b = sample_mfgn(&p, 300, 0.01, 11).unwrap();
        let c = sample_mfgn(&p, 300, 0.01, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn noise_covariances_match_kernel() {
        // lag-0..3 sample covariances of short paths against the analytic kernel
        let p = ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.2);
        let sampler = MfgnSampler::new(&p, 64, 1.0, PsdFix::Reject).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut draws = Vec::new();
        for _ in 0..1000 {
            let (a, b) = sampler.sample_pair(&mut rng);
            draws.push(a);
            draws.push(b);
        }
        for (i, j) in [(0, 0), (0, 1), (1, 0)] {
            for h in 0..4usize {
                let acc: Vec<f64> = draws.iter().map(|x| x[i][h + 10] * x[j][10]).collect();
                let n = acc.len() as f64;
                let mean = acc.iter().sum::<f64>() / n;
                let sd = (acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
                let want = mfgn_cov(i, j, h as i64, 1.0, &p).unwrap();
                let se = sd / n.sqrt();
                assert!((mean - want).abs() < 4.0 * se, "({i},{j},{h}): {mean} vs {want} (se {se})");
            }
        }
    }

    #[test]
    fn zero_alpha_collapses_to_fractional_path() {
        let noise = vec![vec![0.5, -0.25, 1.0, 0.125]];
        let obs = euler_observations(&noise, &[2.0], &[0.0], &[3.0], &[7.0], 0.1, 0, 1);
        assert_eq!(obs[0], vec![2.0, 3.5, 2.75, 5.75, 6.125]);
        let sub = euler_observations(&noise, &[2.0], &[0.0], &[3.0], &[7.0], 0.1, 2, 2);
        assert_eq!(sub[0], vec![2.75, 6.125]);
    }

    #[test]
    fn incoherent_parameters_are_rejected() {
        let p = ModelParams::bivariate([1.0, 1.0], [1.0, 1.0], [0.45, 0.45], 1.0, 0.2);
        assert_eq!(sample_mfgn(&p, 100, 0.1, 1).unwrap_err().kind(), "invalid_params");
    }

    #[test]
    fn small_simulation_has_expected_shape_and_metadata() {
        let cfg = SimConfig {
            delta_fine: 1.0 / (252.0 * 4.0),
            horizon: 1.0,
            warmup_horizon: 1.5,
            seed: 17,
            ..SimConfig::default()
        };
        let panel = simulate_mfou(&panel_a(), &cfg).unwrap();
        assert_eq!(panel.n_series(), 2);
        assert_eq!(panel.len(), 253);
        assert_eq!(panel.meta.get("seed"), Some("17"));
        assert!(panel.values.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(panel, simulate_mfou(&panel_a(), &cfg).unwrap());
    }
}
