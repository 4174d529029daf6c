//! Parameter containers, structural validation, the pairwise coherency
//! functional and the multivariate fractional Gaussian noise kernel.
//!
//! Asymmetry convention: for components `i != j` the driving mfBm has
//! `φ_ij(x) = (ρ_ij + η_ij sign(x)) |x|^{H_i + H_j}` where `x` is the time of
//! component `i` minus the time of component `j`. With this sign the stationary
//! covariance of the mfOU process is
//! `Γ(H_ij + 1) ν_i ν_j / (2(α_i + α_j)) [(α_i^{1-H_ij} + α_j^{1-H_ij}) ρ_ij + (α_j^{1-H_ij} - α_i^{1-H_ij}) η_ij]`,
//! and `η_ij > 0` makes `γ_ij(k)` decay faster than `γ_ji(k)` when `H_ij < 1`.

use std::fmt;

use nalgebra::DMatrix;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kvdoc::KvDoc;
use crate::special::{gamma, half_second_difference_pow};

/// Default slack on the coherency functional before a pair is reported.
pub const DEFAULT_TOL_COHERENCY: f64 = 1e-6;

/// Half-width of the excluded band around `H_i + H_j = 1` for `i != j`.
pub const HURST_SUM_EPS: f64 = 1e-10;

/// Full mfOU parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub alpha: Vec<f64>,
    pub nu: Vec<f64>,
    pub mu: Vec<f64>,
    pub hurst: Vec<f64>,
    pub rho: DMatrix<f64>,
    pub eta: DMatrix<f64>,
}

impl ModelParams {
    pub fn new(
        alpha: Vec<f64>,
        nu: Vec<f64>,
        mu: Vec<f64>,
        hurst: Vec<f64>,
        rho: DMatrix<f64>,
        eta: DMatrix<f64>,
    ) -> Result<Self> {
        let p = ModelParams { alpha, nu, mu, hurst, rho, eta };
        p.check_dimensions()?;
        Ok(p)
    }

    /// Single fOU component with zero mean.
    pub fn univariate(alpha: f64, nu: f64, hurst: f64) -> Self {
        ModelParams {
            alpha: vec![alpha],
            nu: vec![nu],
            mu: vec![0.0],
            hurst: vec![hurst],
            rho: DMatrix::identity(1, 1),
            eta: DMatrix::zeros(1, 1),
        }
    }

    /// Two components with zero means.
    pub fn bivariate(alpha: [f64; 2], nu: [f64; 2], hurst: [f64; 2], rho: f64, eta: f64) -> Self {
        ModelParams {
            alpha: alpha.to_vec(),
            nu: nu.to_vec(),
            mu: vec![0.0; 2],
            hurst: hurst.to_vec(),
            rho: DMatrix::from_row_slice(2, 2, &[1.0, rho, rho, 1.0]),
            eta: DMatrix::from_row_slice(2, 2, &[0.0, eta, -eta, 0.0]),
        }
    }

    pub fn n(&self) -> usize {
        self.alpha.len()
    }

    pub fn hurst_sum(&self, i: usize, j: usize) -> f64 {
        self.hurst[i] + self.hurst[j]
    }

    pub fn check_dimensions(&self) -> Result<()> {
        let n = self.alpha.len();
        if n == 0 {
            return Err(Error::Dimension("model needs at least one component".into()));
        }
        for (name, len) in [("nu", self.nu.len()), ("mu", self.mu.len()), ("hurst", self.hurst.len())] {
            if len != n {
                return Err(Error::Dimension(format!("{name} has length {len}, alpha has {n}")));
            }
        }
        for (name, m) in [("rho", &self.rho), ("eta", &self.eta)] {
            if m.nrows() != n || m.ncols() != n {
                return Err(Error::Dimension(format!(
                    "{name} is {}x{}, expected {n}x{n}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        Ok(())
    }

    /// Errors on `H_i + H_j = 1` for any pair `i < j`.
    pub fn check_hurst_sums(&self) -> Result<()> {
        for i in 0..self.n() {
            for j in (i + 1)..self.n() {
                check_pair_hurst_sum(self.hurst[i], self.hurst[j])?;
            }
        }
        Ok(())
    }

    /// Flat key-value form: `n`, `alpha.i`, `nu.i`, `mu.i`, `hurst.i`, `rho.i.j`, `eta.i.j` (1-based, i < j).
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("n", self.n());
        for (key, v) in self.scalar_entries() {
            doc.set(&key, v);
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let n = doc
            .get_u64("n")?
            .ok_or_else(|| Error::Config("parameter document needs `n`".into()))? as usize;
        if n == 0 {
            return Err(Error::Dimension("n must be positive".into()));
        }
        let vector = |name: &str| -> Result<Vec<f64>> {
            (1..=n).map(|i| doc.require_f64(&format!("{name}.{i}"))).collect()
        };
        let alpha = vector("alpha")?;
        let nu = vector("nu")?;
        let hurst = vector("hurst")?;
        let mu = match doc.get("mu.1") {
            Some(_) => vector("mu")?,
            None => vec![0.0; n],
        };
        let mut rho = DMatrix::identity(n, n);
        let mut eta = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in (i + 1)..n {
                let r = doc.get_f64(&format!("rho.{}.{}", i + 1, j + 1))?.unwrap_or(0.0);
                let e = doc.get_f64(&format!("eta.{}.{}", i + 1, j + 1))?.unwrap_or(0.0);
                rho[(i, j)] = r;
                rho[(j, i)] = r;
                eta[(i, j)] = e;
                eta[(j, i)] = -e;
            }
        }
        ModelParams::new(alpha, nu, mu, hurst, rho, eta)
    }

    /// Column names of the single-row CSV layout.
    pub fn csv_header(&self) -> Vec<String> {
        self.scalar_entries().into_iter().map(|(k, _)| k).collect()
    }

    pub fn csv_row(&self) -> Vec<f64> {
        self.scalar_entries().into_iter().map(|(_, v)| v).collect()
    }

    /// Header line plus one value line.
    pub fn to_csv(&self) -> String {
        let header = self.csv_header().join(",");
        let row: Vec<String> = self.csv_row().iter().map(|v| v.to_string()).collect();
        format!("{header}\n{}\n", row.join(","))
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| Error::Data("empty parameter CSV".into()))?;
        let row = lines.next().ok_or_else(|| Error::Data("parameter CSV has no value row".into()))?;
        let keys: Vec<&str> = header.split(',').map(str::trim).collect();
        let values: Vec<&str> = row.split(',').map(str::trim).collect();
        if keys.len() != values.len() {
            return Err(Error::Data(format!("header has {} fields, row has {}", keys.len(), values.len())));
        }
        let n = keys.iter().filter(|k| k.starts_with("alpha.")).count();
        let mut doc = KvDoc::new();
        doc.set("n", n);
        for (k, v) in keys.iter().zip(values) {
            doc.set(k, v);
        }
        Self::from_kv(&doc)
    }

    /// Short stable fingerprint of the key-value form.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(self.to_kv().to_string().as_bytes());
        hex::encode(&digest[..8])
    }

    fn scalar_entries(&self) -> Vec<(String, f64)> {
        let n = self.n();
        let mut out = Vec::with_capacity(4 * n + n * (n - 1));
        for (name, v) in [("alpha", &self.alpha), ("nu", &self.nu), ("mu", &self.mu), ("hurst", &self.hurst)] {
            for (i, x) in v.iter().enumerate() {
                out.push((format!("{name}.{}", i + 1), *x));
            }
        }
        for (name, m) in [("rho", &self.rho), ("eta", &self.eta)] {
            for i in 0..n {
                for j in (i + 1)..n {
                    out.push((format!("{name}.{}.{}", i + 1, j + 1), m[(i, j)]));
                }
            }
        }
        out
    }
}

pub(crate) fn check_pair_hurst_sum(h_i: f64, h_j: f64) -> Result<()> {
    if (h_i + h_j - 1.0).abs() < HURST_SUM_EPS {
        return Err(Error::Unsupported(format!(
            "H_i + H_j = 1 (H_i = {h_i}, H_j = {h_j}) is excluded"
        )));
    }
    Ok(())
}

/// Which structural rule a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Constraint {
    AlphaPositive,
    NuPositive,
    HurstRange,
    RhoSymmetric,
    RhoDiagonal,
    RhoRange,
    EtaAntisymmetric,
    EtaDiagonal,
    HurstSum,
    Coherency,
}

impl fmt::Display for Constraint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Constraint::AlphaPositive => "alpha positive",
            Constraint::NuPositive => "nu positive",
            Constraint::HurstRange => "hurst range",
            Constraint::RhoSymmetric => "rho symmetric",
            Constraint::RhoDiagonal => "rho diagonal",
            Constraint::RhoRange => "rho range",
            Constraint::EtaAntisymmetric => "eta antisymmetric",
            Constraint::EtaDiagonal => "eta diagonal",
            Constraint::HurstSum => "hurst sum",
            Constraint::Coherency => "coherency",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub constraint: Constraint,
    /// Offending component(s); `(i, i)` for per-component rules.
    pub pair: (usize, usize),
    pub value: f64,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} at ({}, {}): {}", self.constraint, self.pair.0 + 1, self.pair.1 + 1, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn has(&self, c: Constraint) -> bool {
        self.violations.iter().any(|v| v.constraint == c)
    }

    /// Violations other than coherency; these make the parameters unusable anywhere.
    pub fn structural(&self) -> impl Iterator<Item = &Violation> {
        self.violations.iter().filter(|v| v.constraint != Constraint::Coherency)
    }
}

pub fn validate_params(params: &ModelParams) -> Result<ValidationReport> {
    validate_params_with_tol(params, DEFAULT_TOL_COHERENCY)
}

/// Reports every structural violation and every pair with coherency above
/// `1 + tol_coherency`. Dimension problems are an `Err`, not a violation.
pub fn validate_params_with_tol(params: &ModelParams, tol_coherency: f64) -> Result<ValidationReport> {
    params.check_dimensions()?;
    let n = params.n();
    let mut out = Vec::new();
    let mut push = |constraint, pair, value| out.push(Violation { constraint, pair, value });
    for i in 0..n {
        if !(params.alpha[i] > 0.0) {
            push(Constraint::AlphaPositive, (i, i), params.alpha[i]);
        }
        if !(params.nu[i] > 0.0) {
            push(Constraint::NuPositive, (i, i), params.nu[i]);
        }
        if !(params.hurst[i] > 0.0 && params.hurst[i] < 1.0) {
            push(Constraint::HurstRange, (i, i), params.hurst[i]);
        }
        if params.rho[(i, i)] != 1.0 {
            push(Constraint::RhoDiagonal, (i, i), params.rho[(i, i)]);
        }
        if params.eta[(i, i)] != 0.0 {
            push(Constraint::EtaDiagonal, (i, i), params.eta[(i, i)]);
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let r = params.rho[(i, j)];
            if r != params.rho[(j, i)] {
                push(Constraint::RhoSymmetric, (i, j), r - params.rho[(j, i)]);
            }
            if !(-1.0..=1.0).contains(&r) {
                push(Constraint::RhoRange, (i, j), r);
            }
            let e = params.eta[(i, j)];
            if e != -params.eta[(j, i)] {
                push(Constraint::EtaAntisymmetric, (i, j), e + params.eta[(j, i)]);
            }
            let (hi, hj) = (params.hurst[i], params.hurst[j]);
            if (hi + hj - 1.0).abs() < HURST_SUM_EPS {
                push(Constraint::HurstSum, (i, j), hi + hj);
            }
            if hi > 0.0 && hi < 1.0 && hj > 0.0 && hj < 1.0 {
                let c = coherency(hi, hj, r, e);
                if !(c <= 1.0 + tol_coherency) {
                    push(Constraint::Coherency, (i, j), c);
                }
            }
        }
    }
    Ok(ValidationReport { violations: out })
}

/// Hard check used where a non-PSD covariance is unusable (simulation).
pub fn require_valid(params: &ModelParams, tol_coherency: f64) -> Result<()> {
    let report = validate_params_with_tol(params, tol_coherency)?;
    if let Some(v) = report.violations.first() {
        let msg = report.violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ");
        return Err(match v.constraint {
            Constraint::HurstSum => Error::Unsupported(msg),
            _ => Error::InvalidParams(msg),
        });
    }
    Ok(())
}

/// Pairwise coherency functional; the pair admits a valid mfBm covariance iff `c <= 1`.
///
/// `c = Γ(H+1)² (ρ² sin²(πH/2) + η² cos²(πH/2)) / (Γ(2H_i+1) Γ(2H_j+1) sin(πH_i) sin(πH_j))`
/// with `H = H_i + H_j`.
pub fn coherency(h_i: f64, h_j: f64, rho_ij: f64, eta_ij: f64) -> f64 {
    use std::f64::consts::PI;
    let h = h_i + h_j;
    let g = gamma(h + 1.0);
    let (s, c) = (0.5 * PI * h).sin_cos();
    let num = g * g * (rho_ij * rho_ij * s * s + eta_ij * eta_ij * c * c);
    let den = gamma(2.0 * h_i + 1.0) * gamma(2.0 * h_j + 1.0) * (PI * h_i).sin() * (PI * h_j).sin();
    num / den
}

/// Unit-scale mfGn cross-covariance for one ordered pair of components.
///
/// `at(h)` is `Cov(ΔW^i_{k+h}, ΔW^j_k)` for increments over a step `delta`.
#[derive(Debug, Clone, Copy)]
pub struct MfgnKernel {
    exponent: f64,
    plus: f64,
    minus: f64,
    scale: f64,
}

impl MfgnKernel {
    pub fn new(params: &ModelParams, i: usize, j: usize, delta: f64) -> Result<Self> {
        if !(delta > 0.0) {
            return Err(Error::InvalidParams(format!("step must be positive, got {delta}")));
        }
        let exponent = params.hurst_sum(i, j);
        let (plus, minus) = if i == j {
            (1.0, 1.0)
        } else {
            check_pair_hurst_sum(params.hurst[i], params.hurst[j])?;
            let (r, e) = (params.rho[(i, j)], params.eta[(i, j)]);
            (r + e, r - e)
        };
        Ok(MfgnKernel { exponent, plus, minus, scale: delta.powf(exponent) })
    }

    pub fn at(&self, h: i64) -> f64 {
        let phi = |x: i64| -> f64 {
            match x.signum() {
                0 => 0.0,
                1 => self.plus * (x as f64).powf(self.exponent),
                _ => self.minus * ((-x) as f64).powf(self.exponent),
            }
        };
        let v = match h {
            h if h >= 2 => self.plus * half_second_difference_pow(h as u64, self.exponent),
            h if h <= -2 => self.minus * half_second_difference_pow((-h) as u64, self.exponent),
            _ => 0.5 * (phi(h - 1) - 2.0 * phi(h) + phi(h + 1)),
        };
        v * self.scale
    }
}

/// `Cov(W^{H_i}_{(k+h)δ} - W^{H_i}_{(k+h-1)δ}, W^{H_j}_{kδ} - W^{H_j}_{(k-1)δ})` for the unit-scale mfBm.
pub fn mfgn_cov(i: usize, j: usize, h: i64, delta: f64, params: &ModelParams) -> Result<f64> {
    params.check_dimensions()?;
    if i >= params.n() || j >= params.n() {
        return Err(Error::Dimension(format!("component index out of range for N = {}", params.n())));
    }
    Ok(MfgnKernel::new(params, i, j, delta)?.at(h))
}

/// Covariance matrix of `(ΔW_0, ..., ΔW_m)` stacked time-major (`N` entries per time).
pub fn mfgn_block_covariance(params: &ModelParams, max_lag: usize, delta: f64) -> Result<DMatrix<f64>> {
    let n = params.n();
    let mut kernels = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            kernels.push(MfgnKernel::new(params, i, j, delta)?);
        }
    }
    let dim = n * (max_lag + 1);
    Ok(DMatrix::from_fn(dim, dim, |r, c| {
        let (a, i) = (r / n, r % n);
        let (b, j) = (c / n, c % n);
        kernels[i * n + j].at(a as i64 - b as i64)
    }))
}
