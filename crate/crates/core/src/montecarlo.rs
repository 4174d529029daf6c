//! Simulate-then-estimate replication harness, kernel densities and a normality check.
//!
//! Replication `r` comes from simulation round `r / 2`: the two parts of one
//! circulant-embedding draw are independent, so round `q` yields replications
//! `2q` (real part) and `2q + 1` (imaginary part). Round seeds are
//! `splitmix64(master ^ splitmix64(q))`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::covariance::ccf_zero;
use crate::error::{Error, Result};
use crate::estimator::{mde_estimate, mde_estimate_asymptotic, EstimateOptions, EstimateResult, Variant};
use crate::kvdoc::KvDoc;
use crate::model::ModelParams;
use crate::panel::PathPanel;
use crate::simulator::{MfouSimulator, SimConfig};
use crate::special::normal_cdf;

/// SplitMix64 finalizer.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of simulation round `round`.
pub fn round_seed(master: u64, round: u64) -> u64 {
    splitmix64(master ^ splitmix64(round))
}

#[derive(Debug, Clone, PartialEq)]
pub struct McScenario {
    pub truth: ModelParams,
    pub sim: SimConfig,
    pub variant: Variant,
    pub replications: usize,
    pub master_seed: u64,
    pub estimate: EstimateOptions,
    /// Drop non-converged replications from the statistics instead of keeping them.
    pub drop_nonconverged: bool,
}

impl McScenario {
    pub fn new(truth: ModelParams, replications: usize, master_seed: u64) -> Self {
        McScenario {
            truth,
            sim: SimConfig::default(),
            variant: Variant::Exact,
            replications,
            master_seed,
            estimate: EstimateOptions::default(),
            drop_nonconverged: false,
        }
    }

    fn check(&self) -> Result<()> {
        if self.replications < 2 {
            return Err(Error::Config(format!("need at least 2 replications, got {}", self.replications)));
        }
        self.sim.layout()?;
        Ok(())
    }

    /// Keys `mc.*`, `sim.*`, `estimate.*` and the true parameters under `params.*`.
    pub fn to_kv(&self) -> KvDoc {
        let mut doc = KvDoc::new();
        doc.set("mc.replications", self.replications);
        doc.set("mc.seed", self.master_seed);
        doc.set("mc.variant", self.variant);
        doc.set("mc.drop_nonconverged", self.drop_nonconverged);
        for (prefix, part) in [("params", self.truth.to_kv()), ("sim", self.sim.to_kv()), ("estimate", self.estimate.to_kv())] {
            for (k, v) in part.iter() {
                doc.set(&format!("{prefix}.{k}"), v);
            }
        }
        doc
    }

    pub fn from_kv(doc: &KvDoc) -> Result<Self> {
        let truth = ModelParams::from_kv(&doc.section("params"))?;
        let mc = doc.section("mc");
        let mut s = McScenario::new(truth, mc.get_u64("replications")?.unwrap_or(200) as usize, mc.get_u64("seed")?.unwrap_or(0));
        s.sim = SimConfig::from_kv(&doc.section("sim"))?;
        s.estimate = EstimateOptions::from_kv(&doc.section("estimate"))?;
        if let Some(v) = mc.get("variant") {
            s.variant = v.parse()?;
        }
        if let Some(v) = mc.get("drop_nonconverged") {
            s.drop_nonconverged =
                v.parse().map_err(|_| Error::Config(format!("mc.drop_nonconverged: expected true/false, got `{v}`")))?;
        }
        s.check()?;
        Ok(s)
    }

    /// Parameter names and true values in report order.
    pub fn targets(&self) -> Result<(Vec<String>, Vec<f64>)> {
        let p = &self.truth;
        let n = p.n();
        let mut names = Vec::new();
        let mut values = Vec::new();
        let mut push = |name: String, v: f64| {
            names.push(name);
            values.push(v);
        };
        for i in 0..n {
            push(format!("alpha.{}", i + 1), p.alpha[i]);
        }
        for i in 0..n {
            push(format!("nu.{}", i + 1), p.nu[i]);
        }
        for i in 0..n {
            push(format!("hurst.{}", i + 1), p.hurst[i]);
        }
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        for &(i, j) in &pairs {
            push(format!("rho.{}.{}", i + 1, j + 1), p.rho[(i, j)]);
        }
        for &(i, j) in &pairs {
            push(format!("eta.{}.{}", i + 1, j + 1), p.eta[(i, j)]);
        }
        if self.variant == Variant::Asymptotic {
            for i in 0..n {
                push(format!("V.{}", i + 1), ccf_zero(i, i, p)?);
            }
            for &(i, j) in &pairs {
                push(format!("C.{}.{}", i + 1, j + 1), ccf_zero(i, j, p)?);
            }
        }
        Ok((names, values))
    }
}

/// One replication's estimate, flattened in `McScenario::targets` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationEstimate {
    pub values: Vec<f64>,
    pub converged: bool,
}

impl ReplicationEstimate {
    pub fn from_result(r: &EstimateResult) -> Self {
        let p = &r.theta_hat;
        let n = p.n();
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
        let mut values: Vec<f64> = p.alpha.iter().chain(&p.nu).chain(&p.hurst).copied().collect();
        values.extend(pairs.iter().map(|&(i, j)| p.rho[(i, j)]));
        values.extend(pairs.iter().map(|&(i, j)| p.eta[(i, j)]));
        if let Some(lv) = &r.levels {
            values.extend(&lv.variance);
            values.extend(pairs.iter().map(|&(i, j)| lv.covariance[(i, j)]));
        }
        ReplicationEstimate { values, converged: r.converged }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamRecord {
    pub name: String,
    pub truth: f64,
    pub avg: f64,
    pub std_err: f64,
    pub bias: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct McReport {
    pub records: Vec<ParamRecord>,
    /// `estimates[r][p]` for every replication, kept or not.
    pub estimates: Vec<Vec<f64>>,
    pub converged: Vec<bool>,
    /// Replications entering the statistics.
    pub used: Vec<usize>,
    /// `standardized[p]`: `(θ̂ − θ₀) / std_err` over the used replications.
    pub standardized: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl McReport {
    pub fn nonconverged(&self) -> usize {
        self.converged.iter().filter(|c| !**c).count()
    }

    pub fn record(&self, name: &str) -> Option<&ParamRecord> {
        self.records.iter().find(|r| r.name == name)
    }

    /// Table layout: `param,true,avg,std_err,bias`.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["param", "true", "avg", "std_err", "bias"])?;
        for r in &self.records {
            w.write_record([r.name.clone(), r.truth.to_string(), r.avg.to_string(), r.std_err.to_string(), r.bias.to_string()])?;
        }
        finish(w)
    }

    /// One row per used replication: `replication,seed,part,converged,<standardized errors>`.
    pub fn standardized_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["replication".to_string(), "seed".into(), "part".into(), "converged".into()];
        header.extend(self.records.iter().map(|r| r.name.clone()));
        w.write_record(&header)?;
        for (row, &r) in self.used.iter().enumerate() {
            let mut rec = vec![r.to_string(), self.seeds[r].to_string(), (r % 2).to_string(), self.converged[r].to_string()];
            rec.extend(self.standardized.iter().map(|s| s[row].to_string()));
            w.write_record(&rec)?;
        }
        finish(w)
    }

    /// Kernel density of each parameter's standardized errors on `grid`, next to `φ`.
    pub fn density_csv(&self, grid: &[f64]) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["x".to_string(), "normal".into()];
        header.extend(self.records.iter().map(|r| r.name.clone()));
        w.write_record(&header)?;
        let cols: Vec<Vec<f64>> = self
            .standardized
            .iter()
            .map(|s| kde_density(s, grid).unwrap_or_else(|_| vec![f64::NAN; grid.len()]))
            .collect();
        for (g, &x) in grid.iter().enumerate() {
            let mut rec = vec![x.to_string(), ((-0.5 * x * x).exp() / (2.0 * PI).sqrt()).to_string()];
            rec.extend(cols.iter().map(|c| c[g].to_string()));
            w.write_record(&rec)?;
        }
        finish(w)
    }
}

fn finish(w: csv::Writer<Vec<u8>>) -> Result<String> {
    let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Simulates the scenario's `M` panels (rounds run one after another).
pub fn simulate_replications(scenario: &McScenario) -> Result<(Vec<PathPanel>, Vec<u64>)> {
    scenario.check()?;
    let sim = MfouSimulator::new(&scenario.truth, &scenario.sim)?;
    let rounds = scenario.replications.div_ceil(2);
    let mut panels = Vec::with_capacity(2 * rounds);
    let mut seeds = Vec::with_capacity(2 * rounds);
    for q in 0..rounds {
        let seed = round_seed(scenario.master_seed, q as u64);
        let (re, im) = sim.simulate_pair(seed);
        panels.push(re);
        panels.push(im);
        seeds.extend([seed, seed]);
    }
    panels.truncate(scenario.replications);
    seeds.truncate(scenario.replications);
    Ok((panels, seeds))
}

/// Runs `estimator` on pre-simulated panels and aggregates.
pub fn estimate_replications<F>(scenario: &McScenario, panels: &[PathPanel], seeds: &[u64], estimator: F) -> Result<McReport>
where
    F: Fn(&PathPanel) -> Result<ReplicationEstimate> + Sync,
{
    scenario.check()?;
    if panels.len() != seeds.len() || panels.len() < 2 {
        return Err(Error::Dimension(format!("{} panels and {} seeds", panels.len(), seeds.len())));
    }
    let results: Vec<ReplicationEstimate> = panels
        .par_iter()
        .enumerate()
        .map(|(r, p)| {
            estimator(p).map_err(|e| Error::Replication { replication: r, seed: seeds[r], source: Box::new(e) })
        })
        .collect::<Result<_>>()?;
    aggregate(scenario, results, seeds.to_vec())
}

/// The scenario's own estimator variant.
pub fn default_estimator(scenario: &McScenario) -> impl Fn(&PathPanel) -> Result<ReplicationEstimate> + Sync + '_ {
    move |panel| {
        let r = match scenario.variant {
            Variant::Exact => mde_estimate(panel, &scenario.estimate)?,
            Variant::Asymptotic => mde_estimate_asymptotic(panel, &scenario.estimate)?,
        };
        Ok(ReplicationEstimate::from_result(&r))
    }
}

pub fn run_mc(scenario: &McScenario) -> Result<McReport> {
    run_mc_with(scenario, default_estimator(scenario))
}

pub fn run_mc_with<F>(scenario: &McScenario, estimator: F) -> Result<McReport>
where
    F: Fn(&PathPanel) -> Result<ReplicationEstimate> + Sync,
{
    let (panels, seeds) = simulate_replications(scenario)?;
    estimate_replications(scenario, &panels, &seeds, estimator)
}

fn aggregate(scenario: &McScenario, results: Vec<ReplicationEstimate>, seeds: Vec<u64>) -> Result<McReport> {
    let (names, truth) = scenario.targets()?;
    if let Some(bad) = results.iter().position(|r| r.values.len() != names.len()) {
        return Err(Error::Dimension(format!("replication {bad} returned {} values, expected {}", results[bad].values.len(), names.len())));
    }
    let converged: Vec<bool> = results.iter().map(|r| r.converged).collect();
    let used: Vec<usize> = (0..results.len()).filter(|&r| !scenario.drop_nonconverged || converged[r]).collect();
    if used.len() < 2 {
        return Err(Error::Data(format!("only {} usable replications", used.len())));
    }
    let m = used.len() as f64;
    let mut records = Vec::with_capacity(names.len());
    let mut standardized = Vec::with_capacity(names.len());
    for (p, name) in names.iter().enumerate() {
        let xs: Vec<f64> = used.iter().map(|&r| results[r].values[p]).collect();
        let avg = xs[0] + xs.iter().map(|x| x - xs[0]).sum::<f64>() / m;
        let std_err = (xs.iter().map(|x| (x - avg).powi(2)).sum::<f64>() / (m - 1.0)).sqrt();
        let bias = avg - truth[p];
        standardized.push(xs.iter().map(|x| if std_err > 0.0 { (x - truth[p]) / std_err } else { 0.0 }).collect());
        records.push(ParamRecord { name: name.clone(), truth: truth[p], avg, std_err, bias });
    }
    Ok(McReport {
        records,
        estimates: results.into_iter().map(|r| r.values).collect(),
        converged,
        used,
        standardized,
        seeds,
    })
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Silverman bandwidth `0.9 min(σ̂, IQR/1.34) n^{-1/5}` (falls back to `σ̂` when the IQR is 0).
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if !(sd > 0.0) {
        return Err(Error::Data("samples have zero variance".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = (quantile(&sorted, 0.75) - quantile(&sorted, 0.25)) / 1.34;
    let spread = if iqr > 0.0 { sd.min(iqr) } else { sd };
    Ok(0.9 * spread * n.powf(-0.2))
}

/// Gaussian kernel density estimate on `grid`.
pub fn kde_density(samples: &[f64], grid: &[f64]) -> Result<Vec<f64>> {
    if samples.len() < 10 {
        return Err(Error::Data(format!("kernel density needs at least 10 samples, got {}", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::Data("samples must be finite".into()));
    }
    let h = silverman_bandwidth(samples)?;
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| norm * samples.iter().map(|s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>())
        .collect())
}

/// Kolmogorov–Smirnov distance between the empirical distribution and `N(0, 1)`.
/// Meant for at least 30 samples.
pub fn normality_diagnostic(samples: &[f64]) -> f64 {
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    sorted.iter().enumerate().fold(0.0f64, |d, (k, &x)| {
        let f = normal_cdf(x);
        d.max(f - k as f64 / n).max((k + 1) as f64 / n - f)
    })
}

/// Standardized errors as a `replications × params` matrix.
pub fn standardized_matrix(report: &McReport) -> DMatrix<f64> {
    let rows = report.used.len();
    DMatrix::from_fn(rows, report.records.len(), |r, p| report.standardized[p][r])
}
