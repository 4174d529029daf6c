mod common;

use mfou::covariance::{ccf_exact, ccf_zero, CcfRequest};
use mfou::panel::PathPanel;
use mfou::simulator::{MfouSimulator, SimConfig};
use mfou::ModelParams;

use common::panel_a;

const DELTA: f64 = 1.0 / 252.0;

fn config(refine: f64, horizon: f64) -> SimConfig {
    SimConfig { delta_fine: DELTA / refine, horizon, warmup_horizon: horizon + 8.0, ..SimConfig::default() }
}

fn diffs(xs: &[f64]) -> Vec<f64> {
    xs.windows(2).map(|w| w[1] - w[0]).collect()
}

fn corr(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
    let sab: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let saa: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let sbb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    sab / (saa * sbb).sqrt()
}

fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (m, sd / n.sqrt())
}

#[test]
fn seeds_reproduce_and_parts_are_labelled() {
    let sim = MfouSimulator::new(&panel_a(), &config(2.0, 4.0)).unwrap();
    let (a, b) = sim.simulate_pair(17);
    let (a2, b2) = sim.simulate_pair(17);
    assert_eq!(a.values, a2.values);
    assert_eq!(b.values, b2.values);
    assert_ne!(a.values, b.values);
    assert_ne!(a.values, sim.simulate(18).values);
    assert_eq!(a.len(), 4 * 252 + 1);
    assert_eq!(a.meta.get("seed"), Some("17"));
    assert_eq!(a.meta.get("part"), Some("0"));
    assert_eq!(b.meta.get("part"), Some("1"));
}

#[test]
fn real_and_imaginary_parts_and_seeds_are_uncorrelated() {
    let sim = MfouSimulator::new(&panel_a(), &config(2.0, 20.0)).unwrap();
    let (a, b) = sim.simulate_pair(1);
    let c = sim.simulate(2);
    for i in 0..2 {
        let da = diffs(&a.values[i]);
        assert!(corr(&da, &diffs(&b.values[i])).abs() < 0.08);
        assert!(corr(&da, &diffs(&c.values[i])).abs() < 0.08);
    }
    // Within one path the two components are strongly correlated.
    assert!(corr(&diffs(&a.values[0]), &diffs(&a.values[1])) > 0.8);
}

#[test]
fn increments_are_gaussian() {
    let sim = MfouSimulator::new(&panel_a(), &config(2.0, 20.0)).unwrap();
    let mut z = Vec::new();
    for seed in 0..4 {
        let (a, b) = sim.simulate_pair(seed);
        for panel in [a, b] {
            for i in 0..2 {
                let d = diffs(&panel.values[i]);
                let (m, se) = mean_and_se(&d);
                let sd = se * (d.len() as f64).sqrt();
                z.extend(d.iter().map(|x| (x - m) / sd));
            }
        }
    }
    let n = z.len() as f64;
    let skew = z.iter().map(|x| x.powi(3)).sum::<f64>() / n;
    let kurt = z.iter().map(|x| x.powi(4)).sum::<f64>() / n - 3.0;
    assert!(skew.abs() < 0.1, "skewness {skew}");
    assert!(kurt.abs() < 0.2, "excess kurtosis {kurt}");
}

#[test]
fn sample_means_hit_a_nonzero_mean() {
    let mut p = panel_a();
    p.mu = vec![2.0, -1.0];
    let sim = MfouSimulator::new(&p, &config(2.0, 4.0)).unwrap();
    let mut means = [Vec::new(), Vec::new()];
    for seed in 0..12 {
        let (a, b) = sim.simulate_pair(seed);
        for panel in [a, b] {
            for (i, m) in means.iter_mut().enumerate() {
                m.push(panel.values[i].iter().sum::<f64>() / panel.len() as f64);
            }
        }
    }
    for (i, m) in means.iter().enumerate() {
        let (avg, se) = mean_and_se(m);
        assert!((avg - p.mu[i]).abs() < 4.0 * se, "mean {avg} vs {} (se {se})", p.mu[i]);
    }
}

#[test]
fn zero_correlation_gives_unrelated_components() {
    let p = ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.0, 0.0);
    let sim = MfouSimulator::new(&p, &config(2.0, 20.0)).unwrap();
    let (a, b) = sim.simulate_pair(4);
    for panel in [a, b] {
        assert!(corr(&diffs(&panel.values[0]), &diffs(&panel.values[1])).abs() < 0.08);
    }
}

/// Per-path `(1/n) Σ (Y_t − μ)²` and `(1/(n−1)) Σ (Y_{t+1} − Y_t)²` for component `i`.
fn path_moments(panel: &PathPanel, i: usize, mu: f64) -> (f64, f64) {
    let y = &panel.values[i];
    let level = y.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / y.len() as f64;
    let d = diffs(y);
    let inc = d.iter().map(|v| v * v).sum::<f64>() / d.len() as f64;
    (level, inc)
}

#[test]
fn finer_mesh_agrees_with_the_exact_moments() {
    let p = panel_a();
    let g0 = ccf_zero(0, 0, &p).unwrap();
    let g1 = ccf_exact(&CcfRequest::new(0, 0, DELTA, &p)).unwrap();
    let want_inc = 2.0 * (g0 - g1);
    for refine in [2.0, 4.0] {
        let sim = MfouSimulator::new(&p, &config(refine, 4.0)).unwrap();
        let mut levels = Vec::new();
        let mut incs = Vec::new();
        for seed in 0..8 {
            let (a, b) = sim.simulate_pair(100 + seed);
            for panel in [a, b] {
                let (l, d) = path_moments(&panel, 0, p.mu[0]);
                levels.push(l);
                incs.push(d);
            }
        }
        let (l, lse) = mean_and_se(&levels);
        let (d, dse) = mean_and_se(&incs);
        assert!((l - g0).abs() < 4.0 * lse, "refine {refine}: level {l} vs {g0} (se {lse})");
        assert!((d - want_inc).abs() < 4.0 * dse, "refine {refine}: increment {d} vs {want_inc} (se {dse})");
    }
}
