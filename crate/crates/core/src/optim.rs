//! Box-constrained limited-memory quasi-Newton minimizer.
//!
//! Projected L-BFGS: variables sitting on a bound with the gradient pointing
//! outward are frozen for the step, the two-loop recursion acts on the free
//! ones, and a projected Armijo backtracking search keeps iterates feasible.
//! Gradients are central finite differences (one-sided at the bounds).
//! Stopping rules and defaults follow the usual L-BFGS-B conventions
//! (`m = 5`, `factr = 1e7`, `pgtol = 0`, 100 iterations).

use std::collections::VecDeque;

#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Bounds {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        assert_eq!(lower.len(), upper.len(), "bound vectors differ in length");
        Bounds { lower, upper }
    }

    pub fn unbounded(n: usize) -> Self {
        Bounds { lower: vec![f64::NEG_INFINITY; n], upper: vec![f64::INFINITY; n] }
    }

    pub fn len(&self) -> usize {
        self.lower.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lower.is_empty()
    }

    pub fn project(&self, x: &mut [f64]) {
        for (i, v) in x.iter_mut().enumerate() {
            *v = v.clamp(self.lower[i], self.upper[i]);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimOptions {
    /// Stored correction pairs.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop when the relative decrease falls below `factr · ε`.
    pub factr: f64,
    /// Stop when the projected gradient sup-norm falls below this.
    pub pgtol: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
}

impl Default for OptimOptions {
    fn default() -> Self {
        OptimOptions { memory: 5, max_iter: 100, factr: 1e7, pgtol: 0.0, fd_step: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StopReason {
    RelativeReduction,
    ProjectedGradient,
    MaxIterations,
    LineSearchFailed,
    NonFinite,
}

impl StopReason {
    pub fn converged(&self) -> bool {
        matches!(self, StopReason::RelativeReduction | StopReason::ProjectedGradient)
    }
}

#[derive(Debug, Clone)]
pub struct OptimResult {
    pub x: Vec<f64>,
    pub f: f64,
    pub iterations: usize,
    pub evaluations: usize,
    pub stop: StopReason,
}

impl OptimResult {
    pub fn converged(&self) -> bool {
        self.stop.converged()
    }
}

struct Counted<F> {
    f: F,
    calls: usize,
}

impl<F: FnMut(&[f64]) -> f64> Counted<F> {
    fn eval(&mut self, x: &[f64]) -> f64 {
        self.calls += 1;
        (self.f)(x)
    }
}

/// Central-difference gradient; one-sided where a bound is within one step.
pub fn fd_gradient<F: FnMut(&[f64]) -> f64>(f: &mut F, x: &[f64], fx: f64, bounds: &Bounds, rel_step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut g = vec![0.0; x.len()];
    for i in 0..x.len() {
        let h = rel_step * x[i].abs().max(0.1);
        let (lo, hi) = (bounds.lower[i], bounds.upper[i]);
        g[i] = if x[i] - h >= lo && x[i] + h <= hi {
            probe[i] = x[i] + h;
            let fp = f(&probe);
            probe[i] = x[i] - h;
            let fm = f(&probe);
            (fp - fm) / (2.0 * h)
        } else if x[i] + h <= hi {
            probe[i] = x[i] + h;
            (f(&probe) - fx) / h
        } else {
            probe[i] = x[i] - h;
            (fx - f(&probe)) / h
        };
        probe[i] = x[i];
    }
    g
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Minimizes `f` over the box starting from `x0` (projected onto the box first).
pub fn minimize<F: FnMut(&[f64]) -> f64>(f: F, x0: &[f64], bounds: &Bounds, opts: &OptimOptions) -> OptimResult {
    let n = x0.len();
    assert_eq!(bounds.len(), n, "bounds and start differ in length");
    let mut obj = Counted { f, calls: 0 };
    let mut x = x0.to_vec();
    bounds.project(&mut x);
    let mut fx = obj.eval(&x);
    if !fx.is_finite() {
        return OptimResult { x, f: fx, iterations: 0, evaluations: obj.calls, stop: StopReason::NonFinite };
    }
    let mut g = fd_gradient(&mut |p: &[f64]| obj.eval(p), &x, fx, bounds, opts.fd_step);
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();
    let eps = f64::EPSILON;
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;

    while iterations < opts.max_iter {
        if projected_gradient_norm(&x, &g, bounds) <= opts.pgtol {
            stop = StopReason::ProjectedGradient;
            break;
        }
        iterations += 1;
        let free: Vec<bool> = (0..n)
            .map(|i| {
                let at_lo = x[i] <= bounds.lower[i] && g[i] > 0.0;
                let at_hi = x[i] >= bounds.upper[i] && g[i] < 0.0;
                !(at_lo || at_hi)
            })
            .collect();
        let mut d = two_loop(&g, &pairs, &free);
        let mut slope = dot(&g, &d);
        if !(slope < 0.0) {
            pairs.clear();
            d = (0..n).map(|i| if free[i] { -g[i] } else { 0.0 }).collect();
            slope = dot(&g, &d);
            if !(slope < 0.0) {
                stop = StopReason::ProjectedGradient;
                break;
            }
        }
        let mut t = if pairs.is_empty() {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            (1.0 / dmax.max(1e-300)).min(1.0)
        } else {
            1.0
        };
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial: Vec<f64> = x.iter().zip(&d).map(|(a, b)| a + t * b).collect();
            bounds.project(&mut trial);
            let step: Vec<f64> = trial.iter().zip(&x).map(|(a, b)| a - b).collect();
            let decrease = dot(&g, &step);
            if step.iter().all(|s| *s == 0.0) {
                break;
            }
            let ft = obj.eval(&trial);
            if ft.is_finite() && ft <= fx + 1e-4 * decrease {
                accepted = Some((trial, ft));
                break;
            }
            t *= if ft.is_finite() { 0.5 } else { 0.1 };
        }
        let Some((x_new, f_new)) = accepted else {
            if pairs.is_empty() {
                stop = StopReason::LineSearchFailed;
                break;
            }
            // retry from steepest descent with a fresh memory
            pairs.clear();
            continue;
        };
        let g_new = fd_gradient(&mut |p: &[f64]| obj.eval(p), &x_new, f_new, bounds, opts.fd_step);
        let s: Vec<f64> = x_new.iter().zip(&x).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > eps * dot(&y, &y) {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, y, sy));
        }
        let rel = (fx - f_new) / fx.abs().max(f_new.abs()).max(1.0);
        x = x_new;
        g = g_new;
        let done = rel <= opts.factr * eps;
        fx = f_new;
        if done {
            stop = StopReason::RelativeReduction;
            break;
        }
    }
    OptimResult { x, f: fx, iterations, evaluations: obj.calls, stop }
}

fn projected_gradient_norm(x: &[f64], g: &[f64], bounds: &Bounds) -> f64 {
    x.iter()
        .enumerate()
        .map(|(i, &xi)| ((xi - g[i]).clamp(bounds.lower[i], bounds.upper[i]) - xi).abs())
        .fold(0.0, f64::max)
}

// -H·g restricted to the free coordinates.
fn two_loop(g: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>, free: &[bool]) -> Vec<f64> {
    let mask = |v: &[f64]| -> Vec<f64> { v.iter().zip(free).map(|(x, &f)| if f { *x } else { 0.0 }).collect() };
    let mut q = mask(g);
    let masked: Vec<(Vec<f64>, Vec<f64>)> = pairs.iter().map(|(s, y, _)| (mask(s), mask(y))).collect();
    let mut alphas = Vec::with_capacity(masked.len());
    for (s, y) in masked.iter().rev() {
        let sy = dot(s, y);
        if sy <= 0.0 {
            alphas.push(0.0);
            continue;
        }
        let a = dot(s, &q) / sy;
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= a * yi;
        }
        alphas.push(a);
    }
    if let Some((s, y)) = masked.iter().rev().find(|(s, y)| dot(s, y) > 0.0) {
        let gamma = dot(s, y) / dot(y, y);
        for qi in q.iter_mut() {
            *qi *= gamma;
        }
    }
    for ((s, y), a) in masked.iter().zip(alphas.iter().rev()) {
        let sy = dot(s, y);
        if sy <= 0.0 {
            continue;
        }
        let b = dot(y, &q) / sy;
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (a - b) * si;
        }
    }
    q.iter().map(|v| -v).collect()
}
