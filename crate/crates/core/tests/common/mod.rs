//! Reference computations shared by the integration tests. Nothing here calls
//! into the crate's quadrature or special functions.
#![allow(dead_code)]

use mfou::ModelParams;

const XK: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
];
const WK: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
const WG: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

// Gauss–Kronrod 7/15 on [a, b]: (estimate, error estimate).
fn gk15(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = fc * WK[7];
    let mut g = fc * WG[3];
    for m in 0..7 {
        let x = h * XK[m];
        let s = f(c - x) + f(c + x);
        k += WK[m] * s;
        if m % 2 == 1 {
            g += WG[m / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Recursive adaptive Gauss–Kronrod with absolute tolerance `tol` (floored at roundoff).
pub fn adaptive(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &mut dyn FnMut(f64) -> f64, a: f64, b: f64, tol: f64, whole: (f64, f64), depth: u32) -> f64 {
        if whole.1 <= tol.max(1e-15 * whole.0.abs()) || depth == 0 || (b - a).abs() < 1e-300 {
            return whole.0;
        }
        let m = 0.5 * (a + b);
        let left = gk15(f, a, m);
        let right = gk15(f, m, b);
        rec(f, a, m, 0.5 * tol, left, depth - 1) + rec(f, m, b, 0.5 * tol, right, depth - 1)
    }
    let whole = gk15(f, a, b);
    rec(f, a, b, tol, whole, 60)
}

/// `∫_0^∞ f` over geometric pieces `[0, s], [s, 2s], [2s, 4s], ...` until `upper`.
pub fn half_line(f: &mut dyn FnMut(f64) -> f64, s: f64, upper: f64, rel: f64) -> f64 {
    let rough = gk15(f, 0.0, s).0;
    let mut total = adaptive(f, 0.0, s, rel * rough.abs());
    let mut a = s;
    while a < upper {
        let b = 2.0 * a;
        let piece = adaptive(f, a, b, rel * total.abs().max(1e-300));
        total += piece;
        a = b;
    }
    total
}

/// `Γ(x)` for `x > 0` from `∫_0^∞ t^{x-1} e^{-t} dt` (x ≥ 1 keeps the integrand bounded).
pub fn gamma_by_quadrature(x: f64) -> f64 {
    assert!(x >= 1.0);
    let mut f = |t: f64| t.powf(x - 1.0) * (-t).exp();
    let mut total = adaptive(&mut f, 0.0, 1.0, 1e-15);
    let mut a = 1.0;
    while a < 200.0 {
        total += adaptive(&mut f, a, 2.0 * a, 1e-15);
        a *= 2.0;
    }
    total
}

fn pair(params: &ModelParams, i: usize, j: usize) -> (f64, f64, f64) {
    if i == j {
        (1.0, 0.0, 2.0 * params.hurst[i])
    } else {
        (params.rho[(i, j)], params.eta[(i, j)], params.hurst[i] + params.hurst[j])
    }
}

/// Lag-zero covariance from its closed form, with `Γ` by quadrature.
pub fn gamma_zero(params: &ModelParams, i: usize, j: usize) -> f64 {
    let (rho, eta, h) = pair(params, i, j);
    let (ai, aj) = (params.alpha[i], params.alpha[j]);
    let (pi, pj) = (ai.powf(1.0 - h), aj.powf(1.0 - h));
    gamma_by_quadrature(h + 1.0) * params.nu[i] * params.nu[j] / (2.0 * (ai + aj)) * ((pi + pj) * rho + (pj - pi) * eta)
}

/// `γ_ij(k) = Cov(Y^i_{t+k}, Y^j_t)` for `k ≥ 0` by brute-force nested quadrature:
///
/// `e^{-α_i k} γ_ij(0) + ν_i ν_j H(H-1)(ρ+η)/2 ∫_0^k e^{-α_i (k-v)} ∫_0^∞ e^{-α_j w} (v+w)^{H-2} dw dv`.
///
/// For `H < 1` the outer variable is `v = k s^{1/H}`, which cancels the `v^{H-1}`
/// blow-up of the inner integral at `v = 0`.
pub fn ccf_oracle(params: &ModelParams, i: usize, j: usize, k: f64) -> f64 {
    assert!(k >= 0.0);
    let (rho, eta, h) = pair(params, i, j);
    let (ai, aj) = (params.alpha[i], params.alpha[j]);
    let g0 = gamma_zero(params, i, j);
    if k == 0.0 {
        return g0;
    }
    let inner = |v: f64| -> f64 {
        let mut f = |w: f64| (-aj * w).exp() * (v + w).powf(h - 2.0);
        half_line(&mut f, v, 60.0 / aj, 1e-13)
    };
    let outer = if h < 1.0 {
        let mut f = |s: f64| {
            if s <= 0.0 {
                return 0.0;
            }
            let v = k * s.powf(1.0 / h);
            let dv = k / h * s.powf(1.0 / h - 1.0);
            (-ai * (k - v)).exp() * inner(v) * dv
        };
        adaptive(&mut f, 0.0, 1.0, 1e-13 * inner(k).abs() * k)
    } else {
        let mut f = |v: f64| (-ai * (k - v)).exp() * inner(v);
        adaptive(&mut f, 0.0, k, 1e-13 * inner(0.5 * k).abs() * k)
    };
    (-ai * k).exp() * g0 + params.nu[i] * params.nu[j] * h * (h - 1.0) * (rho + eta) / 2.0 * outer
}

/// Exact expectation of the demeaned sample cross-covariance
/// `(1/(n-k)) Σ_{l} (Y^i_{l+k} − Ȳ^i)(Y^j_l − Ȳ^j)` for a stationary series of length `n`,
/// given `g[h + n - 1] = γ_ij(hΔ)` for `h = -(n-1)..=(n-1)`.
pub fn demeaned_expectation(g: &[f64], n: usize, k: usize) -> f64 {
    assert_eq!(g.len(), 2 * n - 1);
    let at = |h: i64| g[(h + n as i64 - 1) as usize];
    // prefix[m] = Σ_{h < m - (n-1)} g(h)
    let mut prefix = vec![0.0; 2 * n];
    for m in 0..2 * n - 1 {
        prefix[m + 1] = prefix[m] + g[m];
    }
    // Σ_{b=1..n} g(a - b) over h = a-n ..= a-1
    let row = |a: i64| {
        let lo = (a - n as i64 + n as i64 - 1) as usize;
        let hi = (a - 1 + n as i64 - 1) as usize;
        prefix[hi + 1] - prefix[lo]
    };
    // Σ_{a=1..n} g(a - l) over h = 1-l ..= n-l
    let col = |l: i64| {
        let lo = (1 - l + n as i64 - 1) as usize;
        let hi = (n as i64 - l + n as i64 - 1) as usize;
        prefix[hi + 1] - prefix[lo]
    };
    let nf = n as f64;
    let m = (n - k) as f64;
    let cross_i: f64 = (1..=(n - k) as i64).map(|l| row(l + k as i64)).sum::<f64>() / (nf * m);
    let cross_j: f64 = (1..=(n - k) as i64).map(col).sum::<f64>() / (nf * m);
    let both: f64 = (-(n as i64 - 1)..n as i64).map(|h| (nf - h.unsigned_abs() as f64) * at(h)).sum::<f64>() / (nf * nf);
    at(k as i64) - cross_i - cross_j + both
}

/// Panel-A parameters.
pub fn panel_a() -> ModelParams {
    ModelParams::bivariate([1.32, 1.45], [0.78, 0.79], [0.19, 0.21], 0.94, 0.0)
}
