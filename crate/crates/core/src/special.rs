//! Special functions used by the covariance, spillover and diagnostic code.
//!
//! Everything here works in `f64` and targets close to machine precision on the
//! argument ranges the model needs: Hurst sums in `(0, 2)`, incomplete-gamma
//! shape parameters in `(-1, 2]`, Beta arguments in `(1/2, 3/2)`.

use std::f64::consts::PI;

const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Gamma function for real arguments (reflection below 1/2).
pub fn gamma(x: f64) -> f64 {
    if x < 0.5 {
        PI / ((PI * x).sin() * gamma(1.0 - x))
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        (2.0 * PI).sqrt() * t.powf(x + 0.5) * (-t).exp() * acc
    }
}

/// Natural log of |Γ(x)| for x > 0.
pub fn ln_gamma(x: f64) -> f64 {
    if x < 0.5 {
        (PI / (PI * x).sin()).abs().ln() - ln_gamma(1.0 - x)
    } else {
        let x = x - 1.0;
        let mut acc = LANCZOS_COEF[0];
        let t = x + LANCZOS_G + 0.5;
        for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
            acc += c / (x + i as f64);
        }
        0.5 * (2.0 * PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
    }
}

/// Beta function B(x, y) for positive arguments.
pub fn beta(x: f64, y: f64) -> f64 {
    if x + y < 100.0 {
        gamma(x) * gamma(y) / gamma(x + y)
    } else {
        (ln_gamma(x) + ln_gamma(y) - ln_gamma(x + y)).exp()
    }
}

/// Scaled upper incomplete gamma `e^x Γ(a, x)` for `a ∈ (-1, 2]`, `x > 0`.
///
/// Negative shapes go through `Γ(a, x) = (Γ(a + 1, x) - x^a e^{-x}) / a`, so the
/// small-`x` branch only ever sees `a ∈ [0, 2]`. Large `x` uses the Legendre
/// continued fraction directly, which is valid for any real `a`.
pub fn upper_gamma_scaled(a: f64, x: f64) -> f64 {
    debug_assert!(x > 0.0, "upper_gamma_scaled needs x > 0, got {x}");
    if x >= 1.5 {
        return x.powf(a) * upper_gamma_cf(a, x);
    }
    if a < 0.0 {
        return (upper_gamma_scaled(a + 1.0, x) - x.powf(a)) / a;
    }
    x.exp() * upper_gamma_series(a, x)
}

// Γ(a, x) for a ∈ [0, 2], 0 < x < 1.5:
// Γ(a) - x^a/a written as (Γ(1+a) - x^a)/a with expm1 to survive a → 0,
// followed by the alternating tail of the lower incomplete gamma.
fn upper_gamma_series(a: f64, x: f64) -> f64 {
    let lx = x.ln();
    let head = if a.abs() < 1e-12 {
        -EULER_GAMMA - lx
    } else {
        (ln_gamma(1.0 + a).exp_m1() - (a * lx).exp_m1()) / a
    };
    let mut term = 1.0;
    let mut tail = 0.0;
    for n in 1..200 {
        term *= -x / n as f64;
        let contrib = term / (a + n as f64);
        tail += contrib;
        if contrib.abs() < 1e-17 * tail.abs().max(1e-300) {
            break;
        }
    }
    head - x.powf(a) * tail
}

// Modified Lentz evaluation of e^x x^{-a} Γ(a, x).
fn upper_gamma_cf(a: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..500 {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < TINY {
            d = TINY;
        }
        c = b + an / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < 1e-16 {
            break;
        }
    }
    h
}

/// Complementary error function.
pub fn erfc(x: f64) -> f64 {
    if x < 0.0 {
        return 2.0 - erfc(-x);
    }
    if x == 0.0 {
        return 1.0;
    }
    let x2 = x * x;
    if x2 > 745.0 {
        return 0.0;
    }
    (-x2).exp() * upper_gamma_scaled(0.5, x2) / PI.sqrt()
}

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// `½[(h+1)^p - 2h^p + (h-1)^p]` for integer `h >= 0`, accurate at large `h`.
///
/// The direct form cancels badly once `h^p` dwarfs the second difference, so
/// for `h >= 8` the binomial series `h^p Σ_k C(p, 2k) h^{-2k}` is used.
pub fn half_second_difference_pow(h: u64, p: f64) -> f64 {
    if h < 8 {
        let hf = h as f64;
        let left = if h == 0 { 1.0 } else { (hf - 1.0).abs().powf(p) };
        let mid = if h == 0 { 0.0 } else { hf.powf(p) };
        return 0.5 * ((hf + 1.0).powf(p) - 2.0 * mid + left);
    }
    let hf = h as f64;
    let inv2 = 1.0 / (hf * hf);
    let mut coef = 1.0; // C(p, 2k) built incrementally
    let mut pw = 1.0;
    let mut sum = 0.0;
    for k in 1..20 {
        let m = 2 * k;
        coef *= (p - (m - 2) as f64) * (p - (m - 1) as f64) / ((m - 1) as f64 * m as f64);
        pw *= inv2;
        let term = coef * pw;
        sum += term;
        if term.abs() <= 1e-18 * sum.abs() {
            break;
        }
    }
    hf.powf(p) * sum
}
