//! Which `(rho, eta)` pairs give a valid joint model for given Hurst exponents.

use mfou::{coherency, validate_params, ModelParams};

fn main() -> mfou::Result<()> {
    let (h1, h2) = (0.1, 0.4);
    println!("H = ({h1}, {h2}); '.' valid, 'x' invalid");
    print!("{:>6}", "rho\\eta");
    let etas: Vec<f64> = (0..=10).map(|k| 0.1 * k as f64 - 0.5).collect();
    for e in &etas {
        print!("{e:>6.1}");
    }
    println!();
    for r in [0.0, 0.3, 0.6, 0.8, 0.9, 0.95] {
        print!("{r:>7.2}");
        for &e in &etas {
            print!("{:>6}", if coherency(h1, h2, r, e) <= 1.0 { "." } else { "x" });
        }
        println!();
    }
    let report = validate_params(&ModelParams::bivariate([1.0, 1.0], [1.0, 1.0], [h1, h2], 0.95, 0.4))?;
    for v in &report.violations {
        println!("{v}");
    }
    Ok(())
}
