//! Paired two-sided t-test with the Student-t CDF evaluated through the
//! regularized incomplete beta function (continued fraction).

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub n: usize,
    pub mean_delta: f64,
}

/// Paired t-test of a against b: d = a - b, t = mean(d) / (sd(d) / sqrt(n))
/// with the sample standard deviation (n-1 denominator); two-sided p from the
/// Student-t distribution with n-1 degrees of freedom.
///
/// Degenerate inputs: zero variance with zero mean gives (t = 0, p = 1);
/// zero variance with nonzero mean gives p = 0 by convention (logged), with
/// t clamped to +-1e308.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            context: "paired_t_test".into(),
            expected: a.len().to_string(),
            actual: b.len().to_string(),
        });
    }
    let n = a.len();
    if n < 2 {
        return Err(Error::TooFewPairs(n));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(&x, &y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|&x| (x - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let sd = var.sqrt();

    if sd == 0.0 {
        if mean == 0.0 {
            return Ok(TTest { t: 0.0, p: 1.0, n, mean_delta: mean });
        }
        log::warn!("paired_t_test: zero variance with nonzero mean {mean}; p = 0 by convention");
        return Ok(TTest {
            t: 1e308_f64.copysign(mean),
            p: 0.0,
            n,
            mean_delta: mean,
        });
    }

    let t = mean / (sd / (n as f64).sqrt());
    let p = student_t_two_sided_p(t, (n - 1) as f64);
    Ok(TTest { t, p, n, mean_delta: mean })
}

/// Two-sided tail probability of Student's t with `dof` degrees of freedom:
/// I_x(dof/2, 1/2) at x = dof / (dof + t^2).
pub fn student_t_two_sided_p(t: f64, dof: f64) -> f64 {
    let x = dof / (dof + t * t);
    incomplete_beta_regularized(dof / 2.0, 0.5, x).clamp(0.0, 1.0)
}

/// Regularized incomplete beta I_x(a, b), evaluated by the symmetric
/// continued fraction (modified Lentz), absolute tolerance well below 1e-12.
pub fn incomplete_beta_regularized(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    }
}

/// Continued fraction for the incomplete beta (modified Lentz iteration).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const MAX_ITER: usize = 300;
    const EPS: f64 = 1e-15;
    const TINY: f64 = 1e-300;

    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        // Even step.
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        // Odd step.
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < EPS {
            break;
        }
    }
    h
}

/// Lanczos approximation of ln Gamma (g = 7, 9 coefficients).
pub fn ln_gamma(x: f64) -> f64 {
    const COEFFS: [f64; 8] = [
        676.5203681218851,
        -1259.1392167224028,
        771.32342877765313,
        -176.61502916214059,
        12.507343278686905,
        -0.13857109526572012,
        9.9843695780195716e-6,
        1.5056327351493116e-7,
    ];
    if x < 0.5 {
        // Reflection formula.
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut acc = 0.99999999999980993;
    for (i, &c) in COEFFS.iter().enumerate() {
        acc += c / (x + (i + 1) as f64);
    }
    let t = x + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + acc.ln()
}
