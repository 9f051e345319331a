//! Special functions used by the statistical tests and the EMP integral.
//!
//! Incomplete gamma and beta follow the classic series / continued-fraction
//! split (Lentz's method), accurate to roughly 1e-14 relative in double
//! precision over the ranges exercised here.

use libm::{exp, fabs, lgamma, log};

const EPS: f64 = 1e-15;
const TINY: f64 = 1e-300;
const MAX_ITER: usize = 10_000;

/// Natural logarithm of the gamma function.
pub fn ln_gamma(x: f64) -> f64 {
    lgamma(x)
}

/// Natural logarithm of the beta function B(a, b).
pub fn ln_beta(a: f64, b: f64) -> f64 {
    lgamma(a) + lgamma(b) - lgamma(a + b)
}

/// Regularized lower incomplete gamma P(a, x).
pub fn gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_cont_frac(a, x)
    }
}

/// Regularized upper incomplete gamma Q(a, x) = 1 - P(a, x).
pub fn gamma_q(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    if x < a + 1.0 {
        1.0 - gamma_series(a, x)
    } else {
        gamma_cont_frac(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut del = 1.0 / a;
    let mut sum = del;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        del *= x / ap;
        sum += del;
        if fabs(del) < fabs(sum) * EPS {
            break;
        }
    }
    sum * exp(-x + a * log(x) - lgamma(a))
}

fn gamma_cont_frac(a: f64, x: f64) -> f64 {
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / TINY;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = b + an / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    exp(-x + a * log(x) - lgamma(a)) * h
}

/// Survival function of the chi-square distribution with `df` degrees of freedom.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    gamma_q(df / 2.0, x / 2.0).clamp(0.0, 1.0)
}

/// Regularized incomplete beta I_x(a, b).
pub fn beta_inc(a: f64, b: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = a * log(x) + b * log(1.0 - x) - ln_beta(a, b);
    if x < (a + 1.0) / (a + b + 2.0) {
        exp(ln_front) * beta_cont_frac(a, b, x) / a
    } else {
        1.0 - exp(ln_front) * beta_cont_frac(b, a, 1.0 - x) / b
    }
}

fn beta_cont_frac(a: f64, b: f64, x: f64) -> f64 {
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if fabs(d) < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if fabs(d) < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if fabs(c) < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if fabs(del - 1.0) < EPS {
            break;
        }
    }
    h
}

/// Density of Beta(a, b) at `x`.
pub fn beta_pdf(a: f64, b: f64, x: f64) -> f64 {
    if !(0.0..=1.0).contains(&x) {
        return 0.0;
    }
    if x == 0.0 || x == 1.0 {
        // Boundary density is 0, finite or infinite depending on the shape.
        let edge = if x == 0.0 { a } else { b };
        return if edge > 1.0 {
            0.0
        } else if edge == 1.0 {
            exp(-ln_beta(a, b))
        } else {
            f64::INFINITY
        };
    }
    exp((a - 1.0) * log(x) + (b - 1.0) * log(1.0 - x) - ln_beta(a, b))
}

/// Survival function of the F distribution with (d1, d2) degrees of freedom.
pub fn f_sf(x: f64, d1: f64, d2: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    beta_inc(d2 / 2.0, d1 / 2.0, d2 / (d2 + d1 * x)).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chi_square_reference_points() {
        // Values from standard chi-square tables.
        assert!((chi_square_sf(3.841458820694124, 1.0) - 0.05).abs() < 1e-12);
        assert!((chi_square_sf(5.991464547107979, 2.0) - 0.05).abs() < 1e-12);
        assert!((chi_square_sf(18.307038053275146, 10.0) - 0.05).abs() < 1e-12);
        // df = 2 has the closed form exp(-x/2).
        for &x in &[0.1, 1.0, 7.5, 40.0] {
            assert!((chi_square_sf(x, 2.0) - exp(-x / 2.0)).abs() < 1e-14);
        }
        assert_eq!(chi_square_sf(0.0, 3.0), 1.0);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, b) = 1 - (1-x)^b and I_x(a, 1) = x^a.
        for &x in &[0.05, 0.3, 0.5, 0.93] {
            assert!((beta_inc(1.0, 3.5, x) - (1.0 - libm::pow(1.0 - x, 3.5))).abs() < 1e-13);
            assert!((beta_inc(2.5, 1.0, x) - libm::pow(x, 2.5)).abs() < 1e-13);
        }
        // Symmetry I_x(a, b) = 1 - I_{1-x}(b, a).
        let v = beta_inc(6.0, 14.0, 0.27) + beta_inc(14.0, 6.0, 0.73);
        assert!((v - 1.0).abs() < 1e-13);
    }

    #[test]
    fn f_distribution_reference() {
        // F(2, 10) at 4.102821 has upper tail 0.05.
        assert!((f_sf(4.102821015130399, 2.0, 10.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn beta_density_integrates_to_one() {
        let n = 200_000;
        let mut s = 0.0;
        for i in 0..n {
            let x = (i as f64 + 0.5) / n as f64;
            s += beta_pdf(6.0, 14.0, x);
        }
        assert!((s / n as f64 - 1.0).abs() < 1e-9);
    }
}
