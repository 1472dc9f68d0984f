//! Special functions: modified Bessel `I_q`, incomplete gamma, normal CDF.

#[allow(unused_imports)]
use num_traits::Float;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpecialError {
    #[error("series for {what} did not converge within {terms} terms")]
    SeriesBudget { what: &'static str, terms: usize },
    #[error("argument out of domain: {0}")]
    Domain(&'static str),
}

pub fn ln_gamma(x: f64) -> f64 {
    libm::lgamma(x)
}

/// `ln I_q(x)` from the ascending series
/// `I_q(x) = sum_k (x/2)^(2k+q) / (k! Gamma(k+q+1))`, summed in log space.
///
/// Stops when the term ratio says the remaining tail is below `rel_tol`
/// relative to the partial sum. Requires `q > -1` and `x > 0`.
pub fn ln_bessel_i(q: f64, x: f64, rel_tol: f64) -> Result<f64, SpecialError> {
    if !(q > -1.0) {
        return Err(SpecialError::Domain("Bessel order must exceed -1"));
    }
    if !(x > 0.0) || !x.is_finite() {
        return Err(SpecialError::Domain("Bessel argument must be positive and finite"));
    }
    const BUDGET: usize = 100_000;
    let ln_half = (0.5 * x).ln();
    let ln_term = |k: f64| (2.0 * k + q) * ln_half - ln_gamma(k + 1.0) - ln_gamma(k + q + 1.0);
    // the largest term sits near k* where the ratio (x/2)^2 / ((k+1)(k+q+1)) crosses 1
    let y = 0.25 * x * x;
    let k_star = (0.5 * (-(q + 2.0) + ((q + 2.0) * (q + 2.0) - 4.0 * (q + 1.0 - y)).max(0.0).sqrt())).max(0.0).floor();
    let anchor = ln_term(k_star);
    let mut sum = 0.0f64;
    // forward from k* including it
    let mut k = k_star;
    let mut n = 0usize;
    loop {
        let t = (ln_term(k) - anchor).exp();
        sum += t;
        let ratio = y / ((k + 1.0) * (k + q + 1.0));
        // remaining tail is bounded by t * r / (1 - r) once r < 1
        if ratio < 1.0 && t * ratio / (1.0 - ratio) <= rel_tol * sum {
            break;
        }
        k += 1.0;
        n += 1;
        if n > BUDGET {
            return Err(SpecialError::SeriesBudget { what: "Bessel I", terms: BUDGET });
        }
    }
    // backward from k* - 1 down to 0
    let mut k = k_star - 1.0;
    while k >= 0.0 {
        let t = (ln_term(k) - anchor).exp();
        sum += t;
        if t <= rel_tol * 1e-3 * sum {
            break;
        }
        k -= 1.0;
        n += 1;
        if n > BUDGET {
            return Err(SpecialError::SeriesBudget { what: "Bessel I", terms: BUDGET });
        }
    }
    Ok(anchor + sum.ln())
}

pub fn bessel_i(q: f64, x: f64) -> Result<f64, SpecialError> {
    if x == 0.0 {
        return Ok(if q == 0.0 { 1.0 } else { 0.0 });
    }
    Ok(ln_bessel_i(q, x, 1e-15)?.exp())
}

/// Regularized lower incomplete gamma `P(a, x)`.
pub fn gamma_p(a: f64, x: f64) -> Result<f64, SpecialError> {
    Ok(1.0 - gamma_q(a, x)?)
}

/// Regularized upper incomplete gamma `Q(a, x)`.
pub fn gamma_q(a: f64, x: f64) -> Result<f64, SpecialError> {
    if !(a > 0.0) || x < 0.0 {
        return Err(SpecialError::Domain("incomplete gamma needs a > 0, x >= 0"));
    }
    if x == 0.0 {
        return Ok(1.0);
    }
    let ln_pre = a * x.ln() - x - ln_gamma(a);
    if x < a + 1.0 {
        // series for P
        let mut term = 1.0 / a;
        let mut sum = term;
        let mut ap = a;
        for _ in 0..10_000 {
            ap += 1.0;
            term *= x / ap;
            sum += term;
            if term.abs() < sum.abs() * 1e-16 {
                return Ok((1.0 - sum * ln_pre.exp()).clamp(0.0, 1.0));
            }
        }
        Err(SpecialError::SeriesBudget { what: "incomplete gamma series", terms: 10_000 })
    } else {
        // modified Lentz continued fraction for Q
        let tiny = 1e-300;
        let mut b = x + 1.0 - a;
        let mut c = 1.0 / tiny;
        let mut d = 1.0 / b;
        let mut h = d;
        for i in 1..10_000 {
            let an = -(i as f64) * (i as f64 - a);
            b += 2.0;
            d = an * d + b;
            if d.abs() < tiny {
                d = tiny;
            }
            c = b + an / c;
            if c.abs() < tiny {
                c = tiny;
            }
            d = 1.0 / d;
            let del = d * c;
            h *= del;
            if (del - 1.0).abs() < 1e-16 {
                return Ok((ln_pre.exp() * h).clamp(0.0, 1.0));
            }
        }
        Err(SpecialError::SeriesBudget { what: "incomplete gamma fraction", terms: 10_000 })
    }
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / core::f64::consts::SQRT_2)
}

/// Upper tail probability of a chi-square variable with `dof` degrees of freedom.
pub fn chi2_sf(stat: f64, dof: f64) -> Result<f64, SpecialError> {
    gamma_q(0.5 * dof, 0.5 * stat.max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bessel_half_order_closed_form() {
        // I_{1/2}(x) = sqrt(2 / (pi x)) sinh x
        for &x in &[0.1, 1.0, 5.0, 30.0, 200.0] {
            let exact_ln = (2.0 / (core::f64::consts::PI * x)).sqrt().ln() + libm::log(libm::sinh(x.min(700.0)));
            let got = ln_bessel_i(0.5, x, 1e-14).unwrap();
            assert!((got - exact_ln).abs() < 1e-11 * exact_ln.abs().max(1.0), "x={x}: {got} vs {exact_ln}");
        }
    }

    #[test]
    fn bessel_i1_reference_values() {
        // I_1(1) and I_1(2) from tables
        assert!((bessel_i(1.0, 1.0).unwrap() - 0.565_159_103_992_485).abs() < 1e-13);
        assert!((bessel_i(1.0, 2.0).unwrap() - 1.590_636_854_637_329).abs() < 1e-12);
        assert!((bessel_i(0.0, 1.0).unwrap() - 1.266_065_877_752_008_4).abs() < 1e-13);
    }

    #[test]
    fn bessel_domain_errors() {
        assert!(ln_bessel_i(-1.5, 1.0, 1e-12).is_err());
        assert!(ln_bessel_i(1.0, -1.0, 1e-12).is_err());
    }

    #[test]
    fn incomplete_gamma_matches_exponential() {
        // a = 1: Q(1, x) = e^{-x}
        for &x in &[0.1, 1.0, 3.0, 20.0] {
            assert!((gamma_q(1.0, x).unwrap() - (-x).exp()).abs() < 1e-14);
        }
    }

    #[test]
    fn chi2_two_dof() {
        // chi-square with 2 dof: sf(x) = exp(-x/2)
        assert!((chi2_sf(4.0, 2.0).unwrap() - (-2.0f64).exp()).abs() < 1e-14);
    }

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((normal_cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-12);
    }
}
