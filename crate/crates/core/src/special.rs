//! Gamma function, sphere areas, the fractional Hardy constant and kernel
//! tail integrals.

use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};
use crate::quadrature::adaptive_gk;

// Lanczos approximation, g = 7, 9 coefficients.
const LANCZOS_G: f64 = 7.0;
const LANCZOS_COEF: [f64; 9] = [
    0.999_999_999_999_809_93,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_13,
    -176.615_029_162_140_59,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_571_6e-6,
    1.505_632_735_149_311_6e-7,
];

fn lanczos_sum(x: f64) -> f64 {
    // x is the shifted argument (original - 1)
    let mut a = LANCZOS_COEF[0];
    for (i, c) in LANCZOS_COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    a
}

/// Γ(x) for `x > 0`.
pub fn gamma(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::NonPositiveArgument(x));
    }
    Ok(gamma_unchecked(x))
}

fn gamma_unchecked(x: f64) -> f64 {
    if x < 0.5 {
        // reflection: Γ(x)Γ(1-x) = π / sin(πx)
        return PI / ((PI * x).sin() * gamma_unchecked(1.0 - x));
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    let a = lanczos_sum(z);
    // split the power to keep t^(z+1/2) finite for large arguments
    let half = t.powf(0.5 * (z + 0.5));
    (2.0 * PI).sqrt() * half * (half * (-t).exp()) * a
}

/// ln Γ(x) for `x > 0`.
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    if x < 0.5 {
        return (PI / (PI * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let t = z + LANCZOS_G + 0.5;
    0.5 * (2.0 * PI).ln() + (z + 0.5) * t.ln() - t + lanczos_sum(z).ln()
}

/// Surface measure ω_{n-1} = 2π^{n/2}/Γ(n/2) of the unit sphere in ℝⁿ.
///
/// For `n = 1` this is the counting measure of {±1}, i.e. 2.
pub fn sphere_area(n: usize) -> f64 {
    assert!(n >= 1, "dimension must be positive");
    let half = n as f64 / 2.0;
    2.0 * PI.powf(half) / gamma_unchecked(half)
}

/// The prefactor `c(n, α) = 2π^{(n-1)/2} Γ((1+α)/2) / Γ((n+α)/2)` of the
/// pseudo-distance `m_α`, for `α > 1`.
pub fn m_alpha_prefactor(n: usize, alpha: f64) -> Result<f64> {
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(alpha > 1.0) {
        return Err(invalid(format!("alpha must exceed 1 (got {alpha})")));
    }
    Ok(m_prefactor_unchecked(n, alpha))
}

fn m_prefactor_unchecked(n: usize, alpha: f64) -> f64 {
    let nf = n as f64;
    2.0 * PI.powf((nf - 1.0) / 2.0) * (ln_gamma((1.0 + alpha) / 2.0) - ln_gamma((nf + alpha) / 2.0)).exp()
}

/// `∫_{ℝⁿ \ B_R(x)} |x-y|^{-n-2σ} dy = ω_{n-1} R^{-2σ} / (2σ)`.
pub fn tail_integral(n: usize, sigma: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0) {
        return Err(invalid(format!("radius must be positive (got {radius})")));
    }
    if !(sigma > 0.0 && sigma < 1.0) {
        return Err(invalid(format!("sigma must lie in (0, 1) (got {sigma})")));
    }
    Ok(sphere_area(n) * radius.powf(-2.0 * sigma) / (2.0 * sigma))
}

/// The sharp constant of the fractional Hardy inequality on general domains.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HardyConstant {
    pub n: usize,
    pub p: f64,
    pub sigma: f64,
    pub value: f64,
    /// Absolute error estimate of the radial integral times the prefactor.
    pub quadrature_error_estimate: f64,
}

/// The radial integral `∫₀¹ |1 - r^{(2σ-1)/p}|^p (1-r)^{-1-2σ} dr`.
///
/// Evaluated after `s = 1 - r = t^m` with `m = 1/(p - 2σ)`, which turns the
/// `s^{p-1-2σ}` endpoint behaviour into a bounded integrand.
pub fn hardy_radial_integral(p: f64, sigma: f64) -> Result<(f64, f64)> {
    let a = (2.0 * sigma - 1.0) / p;
    let m = 1.0 / (p - 2.0 * sigma);
    let integrand = |t: f64| {
        let s = t.powf(m);
        // (1 - (1-s)^a) / s without cancellation; its limit at 0 is a
        let q = if s == 0.0 { a } else { -(a * (-s).ln_1p()).exp_m1() / s };
        m * q.abs().powf(p)
    };
    let r = adaptive_gk(integrand, 0.0, 1.0, 1e-12, 0.0, 20_000)?;
    Ok((r.value, r.error))
}

/// Compute `C_{n,p,σ}` for `1/2 < σ < p/2` (and `σ < 1`).
pub fn hardy_constant(n: usize, p: f64, sigma: f64) -> Result<HardyConstant> {
    if n == 0 {
        return Err(invalid("dimension must be positive"));
    }
    if !(sigma > 0.5 && sigma < p / 2.0) {
        return Err(Error::OutsideLossSloaneRange { p, sigma });
    }
    if sigma >= 1.0 {
        return Err(invalid(format!("sigma must be below 1 (got {sigma})")));
    }
    let (integral, err) = hardy_radial_integral(p, sigma)?;
    let pref = m_prefactor_unchecked(n, 2.0 * sigma);
    let value = pref * integral;
    let quadrature_error_estimate = pref * err;
    if !(quadrature_error_estimate < 1e-8 * value) {
        return Err(Error::Quadrature(format!(
            "Hardy constant error estimate {quadrature_error_estimate:.3e} too large"
        )));
    }
    Ok(HardyConstant { n, p, sigma, value, quadrature_error_estimate })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gamma_known_values() {
        assert_relative_eq!(gamma(0.5).unwrap(), 1.772_453_850_905_516, max_relative = 1e-14);
        assert_relative_eq!(gamma(1.0).unwrap(), 1.0, max_relative = 1e-14);
        assert_relative_eq!(gamma(2.5).unwrap(), 1.329_340_388_179_137, max_relative = 1e-14);
        assert_relative_eq!(gamma(10.0).unwrap(), 362_880.0, max_relative = 1e-13);
        assert_relative_eq!(gamma(50.0).unwrap(), 6.082_818_640_342_675e62, max_relative = 1e-12);
        assert_relative_eq!(gamma(0.1).unwrap(), 9.513_507_698_668_732, max_relative = 1e-13);
    }

    #[test]
    fn gamma_rejects_nonpositive() {
        assert!(matches!(gamma(0.0), Err(Error::NonPositiveArgument(_))));
        assert!(matches!(gamma(-1.5), Err(Error::NonPositiveArgument(_))));
    }

    #[test]
    fn ln_gamma_agrees_with_gamma() {
        for &x in &[0.2, 0.7, 1.3, 4.5, 20.0] {
            assert_relative_eq!(ln_gamma(x), gamma(x).unwrap().ln(), epsilon = 1e-13);
        }
    }

    #[test]
    fn sphere_areas() {
        assert_relative_eq!(sphere_area(1), 2.0, max_relative = 1e-15);
        assert_relative_eq!(sphere_area(2), 2.0 * PI, max_relative = 1e-14);
        assert_relative_eq!(sphere_area(3), 4.0 * PI, max_relative = 1e-14);
    }

    #[test]
    fn m_prefactor_examples() {
        assert_relative_eq!(m_alpha_prefactor(1, 2.0).unwrap(), 2.0, max_relative = 1e-14);
        let g125 = gamma(1.25).unwrap();
        let expect2 = 2.0 * PI.sqrt() * g125 / gamma(1.75).unwrap();
        assert_relative_eq!(m_alpha_prefactor(2, 1.5).unwrap(), expect2, max_relative = 1e-13);
        let expect3 = 2.0 * PI * g125 / gamma(2.25).unwrap();
        assert_relative_eq!(m_alpha_prefactor(3, 1.5).unwrap(), expect3, max_relative = 1e-13);
        assert!(m_alpha_prefactor(2, 1.0).is_err());
    }

    #[test]
    fn tail_integral_examples() {
        assert_relative_eq!(tail_integral(2, 0.75, 1.0).unwrap(), 4.0 * PI / 3.0, max_relative = 1e-14);
        assert_relative_eq!(
            tail_integral(2, 0.75, 2.0).unwrap(),
            4.0 * PI / 3.0 * 2f64.powf(-1.5),
            max_relative = 1e-14
        );
        assert_relative_eq!(tail_integral(1, 0.25, 1.0).unwrap(), 4.0, max_relative = 1e-14);
    }

    #[test]
    fn hardy_constant_range_checks() {
        assert!(matches!(
            hardy_constant(2, 2.0, 0.4),
            Err(Error::OutsideLossSloaneRange { .. })
        ));
        assert!(matches!(
            hardy_constant(2, 2.0, 1.0),
            Err(Error::OutsideLossSloaneRange { .. })
        ));
    }

    #[test]
    fn hardy_constant_dimension_ratio() {
        // the radial integral does not depend on n, so the ratio is a Γ ratio
        let c1 = hardy_constant(1, 2.0, 0.75).unwrap();
        let c2 = hardy_constant(2, 2.0, 0.75).unwrap();
        let g = |x: f64| gamma(x).unwrap();
        let ratio = (2.0 * PI.sqrt() * g(1.25) / g(1.75)) / (2.0 * g(1.25) / g(1.25));
        assert_relative_eq!(c2.value / c1.value, ratio, max_relative = 1e-13);
    }

    #[test]
    fn hardy_constant_dimension_dependence() {
        // C_{n+1}/C_n = √π Γ((n+2σ)/2)/Γ((n+1+2σ)/2): above 1 for small n, below 1 for n ≥ 7
        for &sigma in &[0.6, 0.75, 0.9] {
            let v: Vec<f64> = (1..=10).map(|n| hardy_constant(n, 2.0, sigma).unwrap().value).collect();
            for n in 1..10 {
                let nf = n as f64;
                let expect = PI.sqrt() * (ln_gamma((nf + 2.0 * sigma) / 2.0) - ln_gamma((nf + 1.0 + 2.0 * sigma) / 2.0)).exp();
                assert_relative_eq!(v[n] / v[n - 1], expect, max_relative = 1e-12);
            }
            assert!(v[0] < v[1] && v[1] < v[2], "sigma {sigma}: {v:?}");
            assert!(v[7] > v[8] && v[8] > v[9], "sigma {sigma}: {v:?}");
        }
    }
}
