//! Error-function helpers used by the closed-form densities.

use std::f64::consts::PI;

/// Complementary error function (musl implementation, about 1 ulp).
pub fn erfc(x: f64) -> f64 {
    libm::erfc(x)
}

/// Scaled complementary error function, `exp(z²)·erfc(z)`.
///
/// Finite for every finite `z >= 0`; for large positive `z` the asymptotic
/// series is used since `exp(z²)` overflows past `z ≈ 26.6`.
pub fn erfcx(z: f64) -> f64 {
    if z < 26.0 {
        return (z * z).exp() * erfc(z);
    }
    // exp(z²)erfc(z) ~ 1/(z√π) · Σ (-1)^k (2k-1)!! / (2z²)^k
    let inv2z2 = 1.0 / (2.0 * z * z);
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..8 {
        term *= -((2 * k - 1) as f64) * inv2z2;
        sum += term;
    }
    sum / (z * PI.sqrt())
}

/// Upper tail of the standard normal, `P(Z > w)`.
pub fn normal_sf(w: f64) -> f64 {
    0.5 * erfc(w / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn erfcx_is_continuous_at_switch() {
        let below = (25.999_999_f64).powi(2).exp() * erfc(25.999_999);
        let above = erfcx(26.0);
        assert!((below - above).abs() / above < 1e-6);
    }

    #[test]
    fn erfcx_small_arguments() {
        assert!((erfcx(0.0) - 1.0).abs() < 1e-15);
        // exp(1)·erfc(1)
        assert!((erfcx(1.0) - 0.427_583_576_155_807).abs() < 1e-14);
    }

    #[test]
    fn erfcx_large_argument_matches_leading_order() {
        let z = 1e6;
        assert!((erfcx(z) * z * PI.sqrt() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn normal_sf_two_sigma() {
        assert!((normal_sf(2.0) - 0.022_750_131_948_179_2).abs() < 1e-15);
    }
}
