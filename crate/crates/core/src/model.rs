//! Probability model of the EMCCD read-out chain.
//!
//! A pixel holding `n` photoelectrons is amplified by the multiplication
//! register into an Erlang-distributed number of counts with mean `n·g`.
//! The output amplifier adds Gaussian read noise around the bias `mu`, and
//! clock-induced charge (CIC) adds, with probability `p_sc`, one spurious
//! electron amplified with mean gain `g_sc`. Dark current is not modeled.
//!
//! The single-photon response (one photoelectron plus read noise) is an
//! exponentially modified Gaussian and is evaluated in closed form, as are
//! all tail probabilities.

use std::f64::consts::{PI, SQRT_2};

use rand::Rng;
use rand_distr::{Distribution, Exp, Gamma};
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::special::{erfc, erfcx, normal_sf};

/// Detector parameters, either simulation truth or fitted estimates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmccdParams {
    /// Mean EM gain, counts per photoelectron.
    pub g: f64,
    /// Mean gain seen by a clock-induced spurious electron.
    pub g_sc: f64,
    /// Probability of one spurious electron per pixel per frame.
    pub p_sc: f64,
    /// Bias level of the read-out, counts.
    pub mu: f64,
    /// Read-noise standard deviation, counts.
    pub sigma: f64,
    /// Analog detection efficiency.
    pub eta0: f64,
}

impl EmccdParams {
    /// Values measured on the reference camera (`eta0` from the analog run).
    pub const REFERENCE: EmccdParams = EmccdParams {
        g: 147.0,
        g_sc: 141.0,
        p_sc: 0.0044,
        mu: 507.9,
        sigma: 24.88,
        eta0: 0.54,
    };

    pub fn validate(&self) -> Result<()> {
        let all = [self.g, self.g_sc, self.p_sc, self.mu, self.sigma, self.eta0];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite detector parameter in {self:?}"
            )));
        }
        if self.g <= 0.0 {
            return Err(Error::invalid(format!("g must be > 0, got {}", self.g)));
        }
        if self.g_sc <= 0.0 {
            return Err(Error::invalid(format!(
                "g_sc must be > 0, got {}",
                self.g_sc
            )));
        }
        if self.sigma <= 0.0 {
            return Err(Error::invalid(format!(
                "sigma must be > 0, got {}",
                self.sigma
            )));
        }
        if !(0.0..1.0).contains(&self.p_sc) {
            return Err(Error::invalid(format!(
                "p_sc must lie in [0, 1), got {}",
                self.p_sc
            )));
        }
        // eta0 = 0 is accepted: it describes a blind channel and makes eta(T) vanish.
        if !(0.0..=1.0).contains(&self.eta0) {
            return Err(Error::invalid(format!(
                "eta0 must lie in [0, 1], got {}",
                self.eta0
            )));
        }
        Ok(())
    }

    /// Lowest threshold for which the single-event approximation holds.
    pub fn validity_threshold(&self) -> f64 {
        self.mu + 2.0 * self.sigma
    }
}

/// Discrimination level applied to the electron counts of a pixel.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Threshold(pub f64);

impl Threshold {
    pub fn new(level: f64) -> Result<Self> {
        if level.is_nan() {
            return Err(Error::invalid("threshold is NaN"));
        }
        Ok(Threshold(level))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// Continuous level equivalent to the strict test `counts > T` on
    /// integer counts obtained by rounding: `round(x) > T ⇔ x ≥ ⌊T⌋ + ½`.
    pub fn quantized_level(self) -> Threshold {
        Threshold(self.0.floor() + 0.5)
    }
}

impl From<f64> for Threshold {
    fn from(v: f64) -> Self {
        Threshold(v)
    }
}

/// Density of the multiplication-register output for `n` photoelectrons.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GainDensity {
    Density(f64),
    /// `n = 0`: all probability sits at `x = 0`.
    PointMassAtZero,
}

impl GainDensity {
    pub fn density(self) -> Option<f64> {
        match self {
            GainDensity::Density(d) => Some(d),
            GainDensity::PointMassAtZero => None,
        }
    }
}

/// Erlang density `x^(n-1) e^(-x/g) / (g^n (n-1)!)` of the EM register output.
pub fn em_gain_pdf(x: f64, n: u32, g: f64) -> Result<GainDensity> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::invalid(format!("gain must be > 0, got {g}")));
    }
    if n == 0 {
        return Ok(GainDensity::PointMassAtZero);
    }
    if x < 0.0 {
        return Ok(GainDensity::Density(0.0));
    }
    if n == 1 {
        return Ok(GainDensity::Density((-x / g).exp() / g));
    }
    if x == 0.0 {
        return Ok(GainDensity::Density(0.0));
    }
    let nf = n as f64;
    let ln = (nf - 1.0) * x.ln() - x / g - nf * g.ln() - ln_gamma(nf);
    Ok(GainDensity::Density(ln.exp()))
}

/// Gaussian read-noise density.
pub fn read_noise_pdf(x: f64, mu: f64, sigma: f64) -> Result<f64> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::invalid(format!("sigma must be > 0, got {sigma}")));
    }
    let z = (x - mu) / sigma;
    Ok((-0.5 * z * z).exp() / (sigma * (2.0 * PI).sqrt()))
}

/// Exponentially modified Gaussian: N(mu, sigma²) convolved with Exp(mean g).
fn emg_pdf(x: f64, mu: f64, sigma: f64, g: f64) -> f64 {
    let u = x - mu;
    let z = (sigma * sigma / g - u) / (sigma * SQRT_2);
    if z > 0.0 {
        // exp(σ²/2g² − u/g)·erfc(z) = exp(−u²/2σ²)·erfcx(z); avoids overflow
        let e = -0.5 * (u / sigma) * (u / sigma);
        0.5 / g * e.exp() * erfcx(z)
    } else {
        let e = 0.5 * (sigma / g) * (sigma / g) - u / g;
        0.5 / g * e.exp() * erfc(z)
    }
}

/// `P(X ≥ t)` for the exponentially modified Gaussian.
fn emg_tail(t: f64, mu: f64, sigma: f64, g: f64) -> f64 {
    let u = t - mu;
    let gauss = normal_sf(u / sigma);
    let z = (sigma * sigma / g - u) / (sigma * SQRT_2);
    let shifted = if z > 0.0 {
        let e = -0.5 * (u / sigma) * (u / sigma);
        0.5 * e.exp() * erfcx(z)
    } else {
        let e = 0.5 * (sigma / g) * (sigma / g) - u / g;
        0.5 * e.exp() * erfc(z)
    };
    (gauss + shifted).clamp(0.0, 1.0)
}

/// Dark-frame density: read noise, plus one CIC electron with probability `p_sc`.
pub fn noise_pdf(x: f64, params: &EmccdParams) -> Result<f64> {
    params.validate()?;
    let rn = read_noise_pdf(x, params.mu, params.sigma)?;
    let cic = emg_pdf(x, params.mu, params.sigma, params.g_sc);
    Ok((1.0 - params.p_sc) * rn + params.p_sc * cic)
}

/// Probability that a dark pixel reads at least `t` counts.
pub fn noise_click_prob(t: Threshold, params: &EmccdParams) -> Result<f64> {
    params.validate()?;
    let t = t.value();
    if t == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    let rn = normal_sf((t - params.mu) / params.sigma);
    let cic = emg_tail(t, params.mu, params.sigma, params.g_sc);
    Ok(((1.0 - params.p_sc) * rn + params.p_sc * cic).clamp(0.0, 1.0))
}

/// Counts density produced by exactly one photoelectron, read noise included.
pub fn single_photon_response_pdf(x: f64, params: &EmccdParams) -> Result<f64> {
    params.validate()?;
    Ok(emg_pdf(x, params.mu, params.sigma, params.g))
}

/// `P₁(x ≥ T)`: probability that a single photoelectron yields at least `T` counts.
pub fn single_photon_tail(t: Threshold, params: &EmccdParams) -> Result<f64> {
    params.validate()?;
    let t = t.value();
    if t == f64::NEG_INFINITY {
        return Ok(1.0);
    }
    if t == f64::INFINITY {
        return Ok(0.0);
    }
    Ok(emg_tail(t, params.mu, params.sigma, params.g))
}

/// Threshold detection efficiency `η(T) = η₀·P₁(x ≥ T)`.
pub fn eta_of_threshold(t: Threshold, params: &EmccdParams) -> Result<f64> {
    Ok(params.eta0 * single_photon_tail(t, params)?)
}

/// Click probability of a pixel that receives a photon with probability
/// `p_ph`, in the single-event regime.
pub fn click_prob(t: Threshold, p_ph: f64, params: &EmccdParams) -> Result<f64> {
    if !(0.0..=1.0).contains(&p_ph) {
        return Err(Error::invalid(format!(
            "p_ph must lie in [0, 1], got {p_ph}"
        )));
    }
    let signal = params.eta0 * p_ph * single_photon_tail(t, params)?;
    Ok((signal + noise_click_prob(t, params)?).clamp(0.0, 1.0))
}

/// Draws the register output for `n` photoelectrons: exactly 0 for `n = 0`,
/// otherwise an Erlang(n, g) variate.
pub fn sample_em_output<R: Rng + ?Sized>(n: u32, g: f64, rng: &mut R) -> Result<f64> {
    if !(g > 0.0 && g.is_finite()) {
        return Err(Error::invalid(format!("gain must be > 0, got {g}")));
    }
    Ok(match n {
        0 => 0.0,
        1 => Exp::new(1.0 / g).expect("positive rate").sample(rng),
        _ => Gamma::new(n as f64, g)
            .expect("positive shape and scale")
            .sample(rng),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const P: EmccdParams = EmccdParams::REFERENCE;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn em_gain_pdf_examples() {
        let d = em_gain_pdf(0.0, 1, 147.0).unwrap().density().unwrap();
        assert!(rel(d, 1.0 / 147.0) < 1e-15);
        assert!((d - 6.8027e-3).abs() < 1e-7);
        assert_eq!(
            em_gain_pdf(-3.0, 2, 10.0).unwrap(),
            GainDensity::Density(0.0)
        );
        let d = em_gain_pdf(147.0, 1, 147.0).unwrap().density().unwrap();
        assert!(rel(d, (-1.0f64).exp() / 147.0) < 1e-15);
        assert_eq!(
            em_gain_pdf(5.0, 0, 10.0).unwrap(),
            GainDensity::PointMassAtZero
        );
        // n = 3: x²e^{-x/g}/(2g³)
        let d = em_gain_pdf(20.0, 3, 10.0).unwrap().density().unwrap();
        assert!(rel(d, 400.0 * (-2.0f64).exp() / 2000.0) < 1e-13);
    }

    #[test]
    fn em_gain_pdf_rejects_bad_gain() {
        assert!(matches!(
            em_gain_pdf(1.0, 1, 0.0),
            Err(Error::InvalidParameter(_))
        ));
        assert!(matches!(
            em_gain_pdf(1.0, 1, -2.0),
            Err(Error::InvalidParameter(_))
        ));
    }

    #[test]
    fn read_noise_pdf_examples() {
        let peak = 1.0 / (24.88 * (2.0 * PI).sqrt());
        assert!(rel(read_noise_pdf(507.9, 507.9, 24.88).unwrap(), peak) < 1e-15);
        assert!((read_noise_pdf(507.9, 507.9, 24.88).unwrap() - 0.016_034_66).abs() < 1e-8);
        assert!(
            rel(
                read_noise_pdf(10.0 + 3.0, 10.0, 3.0).unwrap(),
                (-0.5f64).exp() / (3.0 * (2.0 * PI).sqrt())
            ) < 1e-15
        );
        assert!(read_noise_pdf(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn noise_pdf_without_cic_is_gaussian() {
        let p = EmccdParams { p_sc: 0.0, ..P };
        for x in [300.0, 480.0, 507.9, 560.0, 900.0] {
            assert_eq!(
                noise_pdf(x, &p).unwrap(),
                read_noise_pdf(x, p.mu, p.sigma).unwrap()
            );
        }
    }

    #[test]
    fn noise_pdf_far_tail_decays_with_cic_gain() {
        let a = noise_pdf(1200.0, &P).unwrap();
        let b = noise_pdf(1200.0 + 141.0, &P).unwrap();
        assert!(rel(a / b, std::f64::consts::E) < 1e-6);
    }

    #[test]
    fn noise_click_prob_limits_and_gaussian_tail() {
        assert_eq!(
            noise_click_prob(Threshold(f64::NEG_INFINITY), &P).unwrap(),
            1.0
        );
        assert_eq!(noise_click_prob(Threshold(f64::INFINITY), &P).unwrap(), 0.0);
        assert!((noise_click_prob(Threshold(-1e6), &P).unwrap() - 1.0).abs() < 1e-15);
        let p = EmccdParams { p_sc: 0.0, ..P };
        let v = noise_click_prob(Threshold(p.mu + 2.0 * p.sigma), &p).unwrap();
        assert!((v - 0.022_750_131_948_179).abs() < 1e-14);
        assert!((v - 0.02275).abs() < 1e-5);
    }

    #[test]
    fn single_photon_response_small_sigma_is_shifted_exponential() {
        let p = EmccdParams { sigma: 1e-6, ..P };
        let x = p.mu + p.g * std::f64::consts::LN_2;
        let d = single_photon_response_pdf(x, &p).unwrap();
        assert!(rel(d, 0.5 / p.g) < 1e-8);
        assert!(rel(single_photon_tail(Threshold(p.mu), &p).unwrap(), 1.0) < 1e-8);
    }

    #[test]
    fn single_photon_response_handles_extreme_ratios() {
        // sigma/g tiny and x far below the bias: naive exp·erfc overflows.
        let p = EmccdParams {
            sigma: 50.0,
            g: 0.01,
            ..P
        };
        let d = single_photon_response_pdf(p.mu - 200.0, &p).unwrap();
        assert!(d.is_finite() && d >= 0.0);
        let t = single_photon_tail(Threshold(p.mu - 200.0), &p).unwrap();
        assert!(t.is_finite() && t <= 1.0);
    }

    #[test]
    fn eta_is_eta0_times_tail() {
        for t in [-1e9, 400.0, 560.0, 700.0, 1500.0] {
            let t = Threshold(t);
            assert!(
                rel(
                    eta_of_threshold(t, &P).unwrap(),
                    P.eta0 * single_photon_tail(t, &P).unwrap()
                ) < 1e-15
            );
        }
        assert!((eta_of_threshold(Threshold(-1e9), &P).unwrap() - 0.54).abs() < 1e-15);
        let blind = EmccdParams { eta0: 0.0, ..P };
        assert_eq!(eta_of_threshold(Threshold(560.0), &blind).unwrap(), 0.0);
    }

    #[test]
    fn click_prob_composition() {
        let t = Threshold(560.0);
        assert_eq!(
            click_prob(t, 0.0, &P).unwrap(),
            noise_click_prob(t, &P).unwrap()
        );
        let expected =
            0.54 * 0.1 * single_photon_tail(t, &P).unwrap() + noise_click_prob(t, &P).unwrap();
        assert!(rel(click_prob(t, 0.1, &P).unwrap(), expected) < 1e-15);
        let quiet = EmccdParams { p_sc: 0.0, ..P };
        assert!(click_prob(Threshold(P.mu + 6.0 * P.sigma), 0.0, &quiet).unwrap() < 1e-8);
        assert!(click_prob(t, 1.5, &P).is_err());
    }

    #[test]
    fn sampler_zero_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..100 {
            assert_eq!(sample_em_output(0, 147.0, &mut rng).unwrap(), 0.0);
        }
        let n = 1_000_000;
        let mean: f64 = (0..n)
            .map(|_| sample_em_output(1, 147.0, &mut rng).unwrap())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 147.0).abs() < 0.5, "mean {mean}");

        let xs: Vec<f64> = (0..n)
            .map(|_| sample_em_output(3, 100.0, &mut rng).unwrap())
            .collect();
        let m = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        // Var of the sample variance for Gamma(k, θ): (μ4 − σ⁴)/n with μ4 = 3k(k+2)θ⁴
        let mu4 = 3.0 * 3.0 * 5.0 * 1e8;
        let se = ((mu4 - 9e8) / n as f64).sqrt();
        assert!((var - 3e4).abs() < 3.0 * se, "var {var} se {se}");
        assert!(sample_em_output(1, 0.0, &mut rng).is_err());
    }

    #[test]
    fn params_validation() {
        assert!(P.validate().is_ok());
        assert!(EmccdParams { p_sc: 1.0, ..P }.validate().is_err());
        assert!(EmccdParams { sigma: 0.0, ..P }.validate().is_err());
        assert!(EmccdParams { g: f64::NAN, ..P }.validate().is_err());
        assert!(EmccdParams { eta0: 1.2, ..P }.validate().is_err());
    }
}
