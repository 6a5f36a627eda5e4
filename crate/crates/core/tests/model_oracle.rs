mod common;

use common::{closed_form_disagreement, p1_tail, rel_diff, TRUTH};
use emccd_cal::model::{
    click_prob, eta_of_threshold, noise_click_prob, noise_pdf, read_noise_pdf,
    single_photon_response_pdf, single_photon_tail, EmccdParams, Threshold,
};
use emccd_cal::quad::{integrate, Tolerance};

#[test]
fn closed_forms_match_convolution() {
    let (pdf, tail) = closed_form_disagreement(20, 100, 11);
    assert!(pdf < 1e-9, "density disagreement {pdf:e}");
    assert!(tail < 1e-9, "tail disagreement {tail:e}");
}

#[test]
fn reference_values_at_560() {
    let p = TRUTH;
    let v = p1_tail(560.0, p.g, p.mu, p.sigma);
    let closed = single_photon_tail(Threshold(560.0), &p).unwrap();
    assert!(rel_diff(closed, v) < 1e-9);
    let eta = eta_of_threshold(Threshold(560.0), &p).unwrap();
    assert!(rel_diff(eta, 0.54 * v) < 1e-12);
    let noise = noise_click_prob(Threshold(560.0), &p).unwrap();
    let click = click_prob(Threshold(560.0), 0.1, &p).unwrap();
    assert!(rel_diff(click, 0.54 * 0.1 * v + noise) < 1e-12);
    assert!((read_noise_pdf(507.9, 507.9, 24.88).unwrap() - 0.016034).abs() < 1e-6);
}

fn random_params(i: usize) -> EmccdParams {
    // a fixed low-discrepancy spread over plausible cameras
    let f = |k: f64| ((i as f64 + 1.0) * k).fract();
    EmccdParams {
        g: 20.0 + 480.0 * f(0.618_033_99),
        g_sc: 20.0 + 480.0 * f(0.414_213_56),
        p_sc: 0.05 * f(0.732_050_81),
        mu: 100.0 + 900.0 * f(0.236_067_98),
        sigma: 5.0 + 55.0 * f(0.645_751_31),
        eta0: 0.5,
    }
}

#[test]
fn densities_are_normalised() {
    let tol = Tolerance::default();
    for i in 0..20 {
        let p = random_params(i);
        let lo = p.mu - 40.0 * p.sigma;
        let hi = p.mu + 60.0 * p.g.max(p.g_sc);
        // breaks every σ keep the quadrature from stepping over the peak
        let breaks: Vec<f64> = (-12..=12).map(|k| p.mu + k as f64 * p.sigma).collect();
        for (name, total) in [
            (
                "read noise",
                integrate(
                    |x| read_noise_pdf(x, p.mu, p.sigma).unwrap(),
                    lo,
                    hi,
                    &breaks,
                    tol,
                ),
            ),
            (
                "noise",
                integrate(|x| noise_pdf(x, &p).unwrap(), lo, hi, &breaks, tol),
            ),
            (
                "single photon",
                integrate(
                    |x| single_photon_response_pdf(x, &p).unwrap(),
                    lo,
                    hi,
                    &breaks,
                    tol,
                ),
            ),
        ] {
            assert!(
                (total.value - 1.0).abs() < 1e-9,
                "{name} integrates to {} for {p:?}",
                total.value
            );
        }
    }
}

#[test]
fn single_photon_mean_is_bias_plus_gain() {
    let p = TRUTH;
    let m = integrate(
        |x| x * single_photon_response_pdf(x, &p).unwrap(),
        p.mu - 40.0 * p.sigma,
        p.mu + 80.0 * p.g,
        &[p.mu],
        Tolerance::default(),
    );
    assert!(rel_diff(m.value, p.mu + p.g) < 1e-9);
}

#[test]
fn tails_do_not_increase_with_threshold() {
    for i in 0..20 {
        let p = random_params(i);
        let grid: Vec<f64> = (0..200)
            .map(|k| p.mu - 10.0 * p.sigma + k as f64 * (20.0 * p.sigma + 10.0 * p.g) / 199.0)
            .collect();
        for w in grid.windows(2) {
            let (a, b) = (Threshold(w[0]), Threshold(w[1]));
            assert!(noise_click_prob(b, &p).unwrap() <= noise_click_prob(a, &p).unwrap());
            assert!(single_photon_tail(b, &p).unwrap() <= single_photon_tail(a, &p).unwrap());
        }
    }
}

#[test]
fn efficiency_is_a_scaled_tail() {
    for i in 0..20 {
        let p = random_params(i);
        for t in [p.mu, p.mu + 2.0 * p.sigma, p.mu + p.g] {
            let t = Threshold(t);
            let ratio = eta_of_threshold(t, &p).unwrap() / p.eta0;
            assert_eq!(ratio, single_photon_tail(t, &p).unwrap());
        }
    }
}

#[test]
fn small_read_noise_limit_is_shifted_exponential() {
    let p = EmccdParams {
        sigma: 1e-3,
        ..TRUTH
    };
    let x = p.mu + p.g * std::f64::consts::LN_2;
    let d = single_photon_response_pdf(x, &p).unwrap();
    assert!(rel_diff(d, 0.5 / p.g) < 1e-6);
    // the tail at the bias level falls short of 1 by about σ/(g√(2π))
    assert!((single_photon_tail(Threshold(p.mu), &p).unwrap() - 1.0).abs() < 1e-5);
}
